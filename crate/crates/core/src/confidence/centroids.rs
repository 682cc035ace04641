use serde::{Deserialize, Serialize};

use crate::classes::ClassSet;
use crate::encoder::{l2_normalize, EmbeddingRecord};
use crate::{Error, Result};

/// Per-class mean of L2-normalized training embeddings, in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub classes: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
}

impl CentroidSet {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

/// Averages the normalized embeddings of each class in `classes`.
pub fn compute_centroids(records: &[EmbeddingRecord], classes: &ClassSet) -> Result<CentroidSet> {
    let dim = records
        .first()
        .map(|r| r.values.len())
        .ok_or_else(|| Error::Data("no training embeddings".into()))?;
    let mut sums = vec![vec![0.0; dim]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for (i, r) in records.iter().enumerate() {
        if r.values.len() != dim {
            return Err(Error::Data(format!(
                "embedding {i} has dimension {}, expected {dim}",
                r.values.len()
            )));
        }
        let c = classes.require_id(&r.label)?;
        let z = l2_normalize(&r.values)
            .map_err(|_| Error::Numerical(format!("embedding {i} has zero norm")))?;
        for (s, v) in sums[c].iter_mut().zip(&z) {
            *s += v;
        }
        counts[c] += 1;
    }
    let mut centroids = Vec::with_capacity(classes.len());
    for (c, (sum, n)) in sums.into_iter().zip(counts).enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass(classes.name(c).to_string()));
        }
        let mean: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
        if mean.iter().all(|&v| v == 0.0) {
            return Err(Error::Numerical(format!(
                "centroid of class `{}` is the zero vector",
                classes.name(c)
            )));
        }
        centroids.push(mean);
    }
    Ok(CentroidSet {
        classes: classes.names().to_vec(),
        centroids,
    })
}

/// Cosine similarity of `e` to every centroid, in class order.
pub fn similarity_vector(e: &[f64], centroids: &CentroidSet) -> Result<Vec<f64>> {
    if e.len() != centroids.dim() {
        return Err(Error::Shape {
            expected: centroids.dim(),
            got: e.len(),
        });
    }
    let en = norm(e);
    if !(en > 0.0 && en.is_finite()) {
        return Err(Error::Numerical("cannot compare a zero-norm embedding".into()));
    }
    centroids
        .centroids
        .iter()
        .zip(&centroids.classes)
        .map(|(c, name)| {
            let cn = norm(c);
            if !(cn > 0.0) {
                return Err(Error::Numerical(format!("centroid `{name}` has zero norm")));
            }
            let cos = e.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / (en * cn);
            Ok(cos.clamp(-1.0, 1.0))
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: &str, values: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            label: label.into(),
            session_id: "s".into(),
            values,
        }
    }

    #[test]
    fn single_embedding_centroid_is_itself() {
        let classes = ClassSet::new(["A"]).unwrap();
        let c = compute_centroids(&[rec("A", vec![0.6, 0.8])], &classes).unwrap();
        assert_eq!(c.centroids[0], vec![0.6, 0.8]);
    }

    #[test]
    fn two_basis_vectors_average() {
        let classes = ClassSet::new(["A"]).unwrap();
        let c = compute_centroids(
            &[rec("A", vec![1.0, 0.0, 0.0]), rec("A", vec![0.0, 1.0, 0.0])],
            &classes,
        )
        .unwrap();
        assert_eq!(c.centroids[0], vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn missing_class_is_named() {
        let classes = ClassSet::new(["A", "Video"]).unwrap();
        let err = compute_centroids(&[rec("A", vec![1.0, 0.0])], &classes).unwrap_err();
        assert!(err.to_string().contains("Video"));
    }

    #[test]
    fn similarity_hand_values() {
        let cs = CentroidSet {
            classes: vec!["A".into(), "B".into()],
            centroids: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]],
        };
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = similarity_vector(&[h, h, 0.0], &cs).unwrap();
        assert!((s[0] - h).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        let s = similarity_vector(&[0.0, 0.0, 5.0], &cs).unwrap();
        assert_eq!(s[1], 1.0);
    }

    #[test]
    fn zero_embedding_is_an_error() {
        let cs = CentroidSet {
            classes: vec!["A".into()],
            centroids: vec![vec![1.0, 0.0]],
        };
        assert!(matches!(similarity_vector(&[0.0, 0.0], &cs), Err(Error::Numerical(_))));
    }
}
