use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::classes::BACKGROUND;
use crate::encoder::{l2_normalize, EmbeddingRecord};
use crate::{Error, Result};

/// Session id given to background outliers.
pub const OUTLIER_SESSION: &str = "outliers";

/// Outliers keep cosine similarity below this to every class mean.
pub const OUTLIER_MAX_COSINE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    /// One unit vector per class.
    pub class_means: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    /// Per-coordinate noise before renormalizing.
    pub sigma: f64,
    pub n_per_class: usize,
    /// Share of background samples replaced by outliers.
    pub outlier_fraction: f64,
}

/// The first `k` standard basis vectors of `R^dim`.
pub fn orthonormal_means(k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i % dim] = 1.0;
            v
        })
        .collect()
}

/// Gaussian blobs on the unit sphere. Outliers are uniform directions
/// rejected until far from every class mean; they carry the background
/// label and the session id [`OUTLIER_SESSION`].
pub fn generate_embeddings(spec: &EmbeddingSpec, seed: u64) -> Result<Vec<EmbeddingRecord>> {
    if spec.class_means.len() != spec.labels.len() || spec.class_means.is_empty() {
        return Err(Error::Config("need one label per class mean".into()));
    }
    if !(spec.sigma >= 0.0) || !(0.0..=1.0).contains(&spec.outlier_fraction) {
        return Err(Error::Config("sigma must be >= 0 and outlier fraction in [0, 1]".into()));
    }
    let dim = spec.class_means[0].len();
    let means = spec
        .class_means
        .iter()
        .map(|m| {
            if m.len() != dim {
                return Err(Error::Config("class means differ in dimension".into()));
            }
            l2_normalize(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.labels.len() * spec.n_per_class);
    for (c, (mean, label)) in means.iter().zip(&spec.labels).enumerate() {
        let n_out = if label == BACKGROUND {
            (spec.outlier_fraction * spec.n_per_class as f64).round() as usize
        } else {
            0
        };
        for i in 0..spec.n_per_class {
            if i >= spec.n_per_class - n_out {
                out.push(EmbeddingRecord {
                    label: label.clone(),
                    session_id: OUTLIER_SESSION.into(),
                    values: outlier(&mut rng, &means, dim)?,
                });
                continue;
            }
            let v: Vec<f64> = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            out.push(EmbeddingRecord {
                label: label.clone(),
                session_id: format!("c{c}"),
                values: l2_normalize(&v).unwrap_or_else(|_| mean.clone()),
            });
        }
    }
    Ok(out)
}

fn outlier(rng: &mut ChaCha8Rng, means: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let Ok(z) = l2_normalize(&v) else { continue };
        let far = means
            .iter()
            .all(|m| m.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() < OUTLIER_MAX_COSINE);
        if far {
            return Ok(z);
        }
    }
    Err(Error::Config("could not place an outlier away from all class means".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64, outliers: f64) -> EmbeddingSpec {
        EmbeddingSpec {
            class_means: orthonormal_means(2, 64),
            labels: vec!["Video".into(), BACKGROUND.into()],
            sigma,
            n_per_class: 50,
            outlier_fraction: outliers,
        }
    }

    #[test]
    fn zero_sigma_reproduces_means() {
        let e = generate_embeddings(&spec(0.0, 0.0), 1).unwrap();
        assert_eq!(e.len(), 100);
        let means = orthonormal_means(2, 64);
        for r in &e {
            let c = usize::from(r.label == BACKGROUND);
            assert_eq!(r.values, means[c]);
        }
    }

    #[test]
    fn outliers_are_far_and_counted() {
        let e = generate_embeddings(&spec(0.05, 0.2), 3).unwrap();
        let out: Vec<_> = e.iter().filter(|r| r.session_id == OUTLIER_SESSION).collect();
        assert_eq!(out.len(), 10);
        for r in out {
            assert_eq!(r.label, BACKGROUND);
            assert!(r.values[0] < OUTLIER_MAX_COSINE && r.values[1] < OUTLIER_MAX_COSINE);
        }
        assert_eq!(e, generate_embeddings(&spec(0.05, 0.2), 3).unwrap());
    }
}
