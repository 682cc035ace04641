//! Cluster labeling, percentile calibration and the two abstaining
//! classifiers.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::gmm::GmmModel;
use crate::{Error, Result};

/// Outcome for one sample. `predicted = None` means the sample abstained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub predicted: Option<usize>,
    /// Mixture log-likelihood (GMM path) or top softmax probability.
    pub score: f64,
    /// Most probable mixture component (GMM path only).
    pub component: Option<usize>,
}

impl Decision {
    pub fn abstained(&self) -> bool {
        self.predicted.is_none()
    }
}

/// Composition of one mixture component over the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComposition {
    pub component: usize,
    pub label: usize,
    pub size: usize,
    /// Training samples per true class, in class order.
    pub counts: Vec<usize>,
    /// Share of the majority label (0 for an empty cluster).
    pub purity: f64,
    /// Set when the label was inherited from the nearest non-empty cluster.
    pub inherited: bool,
}

/// Labels every component with the majority true class of the training
/// vectors hard-assigned to it (highest posterior). Ties go to the lowest
/// class index; empty clusters take the label of the nearest non-empty
/// cluster by mean distance.
pub fn assign_cluster_labels(
    model: &mut GmmModel,
    xs: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<ClusterComposition>> {
    if xs.len() != labels.len() {
        return Err(Error::Shape {
            expected: xs.len(),
            got: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Data(format!("label {l} out of range for {n_classes} classes")));
    }
    let k = model.k();
    let mut counts = vec![vec![0usize; n_classes]; k];
    for ((_, comp), &y) in model.score_batch(xs)?.into_iter().zip(labels) {
        counts[comp][y] += 1;
    }
    let mut report: Vec<ClusterComposition> = counts
        .into_iter()
        .enumerate()
        .map(|(c, counts)| {
            let size: usize = counts.iter().sum();
            let best = counts.iter().copied().max().unwrap_or(0);
            let label = counts.iter().position(|&n| n == best).unwrap_or(0);
            if size > 0 && counts.iter().filter(|&&n| n == best).count() > 1 {
                warn!("cluster {c}: tie for majority label; using the first class in class order");
            }
            ClusterComposition {
                component: c,
                label,
                size,
                purity: if size > 0 { best as f64 / size as f64 } else { 0.0 },
                counts,
                inherited: false,
            }
        })
        .collect();

    let filled: Vec<usize> = (0..k).filter(|&c| report[c].size > 0).collect();
    for c in 0..k {
        if report[c].size > 0 {
            continue;
        }
        let dist = |o: usize| -> f64 {
            model.means[c]
                .iter()
                .zip(&model.means[o])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let nearest = filled
            .iter()
            .copied()
            .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
            .ok_or_else(|| Error::Data("no training vectors to label clusters with".into()))?;
        warn!("cluster {c} received no training samples; labeling it like cluster {nearest}");
        report[c].label = report[nearest].label;
        report[c].inherited = true;
    }
    let labels: Vec<usize> = report.iter().map(|r| r.label).collect();
    // expected when there are more components than classes
    let shared = labels.iter().enumerate().filter(|(i, l)| labels[..*i].contains(l)).count();
    if shared > 0 && labels.len() <= n_classes {
        warn!("{shared} clusters share a class label with another cluster");
    } else if shared > 0 {
        debug!("{shared} clusters share a class label with another cluster");
    }
    model.cluster_labels = Some(labels);
    Ok(report)
}

/// Log-likelihood cutoff at percentile `p` of the training scores.
///
/// With `m = floor(p * N / 100)`, the threshold is the `m`-th smallest
/// score (0-based), so exactly `m` training samples fall strictly below it
/// when scores are distinct. `p = 100` places it just above the maximum.
pub fn percentile_threshold(train_logliks: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Config(format!("percentile must be in [0, 100], got {p}")));
    }
    if train_logliks.is_empty() {
        return Err(Error::Data("no training log-likelihoods to calibrate on".into()));
    }
    let mut sorted = train_logliks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = ((p * n as f64) / 100.0).floor() as usize;
    Ok(if m >= n {
        next_up(sorted[n - 1])
    } else {
        sorted[m]
    })
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

/// Sets the model threshold from its stored training log-likelihoods.
pub fn calibrate_threshold(model: &mut GmmModel, p: f64) -> Result<f64> {
    let t = percentile_threshold(&model.train_logliks, p)?;
    model.threshold = Some(t);
    model.percentile = Some(p);
    Ok(t)
}

/// Abstains when the log-likelihood is below the model threshold (a missing
/// threshold never abstains); otherwise predicts the label of the most
/// probable component.
pub fn classify_gmm(model: &GmmModel, x: &[f64]) -> Result<Decision> {
    let (ll, comp) = model.score(x)?;
    decide_gmm(model, ll, comp, model.threshold.unwrap_or(f64::NEG_INFINITY))
}

pub(crate) fn decide_gmm(model: &GmmModel, ll: f64, comp: usize, threshold: f64) -> Result<Decision> {
    let labels = model
        .cluster_labels
        .as_ref()
        .ok_or_else(|| Error::Config("mixture clusters are not labeled yet".into()))?;
    Ok(Decision {
        predicted: (ll >= threshold).then_some(labels[comp]),
        score: ll,
        component: Some(comp),
    })
}

/// Batch GMM classification under an explicit threshold.
pub fn classify_gmm_batch(model: &GmmModel, xs: &[Vec<f64>], threshold: f64) -> Result<Vec<Decision>> {
    model
        .score_batch(xs)?
        .into_iter()
        .map(|(ll, comp)| decide_gmm(model, ll, comp, threshold))
        .collect()
}

/// Abstains when the top probability is below `t`; ties go to the lowest
/// class index.
pub fn classify_softmax(probs: &[f64], t: f64) -> Decision {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    let top = probs.get(best).copied().unwrap_or(0.0);
    Decision {
        predicted: (!probs.is_empty() && top >= t).then_some(best),
        score: top,
        component: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::gmm::FitInfo;

    fn two_cluster_model() -> GmmModel {
        GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0, 0.0], vec![5.0, 5.0]],
            covariances: vec![vec![1.0, 0.0, 0.0, 1.0]; 2],
            cluster_labels: None,
            threshold: None,
            percentile: None,
            fit: FitInfo::default(),
            train_logliks: vec![],
        }
    }

    #[test]
    fn majority_label_wins() {
        let mut m = two_cluster_model();
        let mut xs = vec![vec![0.1, 0.0]; 100];
        let mut ys = vec![0; 99];
        ys.push(1);
        xs.push(vec![5.0, 5.1]);
        ys.push(1);
        let rep = assign_cluster_labels(&mut m, &xs, &ys, 2).unwrap();
        assert_eq!(m.cluster_labels, Some(vec![0, 1]));
        assert_eq!(rep[0].counts, vec![99, 1]);
        assert!((rep[0].purity - 0.99).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_first_class_and_empty_cluster_inherits() {
        let mut m = two_cluster_model();
        let xs = vec![vec![0.0, 0.0]; 10];
        let ys = vec![1, 2, 1, 2, 1, 2, 1, 2, 1, 2];
        let rep = assign_cluster_labels(&mut m, &xs, &ys, 3).unwrap();
        assert_eq!(rep[0].label, 1);
        assert!(rep[1].inherited);
        assert_eq!(m.cluster_labels, Some(vec![1, 1]));
    }

    #[test]
    fn percentile_counting_convention() {
        let ll: Vec<f64> = (1..=100).map(f64::from).rev().collect();
        let t = percentile_threshold(&ll, 10.0).unwrap();
        assert_eq!(ll.iter().filter(|&&v| v < t).count(), 10);
        let t0 = percentile_threshold(&ll, 0.0).unwrap();
        assert_eq!(t0, 1.0);
        let t100 = percentile_threshold(&ll, 100.0).unwrap();
        assert_eq!(ll.iter().filter(|&&v| v < t100).count(), 100);
        assert!(percentile_threshold(&ll, 100.5).is_err());
        assert!(percentile_threshold(&ll, -0.5).is_err());
    }

    #[test]
    fn gmm_decisions_follow_threshold() {
        let mut m = two_cluster_model();
        m.cluster_labels = Some(vec![3, 7]);
        let d = classify_gmm(&m, &[5.0, 5.0]).unwrap();
        assert_eq!(d.predicted, Some(7));
        m.threshold = Some(d.score + 1e-9);
        assert!(classify_gmm(&m, &[5.0, 5.0]).unwrap().abstained());
    }

    #[test]
    fn softmax_decisions() {
        let mut p = vec![0.97];
        p.extend([0.01 / 3.0; 9].iter().map(|v| v * 1.0));
        assert_eq!(classify_softmax(&p, 0.9).predicted, Some(0));
        assert!(classify_softmax(&[0.1; 10], 0.4).abstained());
        assert_eq!(classify_softmax(&[0.5, 0.5], 0.5).predicted, Some(0));
    }
}
