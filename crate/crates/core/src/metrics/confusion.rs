use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How abstained samples enter F1 and accuracy. Coverage always counts them
/// as not correctly classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstentionPolicy {
    /// Abstained samples are removed before scoring.
    #[default]
    Exclude,
    /// Abstained samples are misses: false negatives for their true class,
    /// incorrect for accuracy. Never false positives.
    CountAsMiss,
}

/// Counts by true class (rows) and predicted class (columns), with
/// abstentions tallied per true class outside the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    pub abstained: Vec<usize>,
}

/// One evaluated sample: true class and prediction (`None` = abstained).
pub type Outcome = (usize, Option<usize>);

pub fn confusion(outcomes: &[Outcome], n_classes: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix {
        counts: vec![vec![0; n_classes]; n_classes],
        abstained: vec![0; n_classes],
    };
    for (i, &(t, p)) in outcomes.iter().enumerate() {
        let out_of_range = t >= n_classes || p.is_some_and(|p| p >= n_classes);
        if out_of_range {
            return Err(Error::Data(format!("decision {i}: class index out of range")));
        }
        match p {
            Some(p) => m.counts[t][p] += 1,
            None => m.abstained[t] += 1,
        }
    }
    Ok(m)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall, F1 and support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.abstained.iter().sum::<usize>()
    }

    pub fn correct(&self) -> usize {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    fn tp_fp_fn(&self, c: usize, policy: AbstentionPolicy) -> (usize, usize, usize) {
        let tp = self.counts[c][c];
        let fp = (0..self.n_classes()).map(|r| self.counts[r][c]).sum::<usize>() - tp;
        let mut fneg = self.counts[c].iter().sum::<usize>() - tp;
        if policy == AbstentionPolicy::CountAsMiss {
            fneg += self.abstained[c];
        }
        (tp, fp, fneg)
    }

    /// `F1 = 2TP / (2TP + FP + FN)`, and 0 when the class has no true
    /// positives (including the empty 0/0 case).
    pub fn class_scores(&self, policy: AbstentionPolicy) -> Vec<ClassScore> {
        (0..self.n_classes())
            .map(|c| {
                let (tp, fp, fneg) = self.tp_fp_fn(c, policy);
                ClassScore {
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fneg),
                    f1: ratio(2 * tp, 2 * tp + fp + fneg),
                    support: tp + fneg,
                }
            })
            .collect()
    }

    /// Unweighted mean of per-class F1 over all classes.
    pub fn macro_f1(&self, policy: AbstentionPolicy) -> f64 {
        let s = self.class_scores(policy);
        if s.is_empty() {
            return 0.0;
        }
        s.iter().map(|c| c.f1).sum::<f64>() / s.len() as f64
    }

    /// Support-weighted mean of per-class F1.
    pub fn weighted_f1(&self, policy: AbstentionPolicy) -> f64 {
        let s = self.class_scores(policy);
        let total: usize = s.iter().map(|c| c.support).sum();
        if total == 0 {
            return 0.0;
        }
        s.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64
    }

    pub fn accuracy(&self, policy: AbstentionPolicy) -> f64 {
        let graded: usize = self.counts.iter().flatten().sum();
        let den = match policy {
            AbstentionPolicy::Exclude => graded,
            AbstentionPolicy::CountAsMiss => self.total(),
        };
        ratio(self.correct(), den)
    }

    /// `(overall, relevant)`: correctly classified samples over all samples,
    /// and the same restricted to true classes other than `background`.
    pub fn coverage(&self, background: Option<usize>) -> (f64, f64) {
        let overall = ratio(self.correct(), self.total());
        let relevant: Vec<usize> = (0..self.n_classes()).filter(|&c| Some(c) != background).collect();
        let rel_correct: usize = relevant.iter().map(|&c| self.counts[c][c]).sum();
        let rel_total: usize = relevant
            .iter()
            .map(|&c| self.counts[c].iter().sum::<usize>() + self.abstained[c])
            .sum();
        (overall, ratio(rel_correct, rel_total))
    }

    pub fn abstain_rate(&self) -> f64 {
        ratio(self.abstained.iter().sum(), self.total())
    }
}
