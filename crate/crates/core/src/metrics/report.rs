use std::path::Path;

use serde::{Deserialize, Serialize};

use super::confusion::{confusion, AbstentionPolicy, ClassScore, ConfusionMatrix, Outcome};
use crate::classes::ClassSet;
use crate::confidence::{DecisionRow, ABSTAIN};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScores {
    pub policy: AbstentionPolicy,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
}

impl PolicyScores {
    fn new(m: &ConfusionMatrix, policy: AbstentionPolicy) -> Self {
        PolicyScores {
            policy,
            macro_f1: m.macro_f1(policy),
            accuracy: m.accuracy(policy),
            weighted_f1: m.weighted_f1(policy),
            per_class: m.class_scores(policy),
        }
    }
}

/// Full evaluation of one decision set, ready for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classes: Vec<String>,
    pub background: Option<String>,
    pub samples: usize,
    pub abstained: usize,
    pub overall_coverage: f64,
    pub relevant_coverage: f64,
    /// Default scores: abstained samples removed from F1 and accuracy.
    pub scores: PolicyScores,
    /// Abstained samples counted as misses.
    pub scores_abstain_as_miss: PolicyScores,
    pub confusion: ConfusionMatrix,
}

/// Converts decision rows to class-index outcomes.
pub fn outcomes_from_rows(rows: &[DecisionRow], classes: &ClassSet) -> Result<Vec<Outcome>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let id = |name: &str| {
                classes
                    .id(name)
                    .ok_or_else(|| Error::Data(format!("decision {i}: unknown class `{name}`")))
            };
            let t = id(&r.true_label)?;
            let p = if r.predicted == ABSTAIN {
                None
            } else {
                Some(id(&r.predicted)?)
            };
            Ok((t, p))
        })
        .collect()
}

pub fn evaluate(outcomes: &[Outcome], classes: &ClassSet) -> Result<EvaluationReport> {
    let m = confusion(outcomes, classes.len())?;
    let bg = classes.background();
    let (overall, relevant) = m.coverage(bg);
    Ok(EvaluationReport {
        classes: classes.names().to_vec(),
        background: bg.map(|b| classes.name(b).to_string()),
        samples: m.total(),
        abstained: m.abstained.iter().sum(),
        overall_coverage: overall,
        relevant_coverage: relevant,
        scores: PolicyScores::new(&m, AbstentionPolicy::Exclude),
        scores_abstain_as_miss: PolicyScores::new(&m, AbstentionPolicy::CountAsMiss),
        confusion: m,
    })
}

impl EvaluationReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Confusion matrix with an extra abstention column.
    pub fn save_confusion_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        header.push(ABSTAIN.into());
        w.write_record(&header)?;
        for (c, row) in self.confusion.counts.iter().enumerate() {
            let mut rec = vec![self.classes[c].clone()];
            rec.extend(row.iter().map(usize::to_string));
            rec.push(self.confusion.abstained[c].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Heatmap-ready confusion matrix: axis labels, raw counts (last
    /// column = abstained) and row-normalized rates.
    pub fn confusion_plot(&self) -> serde_json::Value {
        let mut x = self.classes.clone();
        x.push(ABSTAIN.into());
        let counts: Vec<Vec<usize>> = self
            .confusion
            .counts
            .iter()
            .zip(&self.confusion.abstained)
            .map(|(row, &a)| row.iter().copied().chain([a]).collect())
            .collect();
        let rates: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
            })
            .collect();
        serde_json::json!({ "x": x, "y": self.classes, "counts": counts, "rates": rates })
    }

    pub fn save_confusion_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.confusion_plot())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_from_rows() {
        let classes = ClassSet::new(["Video", "Background"]).unwrap();
        let row = |t: &str, p: &str| DecisionRow {
            session_id: "s".into(),
            true_label: t.into(),
            predicted: p.into(),
            score: 0.0,
            component: None,
        };
        let rows = vec![
            row("Video", "Video"),
            row("Video", ABSTAIN),
            row("Background", "Background"),
            row("Background", "Video"),
        ];
        let o = outcomes_from_rows(&rows, &classes).unwrap();
        let r = evaluate(&o, &classes).unwrap();
        assert_eq!(r.samples, 4);
        assert_eq!(r.abstained, 1);
        assert_eq!(r.overall_coverage, 0.5);
        assert_eq!(r.relevant_coverage, 0.5);
        assert_eq!(r.background.as_deref(), Some("Background"));
        assert!(r.scores.macro_f1 > r.scores_abstain_as_miss.macro_f1);

        let dir = tempfile::tempdir().unwrap();
        r.save_confusion_csv(dir.path().join("c.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
        assert_eq!(text.lines().nth(1), Some("Video,1,0,1"));
        let plot = r.confusion_plot();
        assert_eq!(plot["counts"][1], serde_json::json!([1, 1, 0]));
        assert_eq!(plot["rates"][0], serde_json::json!([0.5, 0.0, 0.5]));

        let bad = vec![row("Nope", "Video")];
        assert!(outcomes_from_rows(&bad, &classes).is_err());
    }
}
