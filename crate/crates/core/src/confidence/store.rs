//! The fitted confidence model as one JSON document, and decision CSVs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::centroids::{compute_centroids, similarity_vector, CentroidSet};
use super::decide::{assign_cluster_labels, classify_gmm_batch, ClusterComposition, Decision};
use super::gmm::{fit_gmm, GmmConfig, GmmModel};
use crate::classes::ClassSet;
use crate::encoder::EmbeddingRecord;
use crate::{Error, Result};

pub const ABSTAIN: &str = "ABSTAIN";

/// Everything needed to turn an embedding into a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub classes: Vec<String>,
    pub centroids: CentroidSet,
    pub gmm: GmmModel,
    pub clusters: Vec<ClusterComposition>,
}

impl ConfidenceModel {
    /// Centroids, similarity vectors, EM fit and majority cluster labels on
    /// the training embeddings.
    pub fn fit(train: &[EmbeddingRecord], classes: &ClassSet, cfg: &GmmConfig) -> Result<Self> {
        let centroids = compute_centroids(train, classes)?;
        let xs = similarity_vectors(train, &centroids)?;
        let labels = train
            .iter()
            .map(|r| classes.require_id(&r.label))
            .collect::<Result<Vec<_>>>()?;
        let mut gmm = fit_gmm(&xs, cfg)?;
        let clusters = assign_cluster_labels(&mut gmm, &xs, &labels, classes.len())?;
        Ok(ConfidenceModel {
            classes: classes.names().to_vec(),
            centroids,
            gmm,
            clusters,
        })
    }

    pub fn class_set(&self) -> Result<ClassSet> {
        ClassSet::new(self.classes.iter().cloned())
    }

    pub fn similarities(&self, records: &[EmbeddingRecord]) -> Result<Vec<Vec<f64>>> {
        similarity_vectors(records, &self.centroids)
    }

    /// Decisions under the calibrated threshold (none: never abstain).
    pub fn classify(&self, records: &[EmbeddingRecord]) -> Result<Vec<Decision>> {
        let xs = self.similarities(records)?;
        classify_gmm_batch(&self.gmm, &xs, self.gmm.threshold.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ConfidenceModel = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let g = &self.gmm;
        let (k, d) = (g.k(), g.dim());
        let bad = |what: String| Err(Error::Data(format!("confidence model: {what}")));
        if k == 0 || g.means.len() != k || g.covariances.iter().any(|c| c.len() != d * d) {
            return bad("mixture parameter shapes disagree".into());
        }
        if d != self.classes.len() || self.centroids.len() != d {
            return bad(format!("{} classes but {d}-dimensional mixture", self.classes.len()));
        }
        if (g.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("mixture weights do not sum to 1".into());
        }
        if let Some(l) = &g.cluster_labels {
            if l.len() != k || l.iter().any(|&c| c >= self.classes.len()) {
                return bad("cluster labels out of range".into());
            }
        }
        g.factors().map(|_| ())
    }
}

pub(crate) fn similarity_vectors(records: &[EmbeddingRecord], c: &CentroidSet) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            similarity_vector(&r.values, c).map_err(|e| Error::Data(format!("embedding {i}: {e}")))
        })
        .collect()
}

/// One line of a decisions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub session_id: String,
    pub true_label: String,
    /// Predicted class name, or `ABSTAIN`.
    pub predicted: String,
    pub score: f64,
    pub component: Option<usize>,
}

impl DecisionRow {
    pub fn new(record: &EmbeddingRecord, d: &Decision, classes: &[String]) -> Self {
        DecisionRow {
            session_id: record.session_id.clone(),
            true_label: record.label.clone(),
            predicted: d
                .predicted
                .map_or_else(|| ABSTAIN.to_string(), |c| classes[c].clone()),
            score: d.score,
            component: d.component,
        }
    }

    pub fn abstained(&self) -> bool {
        self.predicted == ABSTAIN
    }
}

pub fn write_decisions(path: impl AsRef<Path>, rows: &[DecisionRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_decisions(path: impl AsRef<Path>) -> Result<Vec<DecisionRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), i + 2)))
        })
        .collect()
}
