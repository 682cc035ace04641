//! Labeled feature sets and their CSV form.
//!
//! Columns: `label,session_id,flow_id,<values...>`. Time-series values are
//! flattened row by row as `t0,s0,t1,s1,...`; size sequences are `z0..z255`.
//! `flow_id` is the source flow's line index in its flows file, or empty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extract::{extract_size_sequence, extract_timeseries, SIZE_SEQ_LEN, TS_LEN};
use crate::ingest::Flow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[serde(rename = "timeseries")]
    TimeSeries,
    #[serde(rename = "sizeseq")]
    SizeSequence,
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::TimeSeries => TS_LEN * 2,
            FeatureKind::SizeSequence => SIZE_SEQ_LEN,
        }
    }

    fn column_names(self) -> Vec<String> {
        match self {
            FeatureKind::TimeSeries => (0..TS_LEN)
                .flat_map(|i| [format!("t{i}"), format!("s{i}")])
                .collect(),
            FeatureKind::SizeSequence => (0..SIZE_SEQ_LEN).map(|i| format!("z{i}")).collect(),
        }
    }

    fn from_width(w: usize) -> Option<Self> {
        [FeatureKind::TimeSeries, FeatureKind::SizeSequence]
            .into_iter()
            .find(|k| k.width() == w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: String,
    pub session_id: String,
    pub flow_id: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub kind: FeatureKind,
    pub samples: Vec<Sample>,
}

impl FeatureSet {
    pub fn new(kind: FeatureKind) -> Self {
        FeatureSet {
            kind,
            samples: Vec::new(),
        }
    }

    /// Extracts one sample per flow; `flow_id` is the flow's position in
    /// `flows`. Unlabeled flows are rejected.
    pub fn from_flows(flows: &[Flow], kind: FeatureKind) -> Result<Self> {
        let mut set = FeatureSet::new(kind);
        for (i, f) in flows.iter().enumerate() {
            let label = f
                .label
                .clone()
                .ok_or_else(|| Error::Data(format!("flow {i} (session {}) has no label", f.session_id)))?;
            let values = match kind {
                FeatureKind::TimeSeries => extract_timeseries(f).to_vec(),
                FeatureKind::SizeSequence => extract_size_sequence(f).to_vec(),
            };
            set.samples.push(Sample {
                label,
                session_id: f.session_id.clone(),
                flow_id: Some(i),
                values,
            });
        }
        Ok(set)
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.values.len() != self.kind.width() {
            return Err(Error::Shape {
                expected: self.kind.width(),
                got: sample.values.len(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.label.as_str())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string(), "session_id".into(), "flow_id".into()];
        header.extend(self.kind.column_names());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![
                s.label.clone(),
                s.session_id.clone(),
                s.flow_id.map(|i| i.to_string()).unwrap_or_default(),
            ];
            rec.extend(s.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let width = r.headers()?.len().saturating_sub(3);
        let kind = FeatureKind::from_width(width).ok_or_else(|| {
            Error::Data(format!(
                "{}: {width} value columns match no feature kind",
                path.display()
            ))
        })?;
        let mut set = FeatureSet::new(kind);
        for (n, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = n + 2;
            if rec.len() != width + 3 {
                return Err(Error::Data(format!(
                    "{}: row {row} has {} columns, expected {}",
                    path.display(),
                    rec.len(),
                    width + 3
                )));
            }
            let flow_id = match &rec[2] {
                "" => None,
                s => Some(s.parse().map_err(|_| {
                    Error::Data(format!("{}: row {row}: bad flow_id `{s}`", path.display()))
                })?),
            };
            let values = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("{}: row {row}: {e}", path.display())))?;
            set.push(Sample {
                label: rec[0].to_string(),
                session_id: rec[1].to_string(),
                flow_id,
                values,
            })?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let mut set = FeatureSet::new(FeatureKind::TimeSeries);
        set.push(Sample {
            label: "Video".into(),
            session_id: "v-1".into(),
            flow_id: Some(3),
            values: (0..80).map(|i| i as f64 * 0.1 - 3.3).collect(),
        })
        .unwrap();
        set.push(Sample {
            label: "Chat".into(),
            session_id: "c-1".into(),
            flow_id: None,
            values: vec![1e-7; 80],
        })
        .unwrap();
        set.write_csv(&path).unwrap();
        assert_eq!(FeatureSet::read_csv(&path).unwrap(), set);
    }

    #[test]
    fn wrong_width_rejected() {
        let mut set = FeatureSet::new(FeatureKind::SizeSequence);
        let err = set
            .push(Sample {
                label: "a".into(),
                session_id: "s".into(),
                flow_id: None,
                values: vec![0.0; 80],
            })
            .unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 256, got: 80 }));
    }
}
