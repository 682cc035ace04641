//! Model files and embedding CSVs.
//!
//! Model file layout: magic `FCENC\x01`, u64 LE header length, JSON header
//! (architecture, scaling, class names, training record), u64 LE parameter
//! count, then the parameters as f64 LE.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::l2_normalize;
use super::model::{EncoderConfig, EncoderModel, Head, InputScaling, Output};
use super::train::{TrainConfig, TrainReport};
use crate::features::{FeatureKind, FeatureSet};
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"FCENC\x01";

pub const EMBEDDING_DIM: usize = 64;

/// How a saved model was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub init_seed: u64,
    pub config: TrainConfig,
    pub report: TrainReport,
}

/// An encoder together with the metadata needed to use it later.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedEncoder {
    pub model: EncoderModel,
    /// Class names in output-index order.
    pub class_names: Vec<String>,
    pub training: Option<TrainingRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    scaling: InputScaling,
    class_names: Vec<String>,
    training: Option<TrainingRecord>,
}

impl SavedEncoder {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&Header {
            config: self.model.config,
            scaling: self.model.scaling.clone(),
            class_names: self.class_names.clone(),
            training: self.training.clone(),
        })?;
        let mut buf = Vec::with_capacity(32 + header.len() + 8 * self.model.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend((header.len() as u64).to_le_bytes());
        buf.extend(header);
        buf.extend((self.model.params.len() as u64).to_le_bytes());
        for p in &self.model.params {
            buf.extend(p.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
        if bytes.len() < 14 || &bytes[..6] != MAGIC {
            return Err(bad("not an encoder model file"));
        }
        let read_u64 = |at: usize| -> Result<u64> {
            bytes
                .get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| bad("truncated model file"))
        };
        let hlen = read_u64(6)? as usize;
        let hend = 14usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[14..hend])?;
        let count = read_u64(hend)? as usize;
        let body = &bytes[hend + 8..];
        if body.len() != count.saturating_mul(8) {
            return Err(bad("parameter block length does not match its count"));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = EncoderModel::from_parts(header.config, header.scaling, params)?;
        if let Head::Softmax { classes } = model.config.head {
            if header.class_names.len() != classes {
                return Err(bad("class name count does not match the softmax head"));
            }
        }
        Ok(SavedEncoder {
            model,
            class_names: header.class_names,
            training: header.training,
        })
    }
}

/// One labeled embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub label: String,
    pub session_id: String,
    pub values: Vec<f64>,
}

/// Runs the embedding head over every time-series sample, in order, and
/// L2-normalizes the outputs.
pub fn embed_dataset(model: &EncoderModel, features: &FeatureSet) -> Result<Vec<EmbeddingRecord>> {
    if model.config.head != Head::Embedding {
        return Err(Error::Config("embedding requires a model with the embedding head".into()));
    }
    if features.kind != FeatureKind::TimeSeries {
        return Err(Error::Config("the encoder consumes time-series features".into()));
    }
    par_map(&features.samples, |s| {
        let Output::Embedding(e) = model.forward_values(&s.values)? else {
            unreachable!("embedding head checked above")
        };
        Ok(EmbeddingRecord {
            label: s.label.clone(),
            session_id: s.session_id.clone(),
            values: l2_normalize(&e)?,
        })
    })
}

/// Softmax probabilities for every sample, in order.
pub fn predict_proba(model: &EncoderModel, features: &FeatureSet) -> Result<Vec<Vec<f64>>> {
    par_map(&features.samples, |s| match model.forward_values(&s.values)? {
        Output::Probabilities(p) => Ok(p),
        Output::Embedding(_) => Err(Error::Config("model has no softmax head".into())),
    })
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Writes `label,session_id,e0..e{d-1}`.
pub fn write_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    let dim = records.first().map_or(EMBEDDING_DIM, |r| r.values.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string(), "session_id".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in records {
        if r.values.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: r.values.len(),
            });
        }
        let mut rec = vec![r.label.clone(), r.session_id.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a 64-dimensional embeddings CSV, e.g. one exported by an external
/// encoder.
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    read_embeddings(path, Some(EMBEDDING_DIM))
}

/// Reads an embeddings CSV. With `dim = None` the dimension is taken from
/// the header. Rows are numbered from 1 for the header line.
pub fn read_embeddings(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header_dim = r.headers()?.len().saturating_sub(2);
    let dim = dim.unwrap_or(header_dim);
    if dim == 0 {
        return Err(Error::Data(format!("{}: no embedding columns", path.display())));
    }
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = n + 2;
        let got = rec.len().saturating_sub(2);
        if got != dim {
            return Err(Error::Data(format!(
                "{}: row {row} has {got} embedding values, expected {dim}",
                path.display()
            )));
        }
        let values = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(k, s)| match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data(format!(
                    "{}: row {row}, column e{k}: `{s}` is not a finite number",
                    path.display()
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(EmbeddingRecord {
            label: rec[0].to_string(),
            session_id: rec[1].to_string(),
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Sample;

    fn record(i: usize) -> EmbeddingRecord {
        EmbeddingRecord {
            label: if i % 2 == 0 { "Video".into() } else { "Chat".into() },
            session_id: format!("s{i}"),
            values: (0..EMBEDDING_DIM).map(|k| ((i * 31 + k) as f64).sin() / 7.0).collect(),
        }
    }

    #[test]
    fn embeddings_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let recs: Vec<_> = (0..10).map(record).collect();
        write_embeddings(&p, &recs).unwrap();
        assert_eq!(import_embeddings(&p).unwrap(), recs);
    }

    #[test]
    fn short_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let mut text = String::from("label,session_id");
        for k in 0..64 {
            text += &format!(",e{k}");
        }
        text += "\n";
        for row in 0..3 {
            let n = if row == 1 { 63 } else { 64 };
            text += "A,s";
            for _ in 0..n {
                text += ",0.5";
            }
            text += "\n";
        }
        std::fs::write(&p, text).unwrap();
        let err = import_embeddings(&p).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("63"), "{err}");
    }

    #[test]
    fn non_finite_value_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "label,session_id,e0,e1\nA,s,1.0,NaN\n").unwrap();
        let err = read_embeddings(&p, None).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("e1"), "{err}");
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut model = EncoderModel::new(EncoderConfig::softmax(3).with_widths(4, 2, 8), 7).unwrap();
        model.scaling.mean = vec![0.5, -3.0];
        let saved = SavedEncoder {
            model,
            class_names: vec!["A".into(), "B".into(), "C".into()],
            training: Some(TrainingRecord {
                init_seed: 7,
                config: TrainConfig::default(),
                report: TrainReport {
                    loss_curve: vec![1.0, 0.5],
                    ..TrainReport::default()
                },
            }),
        };
        saved.save(&p).unwrap();
        assert_eq!(SavedEncoder::load(&p).unwrap(), saved);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, bytes).unwrap();
        assert!(SavedEncoder::load(&p).is_err());
    }

    #[test]
    fn embed_dataset_is_unit_norm_and_ordered() {
        let model = EncoderModel::new(EncoderConfig::embedding().with_widths(4, 2, 64), 1).unwrap();
        let mut set = FeatureSet::new(FeatureKind::TimeSeries);
        for i in 0..5 {
            set.push(Sample {
                label: format!("L{i}"),
                session_id: "s".into(),
                flow_id: None,
                values: (0..80).map(|k| (k * (i + 1)) as f64 * 0.01).collect(),
            })
            .unwrap();
        }
        let out = embed_dataset(&model, &set).unwrap();
        assert_eq!(out.len(), 5);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.label, format!("L{i}"));
            let n: f64 = r.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
