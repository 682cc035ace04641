use std::path::Path;

use serde::{Deserialize, Serialize};

use super::confusion::{confusion, AbstentionPolicy, ConfusionMatrix, Outcome};
use crate::{Error, Result};

/// Softmax-confidence thresholds: 0.40 to 0.95 in steps of 0.05, plus 0.99.
pub fn softmax_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (8..=19).map(|k| k as f64 * 5.0 / 100.0).collect();
    g.push(0.99);
    g
}

/// Log-likelihood percentiles: 0 to 10 in steps of 0.5.
pub fn percentile_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 2.0).collect()
}

/// Parses a grid: `softmax`, `percentile`, `start:stop:step` (inclusive),
/// or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let bad = || Error::Config(format!("bad grid `{spec}`"));
    let grid = match spec {
        "softmax" => softmax_grid(),
        "percentile" => percentile_grid(),
        s if s.contains(':') => {
            let parts: Vec<f64> = s
                .split(':')
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let [start, stop, step] = parts[..] else {
                return Err(bad());
            };
            if !(step > 0.0) || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        s => s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?,
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

/// Metrics at one threshold. The unsuffixed F1 and accuracy columns remove
/// abstained samples; `*_miss` columns count them as misses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub overall_coverage: f64,
    pub relevant_coverage: f64,
    pub abstain_rate: f64,
    pub macro_f1_miss: f64,
    pub accuracy_miss: f64,
    pub weighted_f1_miss: f64,
}

impl SweepRow {
    pub fn from_matrix(threshold: f64, m: &ConfusionMatrix, background: Option<usize>) -> Self {
        use AbstentionPolicy::*;
        let (overall, relevant) = m.coverage(background);
        SweepRow {
            threshold,
            macro_f1: m.macro_f1(Exclude),
            accuracy: m.accuracy(Exclude),
            weighted_f1: m.weighted_f1(Exclude),
            overall_coverage: overall,
            relevant_coverage: relevant,
            abstain_rate: m.abstain_rate(),
            macro_f1_miss: m.macro_f1(CountAsMiss),
            accuracy_miss: m.accuracy(CountAsMiss),
            weighted_f1_miss: m.weighted_f1(CountAsMiss),
        }
    }
}

/// Evaluates `decide` at every grid point, in grid order.
pub fn sweep<F>(decide: F, grid: &[f64], n_classes: usize, background: Option<usize>) -> Result<Vec<SweepRow>>
where
    F: Fn(f64) -> Result<Vec<Outcome>> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let row = |&t: &f64| -> Result<SweepRow> {
        let m = confusion(&decide(t)?, n_classes)?;
        Ok(SweepRow::from_matrix(t, &m, background))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.par_iter().map(row).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.iter().map(row).collect()
    }
}

/// Highest relevant coverage among rows whose macro F1 reaches `min_f1`
/// (0 when none does).
pub fn relevant_coverage_at_f1(rows: &[SweepRow], min_f1: f64) -> f64 {
    rows.iter()
        .filter(|r| r.macro_f1 >= min_f1)
        .map(|r| r.relevant_coverage)
        .fold(0.0, f64::max)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
