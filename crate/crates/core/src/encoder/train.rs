use std::collections::BTreeMap;
use std::ops::Range;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, l2_normalize_backward, supcon_with_grad};
use super::model::{EncoderModel, Head, Trace};
use super::optim::{clip_norm, Adam};
use crate::{Error, Result};

/// Samples per gradient chunk. Chunk gradients are summed in chunk order, so
/// results do not depend on how chunks are scheduled across threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SupervisedContrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::CrossEntropy,
            temperature: 0.07,
            batch_size: 64,
            epochs: 20,
            learning_rate: 1e-3,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn contrastive() -> Self {
        TrainConfig {
            loss: LossKind::SupervisedContrastive,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        let min_batch = match self.loss {
            LossKind::CrossEntropy => 1,
            LossKind::SupervisedContrastive => 2,
        };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch size must be at least {min_batch} for this loss"
            )));
        }
        Ok(())
    }
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    /// Training accuracy per epoch (cross-entropy only).
    pub accuracy_curve: Vec<f64>,
    /// Batches skipped because they had no positive pair.
    pub skipped_batches: usize,
}

fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges: Vec<Range<usize>> = (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Objective of one batch at parameters `p`, with fixed dropout masks.
/// Writes the parameter gradient to `grad` when given.
pub(crate) fn batch_objective(
    model: &EncoderModel,
    p: &[f64],
    xs: &[&[f64]],
    labels: &[usize],
    masks: &[Option<Vec<f64>>],
    loss: LossKind,
    temperature: f64,
    grad: Option<&mut [f64]>,
) -> Result<(f64, usize)> {
    let b = xs.len();
    let want_grad = grad.is_some();
    let n_params = model.num_params();
    match loss {
        LossKind::CrossEntropy => {
            let parts = map_chunks(b, |r| {
                let mut g = if want_grad { vec![0.0; n_params] } else { Vec::new() };
                let mut l = 0.0;
                let mut correct = 0usize;
                for i in r {
                    let tr = model.trace(p, xs[i], masks[i].as_deref());
                    let mut d = vec![0.0; tr.output.len()];
                    l += cross_entropy(&tr.output, labels[i], &mut d);
                    if argmax(&tr.output) == labels[i] {
                        correct += 1;
                    }
                    if want_grad {
                        d.iter_mut().for_each(|v| *v /= b as f64);
                        model.backward(p, &tr, &d, &mut g);
                    }
                }
                (l, correct, g)
            });
            let mut total = 0.0;
            let mut correct = 0;
            if let Some(grad) = grad {
                grad.iter_mut().for_each(|v| *v = 0.0);
                for (l, c, g) in &parts {
                    add_into(grad, g);
                    total += l;
                    correct += c;
                }
            } else {
                for (l, c, _) in &parts {
                    total += l;
                    correct += c;
                }
            }
            Ok((total / b as f64, correct))
        }
        LossKind::SupervisedContrastive => {
            let traces: Vec<Trace> = map_chunks(b, |r| {
                r.map(|i| model.trace(p, xs[i], masks[i].as_deref()))
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
            let z = traces
                .iter()
                .map(|t| super::loss::l2_normalize(&t.output))
                .collect::<Result<Vec<_>>>()?;
            let Some(grad) = grad else {
                return Ok((supcon_with_grad(&z, labels, temperature, None)?, 0));
            };
            let mut dz = vec![vec![0.0; z[0].len()]; b];
            let l = supcon_with_grad(&z, labels, temperature, Some(&mut dz))?;
            let parts = map_chunks(b, |r| {
                let mut g = vec![0.0; n_params];
                for i in r {
                    let dv = l2_normalize_backward(&traces[i].output, &dz[i]);
                    model.backward(p, &traces[i], &dv, &mut g);
                }
                g
            });
            grad.iter_mut().for_each(|v| *v = 0.0);
            for g in &parts {
                add_into(grad, g);
            }
            Ok((l, 0))
        }
    }
}

/// Batch loss at the model's current parameters, dropout disabled.
pub fn batch_loss(
    model: &EncoderModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    loss: LossKind,
    temperature: f64,
) -> Result<f64> {
    let xs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let masks = vec![None; xs.len()];
    batch_objective(model, &model.params, &xs, labels, &masks, loss, temperature, None).map(|r| r.0)
}

/// Batch loss and its gradient w.r.t. `model.params`, dropout disabled.
pub fn batch_gradient(
    model: &EncoderModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    loss: LossKind,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let xs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let masks = vec![None; xs.len()];
    let mut grad = vec![0.0; model.num_params()];
    let (l, _) = batch_objective(model, &model.params, &xs, labels, &masks, loss, temperature, Some(&mut grad))?;
    Ok((l, grad))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    // first maximum wins, so ties go to the lowest index
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` in place on flattened inputs with integer labels.
///
/// Input scaling is not fitted here; call [`EncoderModel::fit_scaling`]
/// first. With `epochs = 0` the model is returned untouched.
pub fn train(
    model: &mut EncoderModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::Shape {
            expected: inputs.len(),
            got: labels.len(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let want = model.config.seq_len * model.config.input_dim;
    if let Some(bad) = inputs.iter().find(|x| x.len() != want) {
        return Err(Error::Shape {
            expected: want,
            got: bad.len(),
        });
    }
    match (cfg.loss, model.config.head) {
        (LossKind::CrossEntropy, Head::Softmax { classes }) => {
            if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
            }
        }
        (LossKind::SupervisedContrastive, Head::Embedding) => {}
        (loss, head) => {
            return Err(Error::Config(format!("loss {loss:?} cannot train a {head:?} head")));
        }
    }
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let (lo, hi) = (counts.values().min(), counts.values().max());
    if lo != hi {
        warn!("training set is imbalanced (class sizes {lo:?}..{hi:?}); balancing is recommended");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.num_params(), cfg.learning_rate);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grad = vec![0.0; model.num_params()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight = 0usize;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let masks: Vec<Option<Vec<f64>>> = batch.iter().map(|_| model.dropout_mask(&mut rng)).collect();
            let params = std::mem::take(&mut model.params);
            let res = batch_objective(model, &params, &xs, &ys, &masks, cfg.loss, cfg.temperature, Some(&mut grad));
            model.params = params;
            let (l, c) = match res {
                Ok(v) => v,
                Err(Error::DegenerateBatch) => {
                    report.skipped_batches += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: l,
                    lr: cfg.learning_rate,
                });
            }
            if let Some(max) = cfg.clip_norm {
                clip_norm(&mut grad, max);
            }
            opt.step(&mut model.params, &grad);
            loss_sum += l * batch.len() as f64;
            weight += batch.len();
            correct += c;
        }
        if weight == 0 {
            return Err(Error::DegenerateBatch);
        }
        let epoch_loss = loss_sum / weight as f64;
        report.loss_curve.push(epoch_loss);
        if cfg.loss == LossKind::CrossEntropy {
            report.accuracy_curve.push(correct as f64 / weight as f64);
        }
        info!("epoch {}/{}: loss {epoch_loss:.5}", epoch + 1, cfg.epochs);
    }
    if report.skipped_batches > 0 {
        warn!("{} contrastive batches had no positive pair and were skipped", report.skipped_batches);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, Output};
    use rand::Rng;

    /// Class 0: small client packets; class 1: large server packets.
    pub(crate) fn two_class(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let mut x = Vec::with_capacity(80);
            let mut t = 0.0;
            for _ in 0..40 {
                t += rng.gen_range(0.0..0.02);
                let s = if y == 0 {
                    rng.gen_range(80.0..200.0)
                } else {
                    -rng.gen_range(1000.0..1500.0)
                };
                x.extend([t, s]);
            }
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }

    fn scaled(cfg: EncoderConfig, xs: &[Vec<f64>], seed: u64) -> EncoderModel {
        let mut m = EncoderModel::new(cfg, seed).unwrap();
        m.fit_scaling_values(xs);
        m
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let (xs, ys) = two_class(10, 1);
        let mut m = scaled(EncoderConfig::softmax(2).with_widths(4, 2, 8), &xs, 5);
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let rep = train(&mut m, &xs, &ys, &cfg).unwrap();
        assert!(rep.loss_curve.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn same_seed_same_curve() {
        let (xs, ys) = two_class(24, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::contrastive()
        };
        let run = || {
            let mut m = scaled(EncoderConfig::embedding().with_widths(4, 2, 16), &xs, 3);
            let r = train(&mut m, &xs, &ys, &cfg).unwrap();
            (r.loss_curve, m.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn separable_classes_reach_high_accuracy() {
        let (xs, ys) = two_class(200, 4);
        let mut m = scaled(EncoderConfig::softmax(2).with_widths(8, 4, 16), &xs, 0);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let rep = train(&mut m, &xs, &ys, &cfg).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| match m.forward_values(x).unwrap() {
                Output::Probabilities(p) => argmax(&p) == y,
                Output::Embedding(_) => unreachable!(),
            })
            .count();
        assert!(correct as f64 / 200.0 >= 0.95, "accuracy {correct}/200, curve {:?}", rep.loss_curve);
    }

    #[test]
    fn gradients_match_central_differences_with_dropout_mask() {
        let (xs, _) = two_class(6, 7);
        let ys = vec![0, 1, 2, 0, 1, 2];
        for (loss, cfg) in [
            (LossKind::CrossEntropy, EncoderConfig::softmax(3).with_widths(4, 2, 6)),
            (LossKind::SupervisedContrastive, EncoderConfig::embedding().with_widths(4, 2, 6)),
        ] {
            let mut m = scaled(cfg, &xs, 21);
            m.config.dropout = 0.3;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let masks: Vec<_> = (0..6).map(|_| m.dropout_mask(&mut rng)).collect();
            let x: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let p = m.params.clone();
            let mut g = vec![0.0; p.len()];
            batch_objective(&m, &p, &x, &ys, &masks, loss, 0.5, Some(&mut g)).unwrap();
            let h = 1e-5;
            for k in (0..p.len()).step_by(7) {
                let mut pp = p.clone();
                pp[k] += h;
                let lp = batch_objective(&m, &pp, &x, &ys, &masks, loss, 0.5, None).unwrap().0;
                pp[k] -= 2.0 * h;
                let lm = batch_objective(&m, &pp, &x, &ys, &masks, loss, 0.5, None).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-4);
                assert!(rel < 1e-4, "{loss:?} param {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn head_and_loss_must_agree() {
        let (xs, ys) = two_class(4, 0);
        let mut m = EncoderModel::new(EncoderConfig::softmax(2).with_widths(4, 2, 8), 0).unwrap();
        let err = train(&mut m, &xs, &ys, &TrainConfig::contrastive()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn huge_learning_rate_diverges_with_hint() {
        let (xs, ys) = two_class(16, 0);
        let mut m = scaled(EncoderConfig::softmax(2).with_widths(4, 2, 8), &xs, 0);
        // poison one weight so the first loss is not finite
        m.params[0] = f64::NAN;
        let err = train(&mut m, &xs, &ys, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("lower learning rate"), "{err}");
    }
}
