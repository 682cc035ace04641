use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    affine, gelu, gelu_grad, layer_norm_backward, layer_norm_forward, lstm_backward, lstm_forward,
    matvec_backward, softmax, LnTrace, LstmGrads, LstmParams, LstmTrace,
};
use crate::features::{TimeSeriesFeature, TS_LEN};
use crate::{Error, Result};

/// Output layer variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    /// Dense layer with one output per class, followed by softmax.
    Softmax { classes: usize },
    /// No output layer: the dense GELU activations are the embedding.
    Embedding,
}

/// Architecture: BiLSTM(seq) -> LayerNorm -> BiLSTM(last) -> LayerNorm ->
/// Dropout -> Dense(GELU) -> head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub seq_len: usize,
    pub input_dim: usize,
    pub lstm1: usize,
    pub lstm2: usize,
    pub dense: usize,
    pub dropout: f64,
    pub head: Head,
}

impl EncoderConfig {
    pub fn softmax(classes: usize) -> Self {
        EncoderConfig {
            head: Head::Softmax { classes },
            ..Self::embedding()
        }
    }

    /// 64-dimensional embedding model.
    pub fn embedding() -> Self {
        EncoderConfig {
            seq_len: TS_LEN,
            input_dim: 2,
            lstm1: 128,
            lstm2: 64,
            dense: 64,
            dropout: 0.1,
            head: Head::Embedding,
        }
    }

    pub fn with_widths(mut self, lstm1: usize, lstm2: usize, dense: usize) -> Self {
        self.lstm1 = lstm1;
        self.lstm2 = lstm2;
        self.dense = dense;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.seq_len, self.input_dim, self.lstm1, self.lstm2, self.dense];
        if widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Head::Softmax { classes } = self.head {
            if classes < 2 {
                return Err(Error::Config("softmax head needs at least 2 classes".into()));
            }
        }
        Ok(())
    }

    /// Width of the head output (`classes`, or the embedding dimension).
    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Softmax { classes } => classes,
            Head::Embedding => self.dense,
        }
    }
}

#[derive(Debug, Clone)]
struct LstmRanges {
    w: Range<usize>,
    u: Range<usize>,
    b: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    l1: [LstmRanges; 2],
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    l2: [LstmRanges; 2],
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    dense_w: Range<usize>,
    dense_b: Range<usize>,
    head: Option<(Range<usize>, Range<usize>)>,
    pub len: usize,
}

impl Layout {
    pub(crate) fn new(cfg: &EncoderConfig) -> Self {
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let mut lstm = |input: usize, h: usize| LstmRanges {
            w: take(4 * h * input),
            u: take(4 * h * h),
            b: take(4 * h),
        };
        let l1 = [lstm(cfg.input_dim, cfg.lstm1), lstm(cfg.input_dim, cfg.lstm1)];
        let l2 = [lstm(2 * cfg.lstm1, cfg.lstm2), lstm(2 * cfg.lstm1, cfg.lstm2)];
        let ln1_g = take(2 * cfg.lstm1);
        let ln1_b = take(2 * cfg.lstm1);
        let ln2_g = take(2 * cfg.lstm2);
        let ln2_b = take(2 * cfg.lstm2);
        let dense_w = take(cfg.dense * 2 * cfg.lstm2);
        let dense_b = take(cfg.dense);
        let head = match cfg.head {
            Head::Softmax { classes } => Some((take(classes * cfg.dense), take(classes))),
            Head::Embedding => None,
        };
        Layout {
            l1,
            ln1_g,
            ln1_b,
            l2,
            ln2_g,
            ln2_b,
            dense_w,
            dense_b,
            head,
            len: at,
        }
    }
}

fn lstm_view<'a>(p: &'a [f64], r: &LstmRanges) -> LstmParams<'a> {
    LstmParams {
        w: &p[r.w.clone()],
        u: &p[r.u.clone()],
        b: &p[r.b.clone()],
    }
}

/// Splits a gradient buffer into the three tensors of one LSTM direction.
fn lstm_grads<'a>(g: &'a mut [f64], r: &LstmRanges) -> LstmGrads<'a> {
    // w, u, b are laid out contiguously in that order
    let block = &mut g[r.w.start..r.b.end];
    let (w, rest) = block.split_at_mut(r.w.len());
    let (u, b) = rest.split_at_mut(r.u.len());
    LstmGrads { w, u, b }
}

/// Per-channel affine input standardization, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        InputScaling {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation per channel over all rows of all
    /// flattened inputs (`dim` values per row).
    pub fn fit(inputs: &[Vec<f64>], dim: usize) -> Self {
        let mut s = Self::identity(dim);
        let n = inputs.iter().map(|x| x.len() / dim).sum::<usize>() as f64;
        if n == 0.0 {
            return s;
        }
        let column = |ch: usize| inputs.iter().flat_map(move |x| x.iter().skip(ch).step_by(dim));
        for ch in 0..dim {
            let mean = column(ch).sum::<f64>() / n;
            let var = column(ch).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            s.mean[ch] = mean;
            s.std[ch] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        s
    }
}

/// Forward-pass intermediates of one sample, kept for back-propagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    x: Vec<f64>,
    l1: [LstmTrace; 2],
    ln1: LnTrace,
    ln1_out: Vec<f64>,
    l2: [LstmTrace; 2],
    ln2: LnTrace,
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_out: Vec<f64>,
    /// Logits (softmax head) or the raw embedding.
    pub(crate) output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Probabilities(Vec<f64>),
    Embedding(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub scaling: InputScaling,
    pub params: Vec<f64>,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
    }
}

impl EncoderModel {
    /// Seeded initialization: uniform fan-in scaling for recurrent and dense
    /// weights, forget-gate bias 1, layer norms at identity.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |p: &mut [f64], r: &Range<usize>, bound: f64| {
            for v in &mut p[r.clone()] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for (dirs, h) in [(&layout.l1, config.lstm1), (&layout.l2, config.lstm2)] {
            let bound = 1.0 / (h as f64).sqrt();
            for r in dirs.iter() {
                fill(&mut params, &r.w, bound);
                fill(&mut params, &r.u, bound);
                for v in &mut params[r.b.start + h..r.b.start + 2 * h] {
                    *v = 1.0;
                }
            }
        }
        let fan_in = 2 * config.lstm2;
        fill(
            &mut params,
            &layout.dense_w,
            (6.0 / (fan_in + config.dense) as f64).sqrt(),
        );
        if let Some((w, _)) = &layout.head {
            let bound = (6.0 / (config.dense + config.output_dim()) as f64).sqrt();
            fill(&mut params, w, bound);
        }
        for r in [&layout.ln1_g, &layout.ln2_g] {
            params[r.clone()].iter_mut().for_each(|v| *v = 1.0);
        }
        Ok(EncoderModel {
            config,
            scaling: InputScaling::identity(config.input_dim),
            params,
            layout,
        })
    }

    pub(crate) fn from_parts(
        config: EncoderConfig,
        scaling: InputScaling,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::Shape {
                expected: layout.len,
                got: params.len(),
            });
        }
        if scaling.mean.len() != config.input_dim || scaling.std.len() != config.input_dim {
            return Err(Error::Shape {
                expected: config.input_dim,
                got: scaling.mean.len(),
            });
        }
        Ok(EncoderModel {
            config,
            scaling,
            params,
            layout,
        })
    }

    pub fn fit_scaling(&mut self, samples: &[TimeSeriesFeature]) {
        let xs: Vec<Vec<f64>> = samples.iter().map(TimeSeriesFeature::to_vec).collect();
        self.fit_scaling_values(&xs);
    }

    pub fn fit_scaling_values(&mut self, inputs: &[Vec<f64>]) {
        self.scaling = InputScaling::fit(inputs, self.config.input_dim);
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    /// Draws an inverted-dropout mask for the dropout layer input.
    pub(crate) fn dropout_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        let p = self.config.dropout;
        if p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        Some(
            (0..2 * self.config.lstm2)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        )
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        let want = self.config.seq_len * self.config.input_dim;
        if x.len() != want {
            return Err(Error::Shape {
                expected: want,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Inference forward pass (dropout disabled).
    pub fn forward(&self, feature: &TimeSeriesFeature) -> Result<Output> {
        self.forward_values(&feature.to_vec())
    }

    pub fn forward_values(&self, x: &[f64]) -> Result<Output> {
        self.check_input(x)?;
        let tr = self.trace(&self.params, x, None);
        Ok(match self.config.head {
            Head::Softmax { .. } => Output::Probabilities(softmax(&tr.output)),
            Head::Embedding => Output::Embedding(tr.output),
        })
    }

    pub(crate) fn trace(&self, p: &[f64], raw: &[f64], mask: Option<&[f64]>) -> Trace {
        let cfg = &self.config;
        let ly = &self.layout;
        let (h1, h2, din) = (cfg.lstm1, cfg.lstm2, cfg.input_dim);
        let t_len = cfg.seq_len;

        let x: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = i % din;
                (v - self.scaling.mean[ch]) / self.scaling.std[ch]
            })
            .collect();

        let l1 = [
            lstm_forward(&lstm_view(p, &ly.l1[0]), &x, din, h1, false),
            lstm_forward(&lstm_view(p, &ly.l1[1]), &x, din, h1, true),
        ];
        let w1 = 2 * h1;
        let mut seq1 = vec![0.0; t_len * w1];
        for t in 0..t_len {
            seq1[t * w1..t * w1 + h1].copy_from_slice(&l1[0].h[t * h1..(t + 1) * h1]);
            seq1[t * w1 + h1..(t + 1) * w1].copy_from_slice(&l1[1].h[t * h1..(t + 1) * h1]);
        }
        let mut ln1_out = vec![0.0; seq1.len()];
        let ln1 = layer_norm_forward(&seq1, w1, &p[ly.ln1_g.clone()], &p[ly.ln1_b.clone()], &mut ln1_out);

        let l2 = [
            lstm_forward(&lstm_view(p, &ly.l2[0]), &ln1_out, w1, h2, false),
            lstm_forward(&lstm_view(p, &ly.l2[1]), &ln1_out, w1, h2, true),
        ];
        // forward direction ends at the last step, backward at the first
        let mut last2 = Vec::with_capacity(2 * h2);
        last2.extend_from_slice(&l2[0].h[(t_len - 1) * h2..t_len * h2]);
        last2.extend_from_slice(&l2[1].h[0..h2]);
        let mut ln2_out = vec![0.0; 2 * h2];
        let ln2 = layer_norm_forward(&last2, 2 * h2, &p[ly.ln2_g.clone()], &p[ly.ln2_b.clone()], &mut ln2_out);

        let dropped: Vec<f64> = match mask {
            Some(m) => ln2_out.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => ln2_out.clone(),
        };
        let mut dense_pre = vec![0.0; cfg.dense];
        affine(&p[ly.dense_w.clone()], &p[ly.dense_b.clone()], &dropped, &mut dense_pre);
        let dense_out: Vec<f64> = dense_pre.iter().map(|&a| gelu(a)).collect();

        let output = match &ly.head {
            Some((w, b)) => {
                let mut logits = vec![0.0; cfg.output_dim()];
                affine(&p[w.clone()], &p[b.clone()], &dense_out, &mut logits);
                logits
            }
            None => dense_out.clone(),
        };
        Trace {
            x,
            l1,
            ln1,
            ln1_out,
            l2,
            ln2,
            mask: mask.map(<[f64]>::to_vec),
            dropped,
            dense_pre,
            dense_out,
            output,
        }
    }

    /// Accumulates into `grad` the parameter gradient given `d_output`, the
    /// loss gradient w.r.t. `Trace::output`.
    pub(crate) fn backward(&self, p: &[f64], tr: &Trace, d_output: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let ly = &self.layout;
        let (h1, h2, din) = (cfg.lstm1, cfg.lstm2, cfg.input_dim);
        let t_len = cfg.seq_len;

        let mut d_dense_out = match &ly.head {
            Some((w, b)) => {
                let mut d = vec![0.0; cfg.dense];
                for (gb, &g) in grad[b.clone()].iter_mut().zip(d_output) {
                    *gb += g;
                }
                matvec_backward(&p[w.clone()], &tr.dense_out, d_output, &mut grad[w.clone()], Some(&mut d));
                d
            }
            None => d_output.to_vec(),
        };
        for (d, &a) in d_dense_out.iter_mut().zip(&tr.dense_pre) {
            *d *= gelu_grad(a);
        }
        let d_pre = d_dense_out;
        for (gb, &g) in grad[ly.dense_b.clone()].iter_mut().zip(&d_pre) {
            *gb += g;
        }
        let mut d_dropped = vec![0.0; 2 * h2];
        matvec_backward(
            &p[ly.dense_w.clone()],
            &tr.dropped,
            &d_pre,
            &mut grad[ly.dense_w.clone()],
            Some(&mut d_dropped),
        );
        let d_ln2_out: Vec<f64> = match &tr.mask {
            Some(m) => d_dropped.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => d_dropped,
        };

        let mut d_last2 = vec![0.0; 2 * h2];
        {
            let (gg, gb) = split_pair(grad, &ly.ln2_g, &ly.ln2_b);
            layer_norm_backward(&tr.ln2, 2 * h2, &p[ly.ln2_g.clone()], &d_ln2_out, gg, gb, &mut d_last2);
        }

        let w1 = 2 * h1;
        let mut d_ln1_out = vec![0.0; t_len * w1];
        for (dir, reverse) in [(0usize, false), (1usize, true)] {
            let mut dh = vec![0.0; t_len * h2];
            let pos = if reverse { 0 } else { t_len - 1 };
            dh[pos * h2..(pos + 1) * h2].copy_from_slice(&d_last2[dir * h2..(dir + 1) * h2]);
            let r = &ly.l2[dir];
            let params = lstm_view(p, r);
            let mut g = lstm_grads(grad, r);
            lstm_backward(&params, &mut g, &tr.l2[dir], &tr.ln1_out, w1, h2, reverse, &dh, &mut d_ln1_out);
        }

        let mut d_seq1 = vec![0.0; t_len * w1];
        {
            let (gg, gb) = split_pair(grad, &ly.ln1_g, &ly.ln1_b);
            layer_norm_backward(&tr.ln1, w1, &p[ly.ln1_g.clone()], &d_ln1_out, gg, gb, &mut d_seq1);
        }

        let mut dx = vec![0.0; tr.x.len()];
        for (dir, reverse) in [(0usize, false), (1usize, true)] {
            let mut dh = vec![0.0; t_len * h1];
            for t in 0..t_len {
                let src = &d_seq1[t * w1 + dir * h1..t * w1 + (dir + 1) * h1];
                dh[t * h1..(t + 1) * h1].copy_from_slice(src);
            }
            let r = &ly.l1[dir];
            let params = lstm_view(p, r);
            let mut g = lstm_grads(grad, r);
            lstm_backward(&params, &mut g, &tr.l1[dir], &tr.x, din, h1, reverse, &dh, &mut dx);
        }
    }
}

/// Disjoint mutable views of two adjacent ranges (`a` directly before `b`).
fn split_pair<'a>(g: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(a.end, b.start);
    let block = &mut g[a.start..b.end];
    block.split_at_mut(a.len())
}
