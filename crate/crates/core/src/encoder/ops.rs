//! Forward/backward kernels on flat row-major slices.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact (erf-based) GELU.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// `out = W x + b` with `W` of shape `out.len() x x.len()`.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        *o = b[r] + dot(row, x);
    }
}

/// `out += W x`.
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * n..(r + 1) * n], x);
    }
}

/// `dw += dy x^T`, and `dx += W^T dy` when `dx` is given.
pub(crate) fn matvec_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &xi) in dw[r * n..(r + 1) * n].iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &wi) in dx.iter_mut().zip(&w[r * n..(r + 1) * n]) {
                *d += g * wi;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Cached activations of one LSTM direction over a sequence. All buffers are
/// `T x hidden`, indexed by input position (not processing order).
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tc: Vec<f64>,
    pub h: Vec<f64>,
}

/// Parameter views of one LSTM direction. Gate order in the stacked
/// `4*hidden` rows is input, forget, cell, output.
pub(crate) struct LstmParams<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

pub(crate) struct LstmGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

fn order(t_len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    }
}

pub(crate) fn lstm_forward(
    p: &LstmParams<'_>,
    xs: &[f64],
    in_dim: usize,
    hidden: usize,
    reverse: bool,
) -> LstmTrace {
    let t_len = xs.len() / in_dim;
    let n = t_len * hidden;
    let mut tr = LstmTrace {
        i: vec![0.0; n],
        f: vec![0.0; n],
        g: vec![0.0; n],
        o: vec![0.0; n],
        c: vec![0.0; n],
        tc: vec![0.0; n],
        h: vec![0.0; n],
    };
    let zero = vec![0.0; hidden];
    let mut z = vec![0.0; 4 * hidden];
    let mut prev: Option<usize> = None;
    for t in order(t_len, reverse) {
        let x = &xs[t * in_dim..(t + 1) * in_dim];
        affine(p.w, p.b, x, &mut z);
        let (h_prev, c_prev) = match prev {
            Some(pt) => (
                tr.h[pt * hidden..(pt + 1) * hidden].to_vec(),
                tr.c[pt * hidden..(pt + 1) * hidden].to_vec(),
            ),
            None => (zero.clone(), zero.clone()),
        };
        matvec_acc(p.u, &h_prev, &mut z);
        let base = t * hidden;
        for k in 0..hidden {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hidden + k]);
            let g = z[2 * hidden + k].tanh();
            let o = sigmoid(z[3 * hidden + k]);
            let c = f * c_prev[k] + i * g;
            let tc = c.tanh();
            tr.i[base + k] = i;
            tr.f[base + k] = f;
            tr.g[base + k] = g;
            tr.o[base + k] = o;
            tr.c[base + k] = c;
            tr.tc[base + k] = tc;
            tr.h[base + k] = o * tc;
        }
        prev = Some(t);
    }
    tr
}

/// Back-propagates `dh` (gradient w.r.t. every output position) through one
/// LSTM direction; accumulates parameter gradients and `dxs`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    p: &LstmParams<'_>,
    g: &mut LstmGrads<'_>,
    tr: &LstmTrace,
    xs: &[f64],
    in_dim: usize,
    hidden: usize,
    reverse: bool,
    dh_out: &[f64],
    dxs: &mut [f64],
) {
    let t_len = xs.len() / in_dim;
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; 4 * hidden];
    let mut dh_prev = vec![0.0; hidden];
    let steps: Vec<usize> = order(t_len, reverse).collect();
    for (s, &t) in steps.iter().enumerate().rev() {
        let prev = s.checked_sub(1).map(|ps| steps[ps]);
        let base = t * hidden;
        for k in 0..hidden {
            let dh = dh_out[base + k] + dh_next[k];
            let (i, f, gg, o, tc) = (
                tr.i[base + k],
                tr.f[base + k],
                tr.g[base + k],
                tr.o[base + k],
                tr.tc[base + k],
            );
            let c_prev = prev.map_or(0.0, |pt| tr.c[pt * hidden + k]);
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let di = dc * gg;
            let dg = dc * i;
            let df = dc * c_prev;
            dc_next[k] = dc * f;
            dz[k] = di * i * (1.0 - i);
            dz[hidden + k] = df * f * (1.0 - f);
            dz[2 * hidden + k] = dg * (1.0 - gg * gg);
            dz[3 * hidden + k] = d_o * o * (1.0 - o);
        }
        for (db, &d) in g.b.iter_mut().zip(&dz) {
            *db += d;
        }
        let x = &xs[t * in_dim..(t + 1) * in_dim];
        matvec_backward(p.w, x, &dz, g.w, Some(&mut dxs[t * in_dim..(t + 1) * in_dim]));
        dh_prev.iter_mut().for_each(|v| *v = 0.0);
        match prev {
            Some(pt) => {
                let h_prev = &tr.h[pt * hidden..(pt + 1) * hidden];
                matvec_backward(p.u, h_prev, &dz, g.u, Some(&mut dh_prev));
            }
            None => {
                // h_prev is the zero initial state: no U gradient, nothing upstream
            }
        }
        dh_next.copy_from_slice(&dh_prev);
    }
}

/// Per-row layer normalization cache.
#[derive(Debug, Clone)]
pub(crate) struct LnTrace {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes each `width`-row of `x` in place of `out`.
pub(crate) fn layer_norm_forward(
    x: &[f64],
    width: usize,
    gamma: &[f64],
    beta: &[f64],
    out: &mut [f64],
) -> LnTrace {
    let rows = x.len() / width;
    let mut tr = LnTrace {
        xhat: vec![0.0; x.len()],
        inv_std: vec![0.0; rows],
    };
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        tr.inv_std[r] = inv;
        for k in 0..width {
            let xh = (row[k] - mean) * inv;
            tr.xhat[r * width + k] = xh;
            out[r * width + k] = gamma[k] * xh + beta[k];
        }
    }
    tr
}

pub(crate) fn layer_norm_backward(
    tr: &LnTrace,
    width: usize,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let rows = tr.inv_std.len();
    let n = width as f64;
    let mut dxhat = vec![0.0; width];
    for r in 0..rows {
        let xh = &tr.xhat[r * width..(r + 1) * width];
        let g = &dy[r * width..(r + 1) * width];
        for k in 0..width {
            dgamma[k] += g[k] * xh[k];
            dbeta[k] += g[k];
            dxhat[k] = g[k] * gamma[k];
        }
        let s1: f64 = dxhat.iter().sum();
        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let inv = tr.inv_std[r];
        for k in 0..width {
            dx[r * width + k] += inv / n * (n * dxhat[k] - s1 - xh[k] * s2);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn sigmoid_symmetric() {
        for &x in &[-40.0, -1.0, 0.0, 3.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
