//! Full-covariance Gaussian mixture fitted by expectation-maximization.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mixture weights below this are treated as a collapsed component.
pub const COLLAPSE_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub tol: f64,
    /// Smallest eigenvalue allowed in any covariance.
    pub cov_regularization: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            k: 10,
            max_iters: 300,
            tol: 1e-6,
            cov_regularization: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
    /// Total training log-likelihood before the first and after every M-step.
    pub loglik_history: Vec<f64>,
    /// History indices at which a collapsed component was re-seeded; the
    /// sequence is non-decreasing between consecutive entries.
    pub reseeds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d x d` matrices.
    pub covariances: Vec<Vec<f64>>,
    /// Class index per component, once labeled.
    #[serde(default)]
    pub cluster_labels: Option<Vec<usize>>,
    /// Log-likelihood cutoff; samples scoring strictly below it abstain.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub percentile: Option<f64>,
    pub fit: FitInfo,
    /// Log-likelihood of every training vector under the final model, kept
    /// so the threshold can be recalibrated without the training data.
    #[serde(default)]
    pub train_logliks: Vec<f64>,
}

/// Cholesky factor and log-normalizer of one component.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    l: DMatrix<f64>,
    log_norm: f64,
}

impl Factor {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows() as f64;
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let l = chol.unpack();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Factor {
            l,
            log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        // forward substitution L y = x - mean; quadratic form is |y|^2
        let d = mean.len();
        let mut y = vec![0.0; d];
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - mean[i];
            for j in 0..i {
                s -= self.l[(i, j)] * y[j];
            }
            y[i] = s / self.l[(i, i)];
            q += y[i] * y[i];
        }
        self.log_norm - 0.5 * q
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Projects a symmetric matrix onto `{S : eigenvalues >= floor}`. This is
/// the exact constrained M-step, which keeps EM monotone.
fn floor_eigenvalues(m: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (&m + m.transpose()) * 0.5;
    }
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&lam) * v.transpose();
    (&r + r.transpose()) * 0.5
}

fn to_matrix(v: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, v)
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

fn global_covariance(xs: &[Vec<f64>], floor: f64) -> DMatrix<f64> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let mut c = DMatrix::zeros(d, d);
    for x in xs {
        let v = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
        c += &v * v.transpose();
    }
    floor_eigenvalues(c / n, floor)
}

fn kmeans_pp(xs: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut means = vec![xs[rng.gen_range(0..xs.len())].clone()];
    let mut d2: Vec<f64> = xs.iter().map(|x| dist2(x, &means[0])).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = xs.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..xs.len())
        };
        means.push(xs[pick].clone());
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min(dist2(x, &xs[pick]));
        }
    }
    means
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub(crate) fn factors(&self) -> Result<Vec<Factor>> {
        let d = self.dim();
        self.covariances.iter().map(|c| Factor::new(&to_matrix(c, d))).collect()
    }

    /// `log pi_k + log N(x; mu_k, Sigma_k)` for every component.
    fn joint(&self, factors: &[Factor], x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.weights[k].ln() + factors[k].log_density(x, &self.means[k]);
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mixture log-density of `x`.
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        Ok(self.score(x)?.0)
    }

    /// Posterior responsibilities of every component for `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let f = self.factors()?;
        let mut j = vec![0.0; self.k()];
        self.joint(&f, x, &mut j);
        let lse = log_sum_exp(&j);
        Ok(j.iter().map(|v| (v - lse).exp()).collect())
    }

    /// Log-likelihood and most probable component of `x`.
    pub fn score(&self, x: &[f64]) -> Result<(f64, usize)> {
        self.check_dim(x)?;
        let f = self.factors()?;
        Ok(self.score_with(&f, x))
    }

    pub(crate) fn score_with(&self, factors: &[Factor], x: &[f64]) -> (f64, usize) {
        let mut j = vec![0.0; self.k()];
        self.joint(factors, x, &mut j);
        let mut best = 0;
        for (k, &v) in j.iter().enumerate() {
            if v > j[best] {
                best = k;
            }
        }
        (log_sum_exp(&j), best)
    }

    /// Scores many vectors with one factorization.
    pub fn score_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<(f64, usize)>> {
        let f = self.factors()?;
        xs.iter()
            .map(|x| {
                self.check_dim(x)?;
                Ok(self.score_with(&f, x))
            })
            .collect()
    }

    pub fn loglik_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.score_batch(xs)?.into_iter().map(|s| s.0).collect())
    }
}

/// Fits a `cfg.k`-component mixture with EM.
pub fn fit_gmm(xs: &[Vec<f64>], cfg: &GmmConfig) -> Result<GmmModel> {
    let n = xs.len();
    if cfg.k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if cfg.k > n {
        return Err(Error::Config(format!("k = {} exceeds the {n} training vectors", cfg.k)));
    }
    if !(cfg.cov_regularization > 0.0) {
        return Err(Error::Config("covariance regularization must be > 0".into()));
    }
    let d = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != d {
            return Err(Error::Data(format!("vector {i} has dimension {}, expected {d}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("vector {i} has a non-finite entry")));
        }
    }
    let k = cfg.k;
    let eps = cfg.cov_regularization;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let global = global_covariance(xs, eps);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(xs, k, &mut rng),
        covariances: vec![from_matrix(&global); k],
        cluster_labels: None,
        threshold: None,
        percentile: None,
        fit: FitInfo {
            seed: cfg.seed,
            ..FitInfo::default()
        },
        train_logliks: Vec::new(),
    };

    let mut resp = vec![vec![0.0; k]; n];
    let e_step = |model: &GmmModel, resp: &mut [Vec<f64>]| -> Result<f64> {
        let f = model.factors()?;
        let mut total = 0.0;
        for (x, r) in xs.iter().zip(resp.iter_mut()) {
            model.joint(&f, x, r);
            let lse = log_sum_exp(r);
            for v in r.iter_mut() {
                *v = (*v - lse).exp();
            }
            total += lse;
        }
        Ok(total)
    };

    let mut ll = e_step(&model, &mut resp)?;
    model.fit.loglik_history.push(ll);
    for iter in 0..cfg.max_iters {
        // M-step
        let nk: Vec<f64> = (0..k).map(|c| resp.iter().map(|r| r[c]).sum()).collect();
        let mut reseeded = false;
        for c in 0..k {
            let w = nk[c] / n as f64;
            if w < COLLAPSE_WEIGHT {
                warn!("mixture component {c} collapsed (weight {w:e}); re-seeding from a random point");
                model.means[c] = xs[rng.gen_range(0..n)].clone();
                model.covariances[c] = from_matrix(&global);
                model.weights[c] = 1.0 / k as f64;
                reseeded = true;
                continue;
            }
            let mean: Vec<f64> = (0..d)
                .map(|j| xs.iter().zip(&resp).map(|(x, r)| r[c] * x[j]).sum::<f64>() / nk[c])
                .collect();
            let mut s = DMatrix::zeros(d, d);
            for (x, r) in xs.iter().zip(&resp) {
                if r[c] == 0.0 {
                    continue;
                }
                let v = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
                s += (&v * v.transpose()) * r[c];
            }
            model.covariances[c] = from_matrix(&floor_eigenvalues(s / nk[c], eps));
            model.means[c] = mean;
            model.weights[c] = w;
        }
        let wsum: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= wsum);

        let new_ll = e_step(&model, &mut resp)?;
        model.fit.loglik_history.push(new_ll);
        model.fit.iterations = iter + 1;
        if reseeded {
            model.fit.reseeds.push(model.fit.loglik_history.len() - 1);
            ll = new_ll;
            continue;
        }
        let gain = new_ll - ll;
        ll = new_ll;
        if gain < cfg.tol {
            model.fit.converged = true;
            break;
        }
    }
    model.fit.final_loglik = ll;
    model.train_logliks = model.loglik_batch(xs)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], sd: f64, per: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sd).unwrap();
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| vec![c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let xs = blobs(&[[1.0, -2.0]], 0.7, 200, 1);
        let cfg = GmmConfig {
            k: 1,
            ..GmmConfig::default()
        };
        let m = fit_gmm(&xs, &cfg).unwrap();
        let n = xs.len() as f64;
        let mean = [
            xs.iter().map(|x| x[0]).sum::<f64>() / n,
            xs.iter().map(|x| x[1]).sum::<f64>() / n,
        ];
        let mut cov = [0.0; 4];
        for x in &xs {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i * 2 + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
                }
            }
        }
        assert!((m.means[0][0] - mean[0]).abs() < 1e-12);
        assert!((m.means[0][1] - mean[1]).abs() < 1e-12);
        for (a, b) in m.covariances[0].iter().zip(cov) {
            assert!((a - b).abs() < 1e-6);
        }
        // the first M-step already reaches the optimum
        assert!(m.fit.iterations <= 2);
    }

    #[test]
    fn closed_form_density_at_mean() {
        let m = GmmModel {
            weights: vec![1.0],
            means: vec![vec![0.3, 0.4]],
            covariances: vec![vec![1.0, 0.0, 0.0, 1.0]],
            cluster_labels: None,
            threshold: None,
            percentile: None,
            fit: FitInfo::default(),
            train_logliks: vec![],
        };
        let ll = m.loglik(&[0.3, 0.4]).unwrap();
        assert!((ll + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((ll - -1.8379).abs() < 1e-4);
        let far = m.loglik(&[5.0, 5.0]).unwrap();
        let farther = m.loglik(&[8.0, 8.0]).unwrap();
        assert!(farther < far && far < ll);
    }

    #[test]
    fn recovers_separated_means() {
        let xs = blobs(&[[0.0, 0.0], [4.0, 4.0]], 0.3, 150, 7);
        let m = fit_gmm(
            &xs,
            &GmmConfig {
                k: 2,
                seed: 3,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        let mut found: Vec<_> = m.means.clone();
        found.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((found[0][0]).abs() < 0.1 && (found[0][1]).abs() < 0.1);
        assert!((found[1][0] - 4.0).abs() < 0.1 && (found[1][1] - 4.0).abs() < 0.1);
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn loglik_history_never_decreases() {
        for seed in 0..5 {
            let xs = blobs(&[[0.0, 0.0], [1.0, 0.5], [0.2, 1.5]], 0.5, 60, seed);
            let m = fit_gmm(
                &xs,
                &GmmConfig {
                    k: 3,
                    seed,
                    tol: 0.0,
                    max_iters: 100,
                    ..GmmConfig::default()
                },
            )
            .unwrap();
            for w in m.fit.loglik_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{:?}", w);
            }
        }
    }

    #[test]
    fn degenerate_data_stays_positive_definite() {
        // all points on a line: sample covariance is singular
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.01, i as f64 * 0.02]).collect();
        let m = fit_gmm(
            &xs,
            &GmmConfig {
                k: 2,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        assert!(m.factors().is_ok());
        assert!(m.loglik(&[0.1, 0.2]).unwrap().is_finite());
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let xs = vec![vec![0.0, 1.0]; 3];
        let err = fit_gmm(
            &xs,
            &GmmConfig {
                k: 4,
                ..GmmConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn posterior_sums_to_one() {
        let xs = blobs(&[[0.0, 0.0], [2.0, 0.0]], 0.5, 40, 2);
        let m = fit_gmm(
            &xs,
            &GmmConfig {
                k: 2,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        for x in xs.iter().take(10) {
            let p = m.posterior(x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
