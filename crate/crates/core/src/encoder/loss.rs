//! Loss functions with gradients w.r.t. the model output.

use super::ops::softmax;
use crate::{Error, Result};

/// Cross-entropy of `softmax(logits)` against class `target`, with the
/// gradient `p - onehot(target)` written to `grad`.
pub(crate) fn cross_entropy(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let p = softmax(logits);
    for (k, (g, &pk)) in grad.iter_mut().zip(&p).enumerate() {
        *g = pk - if k == target { 1.0 } else { 0.0 };
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numerical(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Back-propagates through `z = v / |v|`.
pub(crate) fn l2_normalize_backward(v: &[f64], dz: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let z: Vec<f64> = v.iter().map(|x| x / n).collect();
    let proj: f64 = z.iter().zip(dz).map(|(a, b)| a * b).sum();
    dz.iter().zip(&z).map(|(d, zi)| (d - zi * proj) / n).collect()
}

/// Supervised contrastive loss over L2-normalized embeddings, averaged over
/// anchors that have at least one same-label positive.
///
/// For anchor `i` with positives `P(i)`:
/// `l_i = -1/|P| sum_p log( exp(z_i.z_p/t) / sum_{a != i} exp(z_i.z_a/t) )`.
pub fn supervised_contrastive_loss(z: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<f64> {
    supcon_with_grad(z, labels, temperature, None)
}

/// As [`supervised_contrastive_loss`]; also fills `dz` (same shape as `z`)
/// when given.
pub(crate) fn supcon_with_grad(
    z: &[Vec<f64>],
    labels: &[usize],
    temperature: f64,
    mut dz: Option<&mut [Vec<f64>]>,
) -> Result<f64> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let n = z.len();
    if labels.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: labels.len(),
        });
    }
    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    if anchors.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let scale = 1.0 / anchors.len() as f64;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    if let Some(d) = dz.as_deref_mut() {
        for row in d.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut total = 0.0;
    for &i in &anchors {
        let others: Vec<usize> = (0..n).filter(|&a| a != i).collect();
        let s: Vec<f64> = others.iter().map(|&a| dot(&z[i], &z[a]) / temperature).collect();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let n_pos = others.iter().filter(|&&a| labels[a] == labels[i]).count() as f64;
        let pos_sum: f64 = others
            .iter()
            .zip(&s)
            .filter(|(&a, _)| labels[a] == labels[i])
            .map(|(_, v)| v)
            .sum();
        total += lse - pos_sum / n_pos;

        if let Some(d) = dz.as_deref_mut() {
            for (&a, &sa) in others.iter().zip(&s) {
                let pos = if labels[a] == labels[i] { 1.0 / n_pos } else { 0.0 };
                let g = scale * ((sa - lse).exp() - pos) / temperature;
                if g == 0.0 {
                    continue;
                }
                for k in 0..z[i].len() {
                    d[i][k] += g * z[a][k];
                    d[a][k] += g * z[i][k];
                }
            }
        }
    }
    Ok(total * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_give_log_n_minus_one() {
        // all similarities equal: each anchor's loss is log(B - 1)
        let z = vec![vec![1.0, 0.0]; 5];
        let labels = [0, 0, 1, 1, 2];
        let l = supervised_contrastive_loss(&z, &labels, 0.07).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_point_hand_value() {
        // one other sample: the softmax over a single candidate is 1, loss 0
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = supervised_contrastive_loss(&z, &[3, 3], 1.0).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn three_point_closed_form() {
        // anchors 0 and 1 (identical); sample 2 antipodal with another label.
        // l = log(e^{1/t} + e^{-1/t}) - 1/t for both anchors.
        let t = 0.5;
        let z = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        let l = supervised_contrastive_loss(&z, &[0, 0, 1], t).unwrap();
        let want = ((1.0f64 / t).exp() + (-1.0f64 / t).exp()).ln() - 1.0 / t;
        assert!((l - want).abs() < 1e-12, "{l} vs {want}");
        assert!(l > 0.0 && l < 0.02);
    }

    #[test]
    fn no_positive_is_degenerate() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            supervised_contrastive_loss(&z, &[0, 1], 0.1),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn supcon_gradient_matches_differences() {
        let z: Vec<Vec<f64>> = vec![
            vec![0.3, -0.2, 0.9],
            vec![0.1, 0.8, -0.4],
            vec![-0.5, 0.5, 0.2],
            vec![0.7, 0.1, 0.1],
        ];
        let labels = [0, 0, 1, 1];
        let mut dz = vec![vec![0.0; 3]; 4];
        supcon_with_grad(&z, &labels, 0.3, Some(&mut dz)).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for k in 0..3 {
                let mut zp = z.clone();
                zp[i][k] += h;
                let mut zm = z.clone();
                zm[i][k] -= h;
                let fd = (supervised_contrastive_loss(&zp, &labels, 0.3).unwrap()
                    - supervised_contrastive_loss(&zm, &labels, 0.3).unwrap())
                    / (2.0 * h);
                assert!((fd - dz[i][k]).abs() < 1e-7, "({i},{k}) {fd} vs {}", dz[i][k]);
            }
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut g = [0.0; 4];
        let l = cross_entropy(&[0.0; 4], 2, &mut g);
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert_eq!(g, [0.25, 0.25, -0.75, 0.25]);
    }
}
