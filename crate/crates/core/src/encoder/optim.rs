/// Adam with bias correction.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`.
pub(crate) fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr * sign(g) (up to eps)
        let mut a = Adam::new(2, 0.01);
        let mut p = [1.0, 1.0];
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] - 1.01).abs() < 1e-8);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut a = Adam::new(1, 0.05);
        let mut p = [4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            a.step(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }
}
