//! Adam over a list of flat parameter buffers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected update. `params` and `grads` are visited in the
    /// same order every call; their total length must equal `n_params`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            debug_assert_eq!(p.len(), g.len());
            let m = &mut self.m[k..k + p.len()];
            let v = &mut self.v[k..k + p.len()];
            for (((pi, gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
            k += p.len();
        }
        debug_assert_eq!(k, self.m.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr·sign(g) (up to eps)
        let mut adam = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step(&mut [&mut p], &[&[0.5, -2.0, 1e-3]], 0.1);
        for (got, want) in p.iter().zip([0.9, 1.1, 0.9]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut a = vec![3.0];
        let mut b = vec![-2.0];
        for _ in 0..2000 {
            let ga = [2.0 * (a[0] - 1.0)];
            let gb = [2.0 * (b[0] + 0.5)];
            adam.step(&mut [&mut a, &mut b], &[&ga, &gb], 0.05);
        }
        assert!((a[0] - 1.0).abs() < 1e-3 && (b[0] + 0.5).abs() < 1e-3);
    }
}
