//! AdamW with decoupled weight decay and global-norm gradient clipping.
//!
//! Update per step `t` for each parameter `w` with gradient `g` (after
//! clipping the full gradient vector to `clip` in L2 norm):
//!
//! ```text
//! m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
//! m_hat = m / (1 - b1^t)          v_hat = v / (1 - b2^t)
//! w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)
//! ```
//!
//! Decay multiplies the raw weight, not the gradient, so it does not pass
//! through the moment estimates. Clipping happens before the moments see the
//! gradient. All state lives in flat `Vec<f64>` buffers so two optimizers fed
//! identical gradients stay bitwise identical.

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm ceiling applied to the whole gradient vector.
    pub clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
        }
    }
}

#[derive(Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `params` and `grads` must both match the
    /// length the optimizer was built with; `grads` is rescaled in place when
    /// clipping engages.
    pub fn step(&mut self, params: &mut [f64], grads: &mut [f64]) {
        assert_eq!(params.len(), self.m.len(), "param count changed");
        assert_eq!(grads.len(), self.m.len(), "grad count changed");
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.cfg.clip {
            let scale = self.cfg.clip / norm;
            for g in grads.iter_mut() {
                *g *= scale;
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * g;
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -=
                self.cfg.lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * params[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            clip: f64::INFINITY,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, 1);
        let mut w = [1.0];
        let mut g = [0.5];
        opt.step(&mut w, &mut g);
        // After bias correction the first step is lr * g / (|g| + eps).
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn decay_is_decoupled_from_moments() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            clip: f64::INFINITY,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, 1);
        let mut w = [2.0];
        let mut g = [0.0];
        opt.step(&mut w, &mut g);
        // Zero gradient leaves the moments at zero; only decay moves w.
        assert!((w[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn clip_rescales_to_unit_global_norm() {
        let cfg = AdamWConfig {
            clip: 1.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, 2);
        let mut w = [0.0, 0.0];
        let mut g = [3.0, 4.0];
        opt.step(&mut w, &mut g);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-12);
        assert!((g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_gradients_pass_untouched() {
        let mut opt = AdamW::new(AdamWConfig::default(), 2);
        let mut w = [0.0, 0.0];
        let mut g = [0.3, 0.4];
        opt.step(&mut w, &mut g);
        assert_eq!(g, [0.3, 0.4]);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut opt = AdamW::new(AdamWConfig::default(), 3);
            let mut w = [0.4, -0.2, 0.9];
            for k in 0..50 {
                let mut g = [
                    (k as f64 * 0.1).sin(),
                    (k as f64 * 0.2).cos(),
                    0.01 * k as f64,
                ];
                opt.step(&mut w, &mut g);
            }
            w
        };
        let a = run();
        let b = run();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, 1);
        let mut w = [5.0];
        for _ in 0..2000 {
            let mut g = [2.0 * (w[0] - 1.5)];
            opt.step(&mut w, &mut g);
        }
        assert!((w[0] - 1.5).abs() < 1e-3);
    }
}
