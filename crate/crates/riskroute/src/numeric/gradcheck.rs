//! Central-difference gradient verification used by the network tests.
//!
//! The analytic gradient of a scalar loss is compared against
//! `(f(w + h e_i) - f(w - h e_i)) / (2h)` coordinate by coordinate. The
//! relative error uses a floor so coordinates whose true gradient is near
//! zero do not blow up the ratio:
//!
//! ```text
//! rel_i = |a_i - n_i| / max(floor, |a_i|, |n_i|)
//! ```

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference half-step.
    pub h: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Maximum number of coordinates probed; evenly strided when the
    /// parameter vector is longer than this.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-6,
            max_coords: 200,
        }
    }
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// Probes `loss` around `params` and returns the worst relative error
/// against `analytic`. `loss` must be deterministic in its input.
pub fn check_gradient<F>(
    params: &[f64],
    analytic: &[f64],
    cfg: GradCheckConfig,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    assert!(!params.is_empty());
    let n = params.len();
    let count = cfg.max_coords.min(n);
    let stride = n.div_ceil(count);
    let mut scratch = params.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst_coord = 0usize;
    let mut checked = 0usize;
    let mut i = 0usize;
    while i < n {
        let orig = scratch[i];
        scratch[i] = orig + cfg.h;
        let up = loss(&scratch);
        scratch[i] = orig - cfg.h;
        let down = loss(&scratch);
        scratch[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.h);
        let denom = cfg.floor.max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
        checked += 1;
        i += stride;
    }
    GradCheckReport {
        checked,
        max_rel_err,
        worst_coord,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_verifies() {
        let params = [0.3, -1.2, 2.0];
        let analytic: Vec<f64> = params.iter().map(|w| 2.0 * w).collect();
        let report = check_gradient(&params, &analytic, GradCheckConfig::default(), |w| {
            w.iter().map(|x| x * x).sum()
        });
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_err < 1e-8, "rel {}", report.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let params = [1.0, 2.0];
        let analytic = [2.0, 3.0];
        let report = check_gradient(&params, &analytic, GradCheckConfig::default(), |w| {
            w.iter().map(|x| x * x).sum()
        });
        assert!(report.max_rel_err > 0.1);
        assert_eq!(report.worst_coord, 1);
    }

    #[test]
    fn striding_caps_probe_count() {
        let params = vec![0.1; 1000];
        let analytic = vec![0.2; 1000];
        let cfg = GradCheckConfig {
            max_coords: 100,
            ..GradCheckConfig::default()
        };
        let report = check_gradient(&params, &analytic, cfg, |w| w.iter().map(|x| x * x).sum());
        assert!(report.checked <= 100);
        assert!(report.max_rel_err < 1e-6);
    }
}
