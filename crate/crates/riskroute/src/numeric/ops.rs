//! Scalar activations, losses, and normalization used by the two networks.
//!
//! Everything is written in a numerically stable form so that losses stay
//! finite for logits anywhere in `[-1e6, 1e6]` and gradient checks hold at
//! f64 precision.

use crate::error::{Error, Result};

/// Exact GELU, `x * Phi(x)` with `Phi` the standard normal CDF via `erf`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Derivative of exact GELU: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

pub fn gelu_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(gelu).collect()
}

/// `log(1 + e^x)`, overflow-safe on both tails.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus is the logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(p / (1 - p))`, inverse of the sigmoid.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Binary cross-entropy with logits, `-y log s(l) - (1-y) log(1-s(l))`,
/// computed as `max(l,0) - l y + log(1 + e^{-|l|})`.
#[inline]
pub fn bce_with_logits(logit: f64, label: f64) -> f64 {
    debug_assert!(label == 0.0 || label == 1.0);
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// d/d logit of [`bce_with_logits`], `sigmoid(logit) - label`.
#[inline]
pub fn bce_with_logits_grad(logit: f64, label: f64) -> f64 {
    sigmoid(logit) - label
}

/// Huber loss: quadratic inside `|r| <= beta`, linear outside.
#[inline]
pub fn huber(r: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    let a = r.abs();
    if a <= beta {
        0.5 * r * r
    } else {
        beta * (a - 0.5 * beta)
    }
}

/// d/dr of [`huber`]: `r` inside the knee, `beta * sign(r)` outside.
#[inline]
pub fn huber_grad(r: f64, beta: f64) -> f64 {
    if r.abs() <= beta {
        r
    } else {
        beta * r.signum()
    }
}

/// Variance epsilon for [`layernorm`].
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Zero-mean unit-variance normalization without a learned affine; the FiLM
/// modulation downstream supplies scale and shift.
pub fn layernorm(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidData(
            "layernorm requires at least 2 entries".into(),
        ));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
    Ok(x.iter().map(|v| (v - mean) * inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent standard normal CDF via the Taylor series of `erf`;
    /// converges quickly for the |x| <= 4 range exercised here.
    fn normal_cdf_series(x: f64) -> f64 {
        let z = x / std::f64::consts::SQRT_2;
        let mut term = z;
        let mut sum = z;
        for n in 1..60 {
            let nf = n as f64;
            term *= -z * z / nf;
            sum += term / (2.0 * nf + 1.0);
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * sum;
        0.5 * (1.0 + erf)
    }

    #[test]
    fn gelu_zero_is_zero() {
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn gelu_asymptote() {
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_at_one_matches_independent_cdf() {
        let expected = 1.0 * normal_cdf_series(1.0);
        assert!((expected - 0.8413447461).abs() < 1e-9);
        assert!((gelu(1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - numeric).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softplus_closed_forms() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        let tiny = softplus(-50.0);
        assert!((tiny - (-50.0f64).exp()).abs() / (-50.0f64).exp() < 1e-9);
    }

    #[test]
    fn softplus_finite_on_wide_range() {
        for &x in &[-1e6, -1e3, 0.0, 1e3, 1e6] {
            assert!(softplus(x).is_finite());
        }
    }

    #[test]
    fn bce_symmetry_at_zero_logit() {
        assert!((bce_with_logits(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_with_logits(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_matches_softplus_identity() {
        // BCE(l, y) = softplus((1 - 2y) * l), checked independently.
        let val = bce_with_logits(2.0, 1.0);
        assert!((val - softplus(-2.0)).abs() < 1e-15);
        assert!((val - 0.1269280110).abs() < 1e-9);
    }

    #[test]
    fn bce_finite_on_wide_range() {
        for &l in &[-1e6, -10.0, 0.0, 10.0, 1e6] {
            assert!(bce_with_logits(l, 0.0).is_finite());
            assert!(bce_with_logits(l, 1.0).is_finite());
        }
    }

    #[test]
    fn huber_branches() {
        assert!((huber(0.05, 0.1) - 0.00125).abs() < 1e-15);
        assert!((huber(0.2, 0.1) - 0.015).abs() < 1e-15);
        // Knee: both branch formulas agree at |r| = beta.
        let quad = 0.5 * 0.1f64 * 0.1;
        let lin = 0.1 * (0.1 - 0.05);
        assert_eq!(quad, lin);
        assert!((huber(-0.1, 0.1) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn huber_one_sided_slopes_at_knee() {
        let beta = 0.1;
        let h = 1e-9;
        for sign in [-1.0, 1.0] {
            let knee = sign * beta;
            let inner = (huber(knee, beta) - huber(knee - sign * h, beta)) / (sign * h);
            let outer = (huber(knee + sign * h, beta) - huber(knee, beta)) / (sign * h);
            assert!((inner - beta * sign).abs() < 1e-6);
            assert!((outer - beta * sign).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_constant_input() {
        assert_eq!(layernorm(&[1.0, 1.0, 1.0, 1.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn layernorm_already_normalized() {
        let out = layernorm(&[1.0, -1.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-4);
        assert!((out[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layernorm_moments_recomputed() {
        let out = layernorm(&[0.0, 2.0, 4.0, 6.0]).unwrap();
        let mean = out.iter().sum::<f64>() / 4.0;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        // Input population variance is 5, so the epsilon leaves 5 / (5 + 1e-5).
        let expected = 5.0 / (5.0 + LAYERNORM_EPS);
        assert!((var - expected).abs() < 1e-9);
        assert!((var - 1.0).abs() < 3e-6);
    }

    #[test]
    fn layernorm_rejects_short_input() {
        assert!(layernorm(&[1.0]).is_err());
    }
}
