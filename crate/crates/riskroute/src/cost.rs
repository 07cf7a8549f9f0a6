//! Deployment cost of answering one query on one model under a sampled
//! runtime state.
//!
//! Radio link: `R = B log2(1 + p g / (B N0))` with channel gain
//! `g = K0 fade d^-alpha`. Communication delays are payload over rate,
//! `tau_ul = b_in l_in / R_ul` and `tau_dl = b_out l_out / R_dl`. Inference
//! latency is linear per token, `tau_inf = beta_pre kappa_pre l_in +
//! beta_dec kappa_dec l_out`. End to end:
//!
//! ```text
//! local:  t = tau_inf                          e = p_act tau_inf
//! edge:   t = tau_ul + tau_rtt + tau_inf + tau_dl
//!         e = p_tx tau_ul + p_rx tau_dl + p_idle (tau_rtt + tau_inf)
//!             + p_srv tau_inf
//! ```
//!
//! Raw cost is the weighted sum `omega_t t / T0 + omega_e e / E0`; the
//! normalized cost divides by the raw cost of the reference model (largest
//! decode workload) on the same query and state, so `c_ref = 1` always.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radio and air-interface parameters shared by every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommParams {
    /// Bits per input token on the uplink payload.
    pub b_in: f64,
    /// Bits per output token on the downlink payload.
    pub b_out: f64,
    /// Uplink bandwidth, Hz.
    pub bw_ul: f64,
    /// Downlink bandwidth, Hz.
    pub bw_dl: f64,
    /// Fixed round-trip time, seconds.
    pub tau_rtt: f64,
    /// UE radiated power on the uplink, watts.
    pub p_u_ul: f64,
    /// Base-station radiated power on the downlink, watts.
    pub p_bs_dl: f64,
    /// Noise power spectral density, watts per Hz.
    pub n0: f64,
    /// Path-loss reference gain at 1 m.
    pub k0: f64,
    /// Path-loss exponent.
    pub alpha_pl: f64,
    /// UE distance sampling range, meters.
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for CommParams {
    fn default() -> Self {
        Self {
            b_in: 32.0,
            b_out: 32.0,
            bw_ul: 10.0e6,
            bw_dl: 40.0e6,
            tau_rtt: 0.018,
            p_u_ul: 0.5,
            p_bs_dl: 2.0,
            n0: 10f64.powf(-20.4),
            k0: 10f64.powf(-4.33),
            alpha_pl: 4.0,
            d_min: 30.0,
            d_max: 150.0,
        }
    }
}

impl CommParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("b_in", self.b_in),
            ("b_out", self.b_out),
            ("bw_ul", self.bw_ul),
            ("bw_dl", self.bw_dl),
            ("tau_rtt", self.tau_rtt),
            ("p_u_ul", self.p_u_ul),
            ("p_bs_dl", self.p_bs_dl),
            ("n0", self.n0),
            ("k0", self.k0),
            ("alpha_pl", self.alpha_pl),
            ("d_min", self.d_min),
            ("d_max", self.d_max),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "comm parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.d_min >= self.d_max {
            return Err(Error::InvalidConfig(format!(
                "d_min {} must be below d_max {}",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }
}

/// One sampled runtime state: UE distance plus quasi-static fading power
/// gains, held constant within a request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub d_ue: f64,
    pub fade_ul: f64,
    pub fade_dl: f64,
}

/// Device power draw in each radio state, watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UePower {
    pub p_tx: f64,
    pub p_rx: f64,
    pub p_idle: f64,
    pub p_act: f64,
}

impl Default for UePower {
    fn default() -> Self {
        Self {
            p_tx: 1.20,
            p_rx: 0.90,
            p_idle: 0.05,
            p_act: 15.0,
        }
    }
}

impl UePower {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_tx", self.p_tx),
            ("p_rx", self.p_rx),
            ("p_idle", self.p_idle),
            ("p_act", self.p_act),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "UE power {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Local,
    Edge,
}

/// Profiled execution coefficients for one model. `kappa` is FLOPs per
/// token, `beta` is seconds per FLOP on the hardware hosting the model, so
/// `beta * kappa` is seconds per token. `p_active` is the device active
/// power for the local tier and the server active power for edge tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub model_id: String,
    pub tier: Tier,
    pub beta_pre: f64,
    pub beta_dec: f64,
    pub kappa_pre: f64,
    pub kappa_dec: f64,
    pub p_active: f64,
}

/// Validated model pool. The local model sits at a unique index and the
/// reference model is the profile with the largest decode workload
/// coefficient (earliest index on ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelProfile>", into = "Vec<ModelProfile>")]
pub struct ModelPool {
    profiles: Vec<ModelProfile>,
    local_idx: usize,
    ref_idx: usize,
}

impl TryFrom<Vec<ModelProfile>> for ModelPool {
    type Error = Error;

    fn try_from(profiles: Vec<ModelProfile>) -> Result<Self> {
        Self::new(profiles)
    }
}

impl From<ModelPool> for Vec<ModelProfile> {
    fn from(pool: ModelPool) -> Self {
        pool.profiles
    }
}

impl ModelPool {
    pub fn new(profiles: Vec<ModelProfile>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::InvalidConfig("model pool is empty".into()));
        }
        for p in &profiles {
            for (name, v) in [
                ("beta_pre", p.beta_pre),
                ("beta_dec", p.beta_dec),
                ("kappa_pre", p.kappa_pre),
                ("kappa_dec", p.kappa_dec),
                ("p_active", p.p_active),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "model {}: {name} must be positive and finite, got {v}",
                        p.model_id
                    )));
                }
            }
        }
        let locals: Vec<usize> = profiles
            .iter()
            .enumerate()
            .filter(|(_, p)| p.tier == Tier::Local)
            .map(|(i, _)| i)
            .collect();
        if locals.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "model pool must contain exactly one local-tier profile, found {}",
                locals.len()
            )));
        }
        for i in 1..profiles.len() {
            if profiles[..i].iter().any(|p| p.model_id == profiles[i].model_id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate model_id {}",
                    profiles[i].model_id
                )));
            }
        }
        let mut ref_idx = 0;
        for (i, p) in profiles.iter().enumerate() {
            if p.kappa_dec > profiles[ref_idx].kappa_dec {
                ref_idx = i;
            }
        }
        Ok(Self {
            profiles,
            local_idx: locals[0],
            ref_idx,
        })
    }

    pub fn profiles(&self) -> &[ModelProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn local_index(&self) -> usize {
        self.local_idx
    }

    pub fn ref_index(&self) -> usize {
        self.ref_idx
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.model_id.clone()).collect()
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.model_id == model_id)
    }
}

/// Latency/energy mixing weights plus the frozen normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub omega_t: f64,
    pub omega_e: f64,
    /// Mean reference-model latency over the reference sample, seconds.
    pub t0: f64,
    /// Mean reference-model energy over the reference sample, joules.
    pub e0: f64,
}

impl CostWeights {
    pub fn new(omega_t: f64, omega_e: f64, t0: f64, e0: f64) -> Result<Self> {
        if !(omega_t >= 0.0 && omega_e >= 0.0 && (omega_t + omega_e - 1.0).abs() < 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "cost weights must be nonnegative and sum to 1, got ({omega_t}, {omega_e})"
            )));
        }
        if !(t0 > 0.0 && e0 > 0.0 && t0.is_finite() && e0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "normalization constants must be positive and finite, got ({t0}, {e0})"
            )));
        }
        Ok(Self {
            omega_t,
            omega_e,
            t0,
            e0,
        })
    }
}

/// Token workload of one query: shared input length plus one output length
/// per pool model, aligned with the pool's profile order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryWorkload {
    pub l_in: u32,
    pub l_out: Vec<u32>,
}

impl QueryWorkload {
    pub fn validate(&self, n_models: usize) -> Result<()> {
        if self.l_out.len() != n_models {
            return Err(Error::DimensionMismatch(format!(
                "workload has {} output lengths for a {n_models}-model pool",
                self.l_out.len()
            )));
        }
        if self.l_in < 1 || self.l_out.iter().any(|&l| l < 1) {
            return Err(Error::InvalidData("token counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uplink,
    Downlink,
}

/// Shannon rate of one link under the sampled state, bits per second.
pub fn link_rate(params: &CommParams, state: &SystemState, dir: Direction) -> f64 {
    let (p, bw, fade) = match dir {
        Direction::Uplink => (params.p_u_ul, params.bw_ul, state.fade_ul),
        Direction::Downlink => (params.p_bs_dl, params.bw_dl, state.fade_dl),
    };
    let gain = params.k0 * fade * state.d_ue.powf(-params.alpha_pl);
    let snr = p * gain / (bw * params.n0);
    // ln_1p keeps the rate positive in the vanishing-SNR regime where
    // 1 + snr would round to 1.
    bw * snr.ln_1p() / std::f64::consts::LN_2
}

/// Uplink and downlink payload delays for an edge model, seconds.
pub fn comm_delays(
    params: &CommParams,
    state: &SystemState,
    m: &ModelProfile,
    l_in: u32,
    l_out: u32,
) -> Result<(f64, f64)> {
    if m.tier != Tier::Edge {
        return Err(Error::InvalidData(format!(
            "comm_delays called for local-tier model {}",
            m.model_id
        )));
    }
    let tau_ul = params.b_in * f64::from(l_in) / link_rate(params, state, Direction::Uplink);
    let tau_dl = params.b_out * f64::from(l_out) / link_rate(params, state, Direction::Downlink);
    Ok((tau_ul, tau_dl))
}

/// Prefill plus decode latency, seconds.
pub fn inference_latency(m: &ModelProfile, l_in: u32, l_out: u32) -> f64 {
    m.beta_pre * m.kappa_pre * f64::from(l_in) + m.beta_dec * m.kappa_dec * f64::from(l_out)
}

/// Total latency and energy of serving the query on model `m`.
pub fn end_to_end(
    m: &ModelProfile,
    params: &CommParams,
    state: &SystemState,
    l_in: u32,
    l_out: u32,
    ue: &UePower,
) -> (f64, f64) {
    let tau_inf = inference_latency(m, l_in, l_out);
    match m.tier {
        Tier::Local => (tau_inf, m.p_active * tau_inf),
        Tier::Edge => {
            let tau_ul = params.b_in * f64::from(l_in) / link_rate(params, state, Direction::Uplink);
            let tau_dl =
                params.b_out * f64::from(l_out) / link_rate(params, state, Direction::Downlink);
            let t = tau_ul + params.tau_rtt + tau_inf + tau_dl;
            let e = ue.p_tx * tau_ul
                + ue.p_rx * tau_dl
                + ue.p_idle * (params.tau_rtt + tau_inf)
                + m.p_active * tau_inf;
            (t, e)
        }
    }
}

/// Dimensionless raw cost of a (latency, energy) pair.
pub fn raw_cost(t: f64, e: f64, w: &CostWeights) -> f64 {
    w.omega_t * t / w.t0 + w.omega_e * e / w.e0
}

/// Raw costs for externally supplied (latency, energy) pairs divided by the
/// reference entry. Shared by [`normalized_cost`] and the tests that probe
/// homogeneity directly.
pub fn normalize_against_ref(te: &[(f64, f64)], ref_idx: usize, w: &CostWeights) -> Vec<f64> {
    let ref_raw = raw_cost(te[ref_idx].0, te[ref_idx].1, w);
    assert!(
        ref_raw > 0.0,
        "reference raw cost must be positive, got {ref_raw}"
    );
    let costs: Vec<f64> = te
        .iter()
        .map(|&(t, e)| raw_cost(t, e, w) / ref_raw)
        .collect();
    assert!(
        (costs[ref_idx] - 1.0).abs() < 1e-12,
        "reference model must normalize to exactly 1"
    );
    costs
}

/// Normalized deployment cost of every pool model on one (query, state)
/// pair, aligned with pool order. The reference model's entry is exactly 1.
pub fn normalized_cost(
    pool: &ModelPool,
    params: &CommParams,
    state: &SystemState,
    workload: &QueryWorkload,
    ue: &UePower,
    w: &CostWeights,
) -> Vec<f64> {
    debug_assert_eq!(workload.l_out.len(), pool.len());
    let te: Vec<(f64, f64)> = pool
        .profiles()
        .iter()
        .zip(&workload.l_out)
        .map(|(m, &l_out)| end_to_end(m, params, state, workload.l_in, l_out, ue))
        .collect();
    normalize_against_ref(&te, pool.ref_index(), w)
}

/// Draws one runtime state: uniform distance, unit-mean exponential fades.
/// Sampling order (distance, uplink fade, downlink fade) is fixed so a
/// seeded stream reproduces identical sequences.
pub fn sample_state<R: Rng>(params: &CommParams, rng: &mut R) -> SystemState {
    let exp = Exp::new(1.0).expect("unit rate is valid");
    let d_ue = rng.random_range(params.d_min..params.d_max);
    let fade_ul = exp.sample(rng);
    let fade_dl = exp.sample(rng);
    SystemState {
        d_ue,
        fade_ul,
        fade_dl,
    }
}

/// Mean latency and energy of the reference model over a sample of
/// (workload, state) pairs; the result is frozen into [`CostWeights`].
pub fn reference_constants(
    pool: &ModelPool,
    params: &CommParams,
    ue: &UePower,
    samples: &[(QueryWorkload, SystemState)],
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySet(
            "reference sample for normalization constants".into(),
        ));
    }
    let m_ref = &pool.profiles()[pool.ref_index()];
    let mut t_sum = 0.0;
    let mut e_sum = 0.0;
    for (w, state) in samples {
        let (t, e) = end_to_end(m_ref, params, state, w.l_in, w.l_out[pool.ref_index()], ue);
        t_sum += t;
        e_sum += e;
    }
    let n = samples.len() as f64;
    Ok((t_sum / n, e_sum / n))
}

/// Everything needed to price one (query, state) pair: the pool, channel
/// parameters, device powers, and frozen normalization weights. Bundled so
/// training and evaluation share a single cost oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentModel {
    pub pool: ModelPool,
    pub comm: CommParams,
    pub ue: UePower,
    pub weights: CostWeights,
}

impl DeploymentModel {
    pub fn new(pool: ModelPool, comm: CommParams, ue: UePower, weights: CostWeights) -> Result<Self> {
        comm.validate()?;
        ue.validate()?;
        Ok(Self {
            pool,
            comm,
            ue,
            weights,
        })
    }

    /// Normalized per-model costs in pool order; the reference entry is 1.
    pub fn costs(&self, workload: &QueryWorkload, state: &SystemState) -> Vec<f64> {
        normalized_cost(&self.pool, &self.comm, state, workload, &self.ue, &self.weights)
    }

    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> SystemState {
        sample_state(&self.comm, rng)
    }

    pub fn local_index(&self) -> usize {
        self.pool.local_index()
    }

    pub fn ref_index(&self) -> usize {
        self.pool.ref_index()
    }

    pub fn n_models(&self) -> usize {
        self.pool.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamRole};
    use proptest::prelude::*;

    fn state(d: f64, fade: f64) -> SystemState {
        SystemState {
            d_ue: d,
            fade_ul: fade,
            fade_dl: fade,
        }
    }

    /// Pool used by the desk-profile examples; mirrors the default config.
    fn desk_pool() -> ModelPool {
        ModelPool::new(vec![
            ModelProfile {
                model_id: "local-1p7b".into(),
                tier: Tier::Local,
                beta_pre: 4.6e-13,
                beta_dec: 3.7e-12,
                kappa_pre: 3.4e9,
                kappa_dec: 3.4e9,
                p_active: 15.0,
            },
            ModelProfile {
                model_id: "edge-4b".into(),
                tier: Tier::Edge,
                beta_pre: 1.6e-13,
                beta_dec: 1.25e-12,
                kappa_pre: 8.0e9,
                kappa_dec: 8.0e9,
                p_active: 150.0,
            },
            ModelProfile {
                model_id: "edge-8b".into(),
                tier: Tier::Edge,
                beta_pre: 2.3e-14,
                beta_dec: 1.05e-12,
                kappa_pre: 16.0e9,
                kappa_dec: 16.0e9,
                p_active: 300.0,
            },
            ModelProfile {
                model_id: "edge-14b".into(),
                tier: Tier::Edge,
                beta_pre: 1.8e-13,
                beta_dec: 1.43e-12,
                kappa_pre: 28.0e9,
                kappa_dec: 28.0e9,
                p_active: 200.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn unit_snr_rate_equals_bandwidth() {
        let params = CommParams::default();
        // At d = 1 the gain is k0 * fade; pick fade so p * g = bw * n0.
        let fade = params.bw_ul * params.n0 / (params.p_u_ul * params.k0);
        let s = state(1.0, fade);
        let r = link_rate(&params, &s, Direction::Uplink);
        assert!((r - params.bw_ul).abs() / params.bw_ul < 1e-12);
    }

    #[test]
    fn vanishing_snr_rate_below_one_bit() {
        let params = CommParams::default();
        let r = link_rate(&params, &state(100.0, 1e-30), Direction::Uplink);
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn default_uplink_at_100m_matches_recomputation() {
        let params = CommParams::default();
        let s = state(100.0, 1.0);
        // Independent path through base-10 arithmetic: 100^-4 = 10^-8.
        let gain = 10f64.powf(-4.33 - 8.0);
        assert!((gain - 4.677e-13).abs() / 4.677e-13 < 1e-3);
        let noise = 1.0e7 * 10f64.powf(-20.4);
        assert!((noise - 3.981e-14).abs() / 3.981e-14 < 1e-3);
        let snr = 0.5 * gain / noise;
        assert!((snr - 5.874).abs() / 5.874 < 1e-3);
        let expected = 1.0e7 * (1.0 + snr).log2();
        let r = link_rate(&params, &s, Direction::Uplink);
        assert!((r - expected).abs() / expected < 1e-12);
        assert!((r - 2.782e7).abs() / 2.782e7 < 1e-3);
    }

    #[test]
    fn comm_delay_is_payload_over_rate() {
        // Force R_ul = 3200 bits/s via unit SNR on a 3200 Hz channel.
        let params = CommParams {
            bw_ul: 3200.0,
            bw_dl: 32.0,
            ..CommParams::default()
        };
        let fade_ul = params.bw_ul * params.n0 / (params.p_u_ul * params.k0);
        let fade_dl = params.bw_dl * params.n0 / (params.p_bs_dl * params.k0);
        let s = SystemState {
            d_ue: 1.0,
            fade_ul,
            fade_dl,
        };
        let edge = &desk_pool().profiles()[1].clone();
        let (tau_ul, tau_dl) = comm_delays(&params, &s, edge, 100, 1).unwrap();
        assert!((tau_ul - 1.0).abs() < 1e-9);
        assert!((tau_dl - 1.0).abs() < 1e-9);
    }

    #[test]
    fn comm_delays_rejects_local_tier() {
        let pool = desk_pool();
        let local = &pool.profiles()[pool.local_index()];
        let err = comm_delays(&CommParams::default(), &state(50.0, 1.0), local, 10, 10);
        assert!(err.is_err());
    }

    #[test]
    fn chained_uplink_delay_at_512_tokens() {
        let params = CommParams::default();
        let s = state(100.0, 1.0);
        let edge = desk_pool().profiles()[1].clone();
        let (tau_ul, _) = comm_delays(&params, &s, &edge, 512, 1).unwrap();
        assert!((tau_ul - 5.889e-4).abs() / 5.889e-4 < 1e-3);
    }

    #[test]
    fn inference_latency_unit_case() {
        let m = ModelProfile {
            model_id: "unit".into(),
            tier: Tier::Edge,
            beta_pre: 1.0,
            beta_dec: 1.0,
            kappa_pre: 1.0,
            kappa_dec: 1.0,
            p_active: 1.0,
        };
        assert_eq!(inference_latency(&m, 1, 1), 2.0);
        // Doubling output length doubles only the decode term.
        let base = inference_latency(&m, 1, 1);
        let doubled = inference_latency(&m, 1, 2);
        assert_eq!(doubled - base, 1.0);
    }

    #[test]
    fn desk_reference_latency_recomputed() {
        let pool = desk_pool();
        let m_ref = &pool.profiles()[pool.ref_index()];
        assert_eq!(m_ref.model_id, "edge-14b");
        let got = inference_latency(m_ref, 256, 256);
        let expected = 1.8e-13 * 28.0e9 * 256.0 + 1.43e-12 * 28.0e9 * 256.0;
        assert!((got - expected).abs() < 1e-12);
        assert!((expected - 11.54048).abs() < 1e-9);
    }

    #[test]
    fn local_end_to_end_is_inference_only() {
        let m = ModelProfile {
            model_id: "loc".into(),
            tier: Tier::Local,
            beta_pre: 1.0,
            beta_dec: 1.0,
            kappa_pre: 1.0,
            kappa_dec: 1.0,
            p_active: 15.0,
        };
        let (t, e) = end_to_end(
            &m,
            &CommParams::default(),
            &state(50.0, 1.0),
            1,
            1,
            &UePower::default(),
        );
        assert_eq!(t, 2.0);
        assert_eq!(e, 30.0);
    }

    #[test]
    fn edge_end_to_end_unit_delays() {
        // All four delay components forced to exactly 1 s.
        let params = CommParams {
            bw_ul: 3200.0,
            bw_dl: 32.0,
            tau_rtt: 1.0,
            ..CommParams::default()
        };
        let fade_ul = params.bw_ul * params.n0 / (params.p_u_ul * params.k0);
        let fade_dl = params.bw_dl * params.n0 / (params.p_bs_dl * params.k0);
        let s = SystemState {
            d_ue: 1.0,
            fade_ul,
            fade_dl,
        };
        let m = ModelProfile {
            model_id: "edge".into(),
            tier: Tier::Edge,
            beta_pre: 0.005,
            beta_dec: 0.5,
            kappa_pre: 1.0,
            kappa_dec: 1.0,
            p_active: 150.0,
        };
        let ue = UePower::default();
        let (t, e) = end_to_end(&m, &params, &s, 100, 1, &ue);
        assert!((t - 4.0).abs() < 1e-9);
        assert!((e - 152.2).abs() < 1e-7);
    }

    #[test]
    fn edge_end_to_end_matches_recomputation() {
        let params = CommParams::default();
        let s = state(100.0, 1.0);
        let pool = desk_pool();
        let m = &pool.profiles()[2];
        let ue = UePower::default();
        let (t, e) = end_to_end(m, &params, &s, 512, 128, &ue);
        let r_ul = link_rate(&params, &s, Direction::Uplink);
        let r_dl = link_rate(&params, &s, Direction::Downlink);
        let tau_ul = 32.0 * 512.0 / r_ul;
        let tau_dl = 32.0 * 128.0 / r_dl;
        let tau_inf = 2.3e-14 * 16.0e9 * 512.0 + 1.05e-12 * 16.0e9 * 128.0;
        let t_expected = tau_ul + 0.018 + tau_inf + tau_dl;
        let e_expected =
            1.2 * tau_ul + 0.9 * tau_dl + 0.05 * (0.018 + tau_inf) + 300.0 * tau_inf;
        assert!((t - t_expected).abs() / t_expected < 1e-9);
        assert!((e - e_expected).abs() / e_expected < 1e-9);
    }

    #[test]
    fn reference_model_cost_is_exactly_one() {
        let pool = desk_pool();
        let params = CommParams::default();
        let ue = UePower::default();
        let w = CostWeights::new(0.5, 0.5, 8.0, 1600.0).unwrap();
        let workload = QueryWorkload {
            l_in: 200,
            l_out: vec![150, 160, 140, 155],
        };
        let costs = normalized_cost(&pool, &params, &state(75.0, 0.8), &workload, &ue, &w);
        assert_eq!(costs[pool.ref_index()], 1.0);
        assert_eq!(costs.len(), 4);
    }

    #[test]
    fn single_model_pool_normalizes_to_one() {
        let pool = ModelPool::new(vec![ModelProfile {
            model_id: "only".into(),
            tier: Tier::Local,
            beta_pre: 1e-12,
            beta_dec: 1e-12,
            kappa_pre: 1e9,
            kappa_dec: 1e9,
            p_active: 10.0,
        }])
        .unwrap();
        let w = CostWeights::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let workload = QueryWorkload {
            l_in: 10,
            l_out: vec![10],
        };
        let costs = normalized_cost(
            &pool,
            &CommParams::default(),
            &state(50.0, 1.0),
            &workload,
            &UePower::default(),
            &w,
        );
        assert_eq!(costs, vec![1.0]);
    }

    #[test]
    fn halved_latency_and_energy_halve_the_cost() {
        let w = CostWeights::new(0.5, 0.5, 3.0, 7.0).unwrap();
        let te = [(2.0, 10.0), (1.0, 5.0)];
        let costs = normalize_against_ref(&te, 0, &w);
        assert_eq!(costs[0], 1.0);
        assert_eq!(costs[1], 0.5);
    }

    #[test]
    fn sampled_states_match_declared_distributions() {
        let params = CommParams::default();
        let mut rng = stream(7, StreamRole::StateAttach);
        let n = 100_000;
        let mut fade_sum = 0.0;
        for _ in 0..n {
            let s = sample_state(&params, &mut rng);
            assert!(s.d_ue >= params.d_min && s.d_ue < params.d_max);
            assert!(s.fade_ul > 0.0 && s.fade_dl > 0.0);
            fade_sum += s.fade_ul;
        }
        let mean = fade_sum / n as f64;
        assert!(
            (0.99..=1.01).contains(&mean),
            "fade mean {mean} outside [0.99, 1.01]"
        );
    }

    #[test]
    fn state_sampling_is_reproducible() {
        let params = CommParams::default();
        let draw = || {
            let mut rng = stream(42, StreamRole::StateAttach);
            (0..16).map(|_| sample_state(&params, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn reference_constants_average_the_reference_model() {
        let pool = desk_pool();
        let params = CommParams::default();
        let ue = UePower::default();
        let samples: Vec<(QueryWorkload, SystemState)> = (0..4)
            .map(|i| {
                (
                    QueryWorkload {
                        l_in: 100 + 50 * i,
                        l_out: vec![150; 4],
                    },
                    state(60.0 + 10.0 * f64::from(i), 1.0),
                )
            })
            .collect();
        let (t0, e0) = reference_constants(&pool, &params, &ue, &samples).unwrap();
        let m_ref = &pool.profiles()[pool.ref_index()];
        let mut t_acc = 0.0;
        let mut e_acc = 0.0;
        for (wkl, s) in &samples {
            let (t, e) = end_to_end(m_ref, &params, s, wkl.l_in, 150, &ue);
            t_acc += t;
            e_acc += e;
        }
        assert!((t0 - t_acc / 4.0).abs() < 1e-12);
        assert!((e0 - e_acc / 4.0).abs() < 1e-12);
        assert!(reference_constants(&pool, &params, &ue, &[]).is_err());
    }

    #[test]
    fn pool_validation_rejects_bad_shapes() {
        assert!(ModelPool::new(vec![]).is_err());
        let mut two_local = desk_pool().profiles().to_vec();
        two_local[1].tier = Tier::Local;
        assert!(ModelPool::new(two_local).is_err());
        let mut dup = desk_pool().profiles().to_vec();
        dup[2].model_id = dup[1].model_id.clone();
        assert!(ModelPool::new(dup).is_err());
        let mut neg = desk_pool().profiles().to_vec();
        neg[0].beta_pre = -1.0;
        assert!(ModelPool::new(neg).is_err());
    }

    proptest! {
        #[test]
        fn rate_monotone_in_fade_and_distance(
            d in 30.0f64..150.0,
            fade in 0.01f64..10.0,
        ) {
            let params = CommParams::default();
            let base = link_rate(&params, &state(d, fade), Direction::Uplink);
            let more_fade = link_rate(&params, &state(d, fade * 1.5), Direction::Uplink);
            let farther = link_rate(&params, &state(d * 1.2, fade), Direction::Uplink);
            prop_assert!(more_fade > base);
            prop_assert!(farther < base);
        }

        #[test]
        fn end_to_end_increases_with_output_length(
            l_out in 1u32..1024,
            model_idx in 0usize..4,
        ) {
            let pool = desk_pool();
            let m = &pool.profiles()[model_idx];
            let params = CommParams::default();
            let ue = UePower::default();
            let s = state(80.0, 1.0);
            let (t1, e1) = end_to_end(m, &params, &s, 64, l_out, &ue);
            let (t2, e2) = end_to_end(m, &params, &s, 64, l_out + 1, &ue);
            prop_assert!(t2 > t1, "latency must grow with l_out for {}", m.model_id);
            prop_assert!(e2 > e1);
        }

        #[test]
        fn reference_entry_is_one_for_random_states(
            d in 30.0f64..150.0,
            fade_ul in 0.05f64..5.0,
            fade_dl in 0.05f64..5.0,
            l_in in 8u32..1024,
            l_out in 8u32..1024,
        ) {
            let pool = desk_pool();
            let w = CostWeights::new(0.5, 0.5, 8.0, 1600.0).unwrap();
            let workload = QueryWorkload {
                l_in,
                l_out: vec![l_out; 4],
            };
            let s = SystemState { d_ue: d, fade_ul, fade_dl };
            let costs = normalized_cost(
                &pool,
                &CommParams::default(),
                &s,
                &workload,
                &UePower::default(),
                &w,
            );
            prop_assert_eq!(costs[pool.ref_index()], 1.0);
            for c in costs {
                prop_assert!(c.is_finite() && c > 0.0);
            }
        }
    }
}
