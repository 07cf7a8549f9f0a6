//! Conformal calibration of the local-acceptance threshold, one cost
//! weight at a time.
//!
//! For a calibration set of `N_v` scored queries with disagreement bits
//! `r_i` (the full-information selector preferred an edge model), the
//! empirical marginal false-acceptance risk of a threshold `tau` is
//!
//! ```text
//! R_hat(tau) = (1/N_v) sum_i r_i 1[s_i >= tau]
//! ```
//!
//! and the conformal correction is
//!
//! ```text
//! CRC(tau) = (N_v/(N_v+1)) R_hat(tau) + 1/(N_v+1) = (d_tau + 1)/(N_v + 1)
//! ```
//!
//! where `d_tau` counts accepted disagreements. The calibrated threshold
//! is the smallest candidate with `CRC <= alpha`; candidates are the
//! sorted unique observed scores plus a supremum sentinel (`+inf`, never
//! accept). With exchangeable calibration and test samples and the score
//! frozen beforehand, a future query's false-acceptance probability at the
//! returned threshold is at most `alpha`, pointwise per cost weight.

use std::fmt::Write as _;
use std::path::Path;

use crate::cost::{DeploymentModel, SystemState};
use crate::dataset::{RoutingDataset, Split};
use crate::error::{Error, Result};
use crate::gate::{gate_forward, GateParams};
use crate::teacher::{full_info_select, teacher_forward, TeacherParams};

/// One scored calibration query: acceptance score in [0, 1] plus the bit
/// marking that the full-information selector preferred an edge model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRecord {
    pub score: f64,
    pub disagree: u8,
}

impl CalibrationRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(Error::InvalidData(format!(
                "calibration score {} outside [0, 1]",
                self.score
            )));
        }
        if self.disagree > 1 {
            return Err(Error::InvalidData(format!(
                "disagreement bit {} outside {{0, 1}}",
                self.disagree
            )));
        }
        Ok(())
    }
}

/// `1` iff the full-information selector routes query `i` away from the
/// local model, evaluated from per-query teacher probabilities and
/// normalized costs.
pub fn disagreement_labels(
    probs: &[Vec<f64>],
    costs: &[Vec<f64>],
    lambda: f64,
    local_idx: usize,
) -> Vec<u8> {
    debug_assert_eq!(probs.len(), costs.len());
    probs
        .iter()
        .zip(costs)
        .map(|(p, c)| u8::from(full_info_select(p, c, lambda) != local_idx))
        .collect()
}

/// Mean of `r_i` over accepted records (`s_i >= tau`).
pub fn empirical_risk(records: &[CalibrationRecord], tau: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptySet("calibration records".into()));
    }
    let hits = records
        .iter()
        .filter(|r| r.disagree == 1 && r.score >= tau)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Accepted-disagreement count `d_tau`.
fn accepted_disagreements(records: &[CalibrationRecord], tau: f64) -> usize {
    records
        .iter()
        .filter(|r| r.disagree == 1 && r.score >= tau)
        .count()
}

/// `(d_tau + 1)/(N_v + 1)`, the exact count form of the conformal
/// correction; algebraically equal to `(N_v/(N_v+1)) R_hat + 1/(N_v+1)`.
pub fn crc_correction(records: &[CalibrationRecord], tau: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptySet("calibration records".into()));
    }
    let d = accepted_disagreements(records, tau);
    Ok((d as f64 + 1.0) / (records.len() as f64 + 1.0))
}

/// Smallest candidate threshold whose conformal correction stays within
/// `alpha`; the sorted unique observed scores are scanned ascending and
/// `+inf` (never accept) is the fallback when no finite candidate
/// qualifies.
pub fn calibrate_threshold(records: &[CalibrationRecord], alpha: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptySet("calibration records".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "risk level {alpha} outside (0, 1)"
        )));
    }
    for r in records {
        r.validate()?;
    }
    let mut candidates: Vec<f64> = records.iter().map(|r| r.score).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("scores validated finite"));
    candidates.dedup();
    for tau in candidates {
        if crc_correction(records, tau)? <= alpha {
            return Ok(tau);
        }
    }
    Ok(f64::INFINITY)
}

/// Log-spaced default cost-weight grid over the training range.
pub fn default_lambda_grid() -> Vec<f64> {
    log_spaced_grid(0.1, 20.0, 24)
}

/// `n` points log-spaced from `lo` to `hi` inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Default risk-level grid; 0.010 is the headline operating level.
pub fn default_alpha_grid() -> Vec<f64> {
    vec![0.002, 0.005, 0.010, 0.020, 0.050]
}

/// Headline risk level used when none is specified.
pub const DEFAULT_ALPHA: f64 = 0.010;

/// Upstream-artifact fingerprints embedded in the threshold table so a
/// stale gate, teacher, or dataset is detected at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableProvenance {
    pub gate_hash: String,
    pub teacher_hash: String,
    pub dataset_hash: String,
}

impl TableProvenance {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gate_hash", &self.gate_hash),
            ("teacher_hash", &self.teacher_hash),
            ("dataset_hash", &self.dataset_hash),
        ] {
            if v.is_empty() || v.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-empty token without whitespace"
                )));
            }
        }
        Ok(())
    }
}

/// Calibrated thresholds over the (cost weight, risk level) grid, plus the
/// provenance needed to validate downstream use. `+inf` entries mean the
/// operating point never accepts locally.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub lambda_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Row-major `[lambda][alpha]`.
    pub tau: Vec<f64>,
    pub n_cal: usize,
    pub provenance: TableProvenance,
}

const TABLE_VERSION_LINE: &str = "riskroute-thresholds v1";

impl ThresholdTable {
    pub fn validate(&self) -> Result<()> {
        self.provenance.validate()?;
        if self.lambda_grid.is_empty() || self.alpha_grid.is_empty() {
            return Err(Error::InvalidData("threshold table has an empty grid".into()));
        }
        if self.tau.len() != self.lambda_grid.len() * self.alpha_grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "table has {} entries for a {} x {} grid",
                self.tau.len(),
                self.lambda_grid.len(),
                self.alpha_grid.len()
            )));
        }
        if self.n_cal == 0 {
            return Err(Error::EmptySet("calibration set behind the table".into()));
        }
        let ascending = |g: &[f64]| g.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&self.lambda_grid) || !ascending(&self.alpha_grid) {
            return Err(Error::InvalidData(
                "threshold table grids must be strictly ascending".into(),
            ));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidData("cost weights must be positive".into()));
        }
        if self.alpha_grid.iter().any(|&a| !(0.0 < a && a < 1.0)) {
            return Err(Error::InvalidData("risk levels must lie in (0, 1)".into()));
        }
        for &t in &self.tau {
            if t.is_nan() || (t.is_finite() && !(0.0..=1.0).contains(&t)) {
                return Err(Error::InvalidData(format!(
                    "threshold {t} outside [0, 1] and not the sentinel"
                )));
            }
        }
        // Feasible sets nest as alpha grows, so each row is non-increasing.
        let n_a = self.alpha_grid.len();
        for (li, row) in self.tau.chunks(n_a).enumerate() {
            if row.windows(2).any(|w| w[0] < w[1]) {
                return Err(Error::InvalidData(format!(
                    "thresholds must be non-increasing in the risk level (cost weight #{li})"
                )));
            }
        }
        Ok(())
    }

    /// Threshold at an exact grid point.
    pub fn lookup(&self, lambda: f64, alpha: f64) -> Result<f64> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        let li = self.lambda_grid.iter().position(|&l| close(l, lambda));
        let ai = self.alpha_grid.iter().position(|&a| close(a, alpha));
        match (li, ai) {
            (Some(li), Some(ai)) => Ok(self.tau[li * self.alpha_grid.len() + ai]),
            _ => Err(Error::OperatingPointNotInTable { lambda, alpha }),
        }
    }

    /// Text serialization: version line, provenance header, then one
    /// `lambda, alpha, tau` row per grid point in lambda-major order. The
    /// sentinel serializes as the literal `inf`.
    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        let _ = writeln!(out, "{TABLE_VERSION_LINE}");
        let _ = writeln!(out, "gate_hash {}", self.provenance.gate_hash);
        let _ = writeln!(out, "teacher_hash {}", self.provenance.teacher_hash);
        let _ = writeln!(out, "dataset_hash {}", self.provenance.dataset_hash);
        let _ = writeln!(out, "n_cal {}", self.n_cal);
        let _ = writeln!(out, "lambda, alpha, tau");
        for (li, &lambda) in self.lambda_grid.iter().enumerate() {
            for (ai, &alpha) in self.alpha_grid.iter().enumerate() {
                let tau = self.tau[li * self.alpha_grid.len() + ai];
                if tau.is_finite() {
                    let _ = writeln!(out, "{lambda:.17e}, {alpha:.17e}, {tau:.17e}");
                } else {
                    let _ = writeln!(out, "{lambda:.17e}, {alpha:.17e}, inf");
                }
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::MalformedArtifact {
            path: path.display().to_string(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_VERSION_LINE) {
            return Err(bad(format!("first line must be `{TABLE_VERSION_LINE}`")));
        }
        let mut header_field = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing `{name}` header line")))?;
            match line.split_once(' ') {
                Some((key, value)) if key == name && !value.trim().is_empty() => {
                    Ok(value.trim().to_string())
                }
                _ => Err(bad(format!("expected `{name} <value>`, got `{line}`"))),
            }
        };
        let gate_hash = header_field("gate_hash")?;
        let teacher_hash = header_field("teacher_hash")?;
        let dataset_hash = header_field("dataset_hash")?;
        let n_cal: usize = header_field("n_cal")?
            .parse()
            .map_err(|_| bad("n_cal must be a nonnegative integer".into()))?;
        let columns = lines
            .next()
            .ok_or_else(|| bad("missing column header".into()))?;
        if columns.split(',').map(str::trim).collect::<Vec<_>>() != ["lambda", "alpha", "tau"] {
            return Err(bad(format!("expected `lambda, alpha, tau`, got `{columns}`")));
        }

        let mut lambda_grid: Vec<f64> = Vec::new();
        let mut alpha_grid: Vec<f64> = Vec::new();
        let mut tau = Vec::new();
        for (row_no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad(format!("row {row_no}: expected 3 fields, got {}", fields.len())));
            }
            let lambda: f64 = fields[0]
                .parse()
                .map_err(|_| bad(format!("row {row_no}: bad cost weight `{}`", fields[0])))?;
            let alpha: f64 = fields[1]
                .parse()
                .map_err(|_| bad(format!("row {row_no}: bad risk level `{}`", fields[1])))?;
            let t: f64 = if fields[2] == "inf" {
                f64::INFINITY
            } else {
                fields[2]
                    .parse()
                    .map_err(|_| bad(format!("row {row_no}: bad threshold `{}`", fields[2])))?
            };
            if lambda_grid.last() != Some(&lambda) && !lambda_grid.contains(&lambda) {
                lambda_grid.push(lambda);
            }
            if lambda_grid.len() == 1 {
                alpha_grid.push(alpha);
            } else {
                let ai = tau.len() % alpha_grid.len();
                if alpha_grid.get(ai) != Some(&alpha) {
                    return Err(bad(format!(
                        "row {row_no}: risk-level grid is inconsistent across cost weights"
                    )));
                }
            }
            tau.push(t);
        }
        let table = Self {
            lambda_grid,
            alpha_grid,
            tau,
            n_cal,
            provenance: TableProvenance {
                gate_hash,
                teacher_hash,
                dataset_hash,
            },
        };
        table
            .validate()
            .map_err(|e| bad(format!("table invariants violated: {e}")))?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Scores and labels the calibration split, then calibrates one threshold
/// per (cost weight, risk level) grid point. Gate and teacher must already
/// be frozen; `states` holds the attached per-query runtime states.
#[allow(clippy::too_many_arguments)]
pub fn build_table(
    gate: &GateParams,
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
    ds: &RoutingDataset,
    states: &[SystemState],
    lambda_grid: &[f64],
    alpha_grid: &[f64],
    provenance: TableProvenance,
) -> Result<ThresholdTable> {
    ds.validate()?;
    if states.len() != ds.queries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} states for {} queries",
            states.len(),
            ds.queries.len()
        )));
    }
    let cal_idx = ds.split_indices(Split::Cal);
    if cal_idx.is_empty() {
        return Err(Error::EmptySet("calibration split".into()));
    }
    let local_idx = deployment.local_index();

    let probs: Vec<Vec<f64>> = cal_idx
        .iter()
        .map(|&i| teacher_forward(teacher, &ds.queries[i].embedding).map(|(_, p)| p))
        .collect::<Result<_>>()?;
    let costs: Vec<Vec<f64>> = cal_idx
        .iter()
        .map(|&i| deployment.costs(&ds.queries[i].workload(), &states[i]))
        .collect();

    let mut tau = Vec::with_capacity(lambda_grid.len() * alpha_grid.len());
    for &lambda in lambda_grid {
        let labels = disagreement_labels(&probs, &costs, lambda, local_idx);
        let records: Vec<CalibrationRecord> = cal_idx
            .iter()
            .zip(&labels)
            .map(|(&i, &r)| {
                let (_, score) = gate_forward(gate, &ds.queries[i].embedding, lambda)?;
                Ok(CalibrationRecord {
                    score,
                    disagree: r,
                })
            })
            .collect::<Result<_>>()?;
        for &alpha in alpha_grid {
            tau.push(calibrate_threshold(&records, alpha)?);
        }
    }

    let table = ThresholdTable {
        lambda_grid: lambda_grid.to_vec(),
        alpha_grid: alpha_grid.to_vec(),
        tau,
        n_cal: cal_idx.len(),
        provenance,
    };
    table.validate()?;
    Ok(table)
}

/// Held-out empirical behavior of one calibrated operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskRow {
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Mean `r_i 1[s_i >= tau]` on the unfiltered test split.
    pub test_risk: f64,
    pub accept_rate: f64,
    pub n_cal: usize,
}

/// Test-split risk and acceptance rate for every grid point of a table.
/// The test split stays unfiltered: the guarantee is about exchangeable
/// draws from deployment traffic, and the calibration split is unfiltered
/// too.
pub fn risk_report(
    table: &ThresholdTable,
    gate: &GateParams,
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
    ds: &RoutingDataset,
    states: &[SystemState],
) -> Result<Vec<RiskRow>> {
    table.validate()?;
    if states.len() != ds.queries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} states for {} queries",
            states.len(),
            ds.queries.len()
        )));
    }
    let test_idx = ds.split_indices(Split::Test);
    if test_idx.is_empty() {
        return Err(Error::EmptySet("test split".into()));
    }
    let local_idx = deployment.local_index();
    let probs: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| teacher_forward(teacher, &ds.queries[i].embedding).map(|(_, p)| p))
        .collect::<Result<_>>()?;
    let costs: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| deployment.costs(&ds.queries[i].workload(), &states[i]))
        .collect();

    let mut rows = Vec::with_capacity(table.lambda_grid.len() * table.alpha_grid.len());
    for &lambda in &table.lambda_grid {
        let labels = disagreement_labels(&probs, &costs, lambda, local_idx);
        let scores: Vec<f64> = test_idx
            .iter()
            .map(|&i| gate_forward(gate, &ds.queries[i].embedding, lambda).map(|(_, s)| s))
            .collect::<Result<_>>()?;
        for &alpha in &table.alpha_grid {
            let tau = table.lookup(lambda, alpha)?;
            let mut risk_hits = 0usize;
            let mut accepts = 0usize;
            for (k, &s) in scores.iter().enumerate() {
                if s >= tau {
                    accepts += 1;
                    risk_hits += usize::from(labels[k] == 1);
                }
            }
            let n = test_idx.len() as f64;
            rows.push(RiskRow {
                lambda,
                alpha,
                tau,
                test_risk: risk_hits as f64 / n,
                accept_rate: accepts as f64 / n,
                n_cal: table.n_cal,
            });
        }
    }
    Ok(rows)
}
