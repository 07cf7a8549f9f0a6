//! Run configuration: one TOML document resolves every stage of the
//! pipeline. Missing fields fall back to the bundled desk profile, and the
//! resolved form is echoed into artifact sidecars so a run is reproducible
//! from (config, seed) alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::calibration::log_spaced_grid;
use crate::cost::{CommParams, CostWeights, DeploymentModel, ModelPool, ModelProfile, Tier, UePower};
use crate::dataset::SyntheticConfig;
use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::router::{DeferPolicy, EvalConfig};
use crate::teacher::TeacherConfig;

/// Deployment-cost section: radio link, device power, scalarization
/// weights, and the model pool profiles in routing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub comm: CommParams,
    pub ue: UePower,
    pub weights: CostWeights,
    pub models: Vec<ModelProfile>,
    /// Reference-sample size used to pin the cost normalizers.
    pub reference_samples: usize,
}

/// Profiled desk pool: one on-device model and three edge models with a
/// widening compute gap, so the local model stays cheapest per query.
pub fn desk_models() -> Vec<ModelProfile> {
    vec![
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
            kappa_pre: 1.6e10,
            kappa_dec: 1.6e10,
            p_active: 300.0,
        },
        ModelProfile {
            model_id: "edge-14b".into(),
            tier: Tier::Edge,
            beta_pre: 1.8e-13,
            beta_dec: 1.43e-12,
            kappa_pre: 2.8e10,
            kappa_dec: 2.8e10,
            p_active: 200.0,
        },
    ]
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            comm: CommParams::default(),
            ue: UePower::default(),
            weights: CostWeights {
                omega_t: 0.5,
                omega_e: 0.5,
                t0: 8.0,
                e0: 1600.0,
            },
            models: desk_models(),
            reference_samples: 256,
        }
    }
}

/// Threshold-calibration section: the (cost weight, risk level) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_lambda: usize,
    pub alphas: Vec<f64>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            lambda_min: 0.1,
            lambda_max: 20.0,
            n_lambda: 24,
            alphas: crate::calibration::default_alpha_grid(),
        }
    }
}

impl CalibrationSection {
    pub fn lambda_grid(&self) -> Vec<f64> {
        log_spaced_grid(self.lambda_min, self.lambda_max, self.n_lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_max > self.lambda_min && self.n_lambda >= 2) {
            return Err(Error::InvalidConfig(format!(
                "cost-weight grid [{}, {}] x {} is not a valid log grid",
                self.lambda_min, self.lambda_max, self.n_lambda
            )));
        }
        if self.alphas.is_empty()
            || self.alphas.iter().any(|&a| !(0.0 < a && a < 1.0))
            || self.alphas.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidConfig(
                "risk levels must be strictly ascending within (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Sweep section: which calibrated columns to evaluate and how deferred
/// queries pick a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub defer: DeferPolicy,
    pub knn_k: usize,
    pub cost_targets: Vec<f64>,
    pub accuracy_targets: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            alphas: crate::calibration::default_alpha_grid(),
            defer: DeferPolicy::Inclusive,
            knn_k: 16,
            cost_targets: vec![],
            accuracy_targets: vec![],
        }
    }
}

impl SweepSection {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(0.0 < a && a < 1.0)) {
            return Err(Error::InvalidConfig(
                "sweep risk levels must lie in (0, 1)".into(),
            ));
        }
        if self.knn_k == 0 {
            return Err(Error::InvalidConfig("knn_k must be at least 1".into()));
        }
        EvalConfig {
            cost_targets: self.cost_targets.clone(),
            accuracy_targets: self.accuracy_targets.clone(),
        }
        .validate()
    }
}

/// Fully resolved pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: SyntheticConfig,
    pub cost: CostSection,
    pub teacher: TeacherConfig,
    pub gate: GateConfig,
    pub calibration: CalibrationSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate(self.cost.models.len())?;
        self.pool()?;
        self.cost.comm.validate()?;
        self.cost.ue.validate()?;
        CostWeights::new(
            self.cost.weights.omega_t,
            self.cost.weights.omega_e,
            self.cost.weights.t0,
            self.cost.weights.e0,
        )?;
        if self.cost.reference_samples == 0 {
            return Err(Error::InvalidConfig(
                "reference_samples must be at least 1".into(),
            ));
        }
        self.teacher.validate()?;
        self.gate.validate()?;
        self.calibration.validate()?;
        self.sweep.validate()?;
        for a in &self.sweep.alphas {
            if !self.calibration.alphas.iter().any(|b| (a - b).abs() < 1e-12) {
                return Err(Error::InvalidConfig(format!(
                    "sweep risk level {a} is not in the calibration grid"
                )));
            }
        }
        Ok(())
    }

    pub fn pool(&self) -> Result<ModelPool> {
        ModelPool::new(self.cost.models.clone())
    }

    pub fn deployment(&self) -> Result<DeploymentModel> {
        DeploymentModel::new(
            self.pool()?,
            self.cost.comm.clone(),
            self.cost.ue.clone(),
            self.cost.weights,
        )
    }

    /// Canonical resolved form; identical configs produce identical bytes.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.resolved_toml().as_bytes())
    }
}
