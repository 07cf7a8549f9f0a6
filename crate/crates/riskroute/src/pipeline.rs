//! Pipeline stages chained by content hash.
//!
//! Each stage writes its artifact plus a `*.meta.json` sidecar recording
//! the seed, the resolved-config hash, and the hashes of every input it
//! consumed. A stage refuses to run against inputs whose recomputed
//! hashes disagree with the provenance embedded upstream, so a stale or
//! tampered artifact stops the chain instead of contaminating it. All
//! randomness derives from the config seed; rerunning any stage with
//! identical inputs reproduces identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{
    file_sha256, load_gate, load_teacher, require_hash, save_gate, save_teacher, GateMeta,
    StageSidecar, TeacherMeta,
};
use crate::calibration::{build_table, risk_report, TableProvenance, ThresholdTable};
use crate::config::RunConfig;
use crate::cost::{DeploymentModel, SystemState};
use crate::dataset::{attach_states, generate_synthetic, load_tabular, save_tabular, RoutingDataset, Split};
use crate::error::{Error, Result};
use crate::gate::{train_gate, GateParams};
use crate::rng::{stream, StreamRole};
use crate::router::{evaluate_sweep, knn_probabilities, SweepResult};
use crate::teacher::{full_info_select, teacher_forward, train_teacher, TeacherParams};

/// File layout of one pipeline run directory.
#[derive(Debug, Clone)]
pub struct PipelinePaths {
    pub root: PathBuf,
}

impl PipelinePaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.toml")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }
    pub fn teacher(&self) -> PathBuf {
        self.root.join("teacher.ckpt")
    }
    pub fn gate(&self) -> PathBuf {
        self.root.join("gate.ckpt")
    }
    pub fn thresholds(&self) -> PathBuf {
        self.root.join("thresholds.txt")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
    pub fn envelope(&self) -> PathBuf {
        self.root.join("envelope.csv")
    }
    pub fn risk(&self) -> PathBuf {
        self.root.join("risk.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    /// Sidecar path for an artifact in this run directory.
    pub fn sidecar(&self, artifact: &Path) -> PathBuf {
        let stem = artifact
            .file_stem()
            .expect("artifact files have names")
            .to_string_lossy();
        artifact.with_file_name(format!("{stem}.meta.json"))
    }
}

fn prepare_dir(cfg: &RunConfig, paths: &PipelinePaths) -> Result<()> {
    std::fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    let resolved = paths.resolved_config();
    std::fs::write(&resolved, cfg.resolved_toml()).map_err(|e| Error::io(&resolved, e))
}

fn write_sidecar(
    cfg: &RunConfig,
    paths: &PipelinePaths,
    stage: &str,
    artifact: &Path,
    inputs: &[(&str, &str)],
) -> Result<()> {
    let sidecar = StageSidecar {
        stage: stage.to_string(),
        seed: cfg.seed,
        config_sha256: cfg.sha256(),
        inputs: inputs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
        output_sha256: file_sha256(artifact)?,
    };
    sidecar.save(&paths.sidecar(artifact))
}

/// True when the artifact and its sidecar already exist, the sidecar was
/// produced under this exact config, its recorded inputs match, and the
/// artifact bytes still hash to the recorded output.
fn cached(
    cfg: &RunConfig,
    paths: &PipelinePaths,
    artifact: &Path,
    inputs: &[(&str, &str)],
) -> bool {
    let Ok(sidecar) = StageSidecar::load(&paths.sidecar(artifact)) else {
        return false;
    };
    if sidecar.config_sha256 != cfg.sha256() || sidecar.seed != cfg.seed {
        return false;
    }
    let want: BTreeMap<String, String> = inputs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    if sidecar.inputs != want {
        return false;
    }
    matches!(file_sha256(artifact), Ok(h) if h == sidecar.output_sha256)
}

/// Generates the synthetic routing dataset and writes it in tabular form.
pub fn stage_gen_data(cfg: &RunConfig, paths: &PipelinePaths) -> Result<PathBuf> {
    cfg.validate()?;
    prepare_dir(cfg, paths)?;
    let out = paths.dataset();
    if cached(cfg, paths, &out, &[]) {
        return Ok(out);
    }
    let pool = cfg.pool()?;
    let mut rng = stream(cfg.seed, StreamRole::DatasetGen);
    let (ds, _) = generate_synthetic(&cfg.dataset, &pool.model_ids(), &mut rng)?;
    save_tabular(&ds, &out)?;
    write_sidecar(cfg, paths, "gen-data", &out, &[])?;
    Ok(out)
}

/// Loads and validates the dataset, returning it with its file hash.
fn checked_dataset(cfg: &RunConfig, paths: &PipelinePaths) -> Result<(RoutingDataset, String)> {
    let path = paths.dataset();
    let hash = file_sha256(&path)?;
    let ds = load_tabular(&path)?;
    if ds.model_ids != cfg.pool()?.model_ids() {
        return Err(Error::InvalidConfig(
            "dataset model list disagrees with the configured pool".into(),
        ));
    }
    Ok((ds, hash))
}

fn checked_teacher(
    cfg: &RunConfig,
    paths: &PipelinePaths,
    dataset_hash: &str,
) -> Result<(TeacherParams, String)> {
    let path = paths.teacher();
    let hash = file_sha256(&path)?;
    if let Ok(sidecar) = StageSidecar::load(&paths.sidecar(&path)) {
        require_hash(&path, &sidecar.output_sha256)?;
    }
    let (params, meta) = load_teacher(&path)?;
    if meta.dataset_hash != dataset_hash {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: meta.dataset_hash,
            got: dataset_hash.to_string(),
        });
    }
    if meta.config_hash != cfg.sha256() {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: meta.config_hash,
            got: cfg.sha256(),
        });
    }
    Ok((params, hash))
}

fn checked_gate(
    cfg: &RunConfig,
    paths: &PipelinePaths,
    dataset_hash: &str,
    teacher_hash: &str,
) -> Result<(GateParams, String)> {
    let path = paths.gate();
    let hash = file_sha256(&path)?;
    if let Ok(sidecar) = StageSidecar::load(&paths.sidecar(&path)) {
        require_hash(&path, &sidecar.output_sha256)?;
    }
    let (params, meta) = load_gate(&path)?;
    if meta.dataset_hash != dataset_hash || meta.teacher_hash != teacher_hash {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: format!("dataset {} teacher {}", meta.dataset_hash, meta.teacher_hash),
            got: format!("dataset {dataset_hash} teacher {teacher_hash}"),
        });
    }
    if meta.config_hash != cfg.sha256() {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: meta.config_hash,
            got: cfg.sha256(),
        });
    }
    Ok((params, hash))
}

fn checked_table(
    cfg: &RunConfig,
    paths: &PipelinePaths,
    dataset_hash: &str,
    teacher_hash: &str,
    gate_hash: &str,
) -> Result<ThresholdTable> {
    let path = paths.thresholds();
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let table = ThresholdTable::load(&path)?;
    let p = &table.provenance;
    if p.dataset_hash != dataset_hash || p.teacher_hash != teacher_hash || p.gate_hash != gate_hash
    {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: format!(
                "dataset {} teacher {} gate {}",
                p.dataset_hash, p.teacher_hash, p.gate_hash
            ),
            got: format!("dataset {dataset_hash} teacher {teacher_hash} gate {gate_hash}"),
        });
    }
    let _ = cfg;
    Ok(table)
}

/// Trains the per-model teacher heads on the train split.
pub fn stage_train_teacher(cfg: &RunConfig, paths: &PipelinePaths) -> Result<PathBuf> {
    cfg.validate()?;
    prepare_dir(cfg, paths)?;
    let (ds, dataset_hash) = checked_dataset(cfg, paths)?;
    let out = paths.teacher();
    let inputs = [("dataset", dataset_hash.as_str())];
    if cached(cfg, paths, &out, &inputs) {
        return Ok(out);
    }
    let params = train_teacher(&ds, &cfg.teacher, cfg.seed)?;
    let meta = TeacherMeta {
        dataset_hash: dataset_hash.clone(),
        config_hash: cfg.sha256(),
        seed: cfg.seed,
    };
    save_teacher(&out, &params, &meta)?;
    write_sidecar(cfg, paths, "train-teacher", &out, &inputs)?;
    Ok(out)
}

/// Distills the frozen teacher's margin sign into the deployable gate.
pub fn stage_train_gate(cfg: &RunConfig, paths: &PipelinePaths) -> Result<PathBuf> {
    cfg.validate()?;
    prepare_dir(cfg, paths)?;
    let (ds, dataset_hash) = checked_dataset(cfg, paths)?;
    let (teacher, teacher_hash) = checked_teacher(cfg, paths, &dataset_hash)?;
    let out = paths.gate();
    let inputs = [
        ("dataset", dataset_hash.as_str()),
        ("teacher", teacher_hash.as_str()),
    ];
    if cached(cfg, paths, &out, &inputs) {
        return Ok(out);
    }
    let deployment = cfg.deployment()?;
    let (params, _report) = train_gate(&ds, &teacher, &deployment, &cfg.gate, cfg.seed)?;
    let meta = GateMeta {
        dataset_hash: dataset_hash.clone(),
        teacher_hash: teacher_hash.clone(),
        config_hash: cfg.sha256(),
        seed: cfg.seed,
    };
    save_gate(&out, &params, &meta)?;
    write_sidecar(cfg, paths, "train-gate", &out, &inputs)?;
    Ok(out)
}

/// Deterministic per-query runtime states for calibration and evaluation.
pub fn pipeline_states(cfg: &RunConfig, n_queries: usize) -> Vec<SystemState> {
    attach_states(n_queries, &cfg.cost.comm, cfg.seed)
}

/// Calibrates the threshold table on the calibration split.
pub fn stage_calibrate(cfg: &RunConfig, paths: &PipelinePaths) -> Result<PathBuf> {
    cfg.validate()?;
    prepare_dir(cfg, paths)?;
    let (ds, dataset_hash) = checked_dataset(cfg, paths)?;
    let (teacher, teacher_hash) = checked_teacher(cfg, paths, &dataset_hash)?;
    let (gate, gate_hash) = checked_gate(cfg, paths, &dataset_hash, &teacher_hash)?;
    let out = paths.thresholds();
    let inputs = [
        ("dataset", dataset_hash.as_str()),
        ("teacher", teacher_hash.as_str()),
        ("gate", gate_hash.as_str()),
    ];
    if cached(cfg, paths, &out, &inputs) {
        return Ok(out);
    }
    let deployment = cfg.deployment()?;
    let states = pipeline_states(cfg, ds.queries.len());
    let table = build_table(
        &gate,
        &teacher,
        &deployment,
        &ds,
        &states,
        &cfg.calibration.lambda_grid(),
        &cfg.calibration.alphas,
        TableProvenance {
            gate_hash: gate_hash.clone(),
            teacher_hash: teacher_hash.clone(),
            dataset_hash: dataset_hash.clone(),
        },
    )?;
    table.save(&out)?;
    write_sidecar(cfg, paths, "calibrate", &out, &inputs)?;
    Ok(out)
}

/// One reference policy's metrics at one cost weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub lambda: f64,
    pub accuracy: f64,
    pub mean_cost: f64,
}

/// A static single-model policy's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPoint {
    pub model_id: String,
    pub accuracy: f64,
    pub mean_cost: f64,
}

/// Hashes, baselines, and reference curves for one completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_sha256: String,
    pub artifacts: BTreeMap<String, String>,
    pub static_points: Vec<StaticPoint>,
    pub full_info: Vec<PolicyPoint>,
    pub knn: Vec<PolicyPoint>,
}

/// Per-model and per-policy evaluation shared by the sweep stage and the
/// verification harness.
pub struct EvalBundle {
    /// Indices into the test split used for accuracy and cost.
    pub eval_pos: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
}

/// Precomputes teacher probabilities and per-state costs over the test
/// split; `eval_pos` indexes the answerable subset within `test_idx`.
pub fn eval_bundle(
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
    ds: &RoutingDataset,
    states: &[SystemState],
) -> Result<EvalBundle> {
    let test_idx = ds.split_indices(Split::Test);
    if test_idx.is_empty() {
        return Err(Error::EmptySet("test split".into()));
    }
    let eval_set: std::collections::HashSet<usize> =
        ds.eval_test_indices().into_iter().collect();
    let eval_pos: Vec<usize> = test_idx
        .iter()
        .enumerate()
        .filter(|(_, &qi)| eval_set.contains(&qi))
        .map(|(k, _)| k)
        .collect();
    if eval_pos.is_empty() {
        return Err(Error::EmptySet("evaluation subset of the test split".into()));
    }
    let probs = test_idx
        .iter()
        .map(|&i| teacher_forward(teacher, &ds.queries[i].embedding).map(|(_, p)| p))
        .collect::<Result<_>>()?;
    let costs = test_idx
        .iter()
        .map(|&i| deployment.costs(&ds.queries[i].workload(), &states[i]))
        .collect();
    Ok(EvalBundle {
        eval_pos,
        test_idx,
        probs,
        costs,
    })
}

impl EvalBundle {
    /// Accuracy and mean cost of `select(k)` over the evaluation subset,
    /// where `k` indexes the test split.
    pub fn score_policy(
        &self,
        ds: &RoutingDataset,
        mut select: impl FnMut(usize) -> usize,
    ) -> (f64, f64) {
        let mut correct = 0.0;
        let mut cost = 0.0;
        for &k in &self.eval_pos {
            let m = select(k);
            correct += f64::from(ds.queries[self.test_idx[k]].correctness[m]);
            cost += self.costs[k][m];
        }
        let n = self.eval_pos.len() as f64;
        (correct / n, cost / n)
    }

    /// Full-information reference curve over a cost-weight grid.
    pub fn full_info_curve(&self, ds: &RoutingDataset, lambda_grid: &[f64]) -> Vec<PolicyPoint> {
        lambda_grid
            .iter()
            .map(|&lambda| {
                let (accuracy, mean_cost) = self.score_policy(ds, |k| {
                    full_info_select(&self.probs[k], &self.costs[k], lambda)
                });
                PolicyPoint {
                    lambda,
                    accuracy,
                    mean_cost,
                }
            })
            .collect()
    }
}

/// Evaluates the calibrated sweep plus baselines and writes the tabular
/// outputs and the summary document.
pub fn stage_sweep(cfg: &RunConfig, paths: &PipelinePaths) -> Result<PathBuf> {
    cfg.validate()?;
    prepare_dir(cfg, paths)?;
    let (ds, dataset_hash) = checked_dataset(cfg, paths)?;
    let (teacher, teacher_hash) = checked_teacher(cfg, paths, &dataset_hash)?;
    let (gate, gate_hash) = checked_gate(cfg, paths, &dataset_hash, &teacher_hash)?;
    let table = checked_table(cfg, paths, &dataset_hash, &teacher_hash, &gate_hash)?;
    let table_hash = file_sha256(&paths.thresholds())?;
    let out = paths.sweep();
    let inputs = [
        ("dataset", dataset_hash.as_str()),
        ("teacher", teacher_hash.as_str()),
        ("gate", gate_hash.as_str()),
        ("thresholds", table_hash.as_str()),
    ];
    if cached(cfg, paths, &out, &inputs) {
        return Ok(out);
    }
    let deployment = cfg.deployment()?;
    let states = pipeline_states(cfg, ds.queries.len());

    let sweep: SweepResult = evaluate_sweep(
        &gate,
        &table,
        &teacher,
        &deployment,
        &ds,
        &states,
        &table.lambda_grid.clone(),
        &cfg.sweep.alphas,
        &cfg.sweep.defer,
    )?;
    std::fs::write(&out, sweep.to_text()).map_err(|e| Error::io(&out, e))?;
    let env_path = paths.envelope();
    std::fs::write(&env_path, sweep.envelope_text()).map_err(|e| Error::io(&env_path, e))?;

    let risk_rows = risk_report(&table, &gate, &teacher, &deployment, &ds, &states)?;
    let mut risk_text = String::from("lambda, alpha, tau, test_risk, accept_rate, n_cal\n");
    for r in &risk_rows {
        let tau = if r.tau.is_finite() {
            format!("{:.9e}", r.tau)
        } else {
            "inf".to_string()
        };
        risk_text.push_str(&format!(
            "{:.9e}, {:.9e}, {tau}, {:.9e}, {:.9e}, {}\n",
            r.lambda, r.alpha, r.test_risk, r.accept_rate, r.n_cal
        ));
    }
    let risk_path = paths.risk();
    std::fs::write(&risk_path, risk_text).map_err(|e| Error::io(&risk_path, e))?;

    let bundle = eval_bundle(&teacher, &deployment, &ds, &states)?;
    let mut static_points = Vec::new();
    for m in [deployment.local_index(), deployment.ref_index()] {
        let (accuracy, mean_cost) = bundle.score_policy(&ds, |_| m);
        static_points.push(StaticPoint {
            model_id: deployment.pool.profiles()[m].model_id.clone(),
            accuracy,
            mean_cost,
        });
    }
    let full_info = bundle.full_info_curve(&ds, &table.lambda_grid);
    let knn_probs: Vec<Vec<f64>> = bundle
        .test_idx
        .iter()
        .map(|&qi| knn_probabilities(&ds.queries[qi], &ds, cfg.sweep.knn_k))
        .collect::<Result<_>>()?;
    let knn = table
        .lambda_grid
        .iter()
        .map(|&lambda| {
            let (accuracy, mean_cost) = bundle.score_policy(&ds, |k| {
                full_info_select(&knn_probs[k], &bundle.costs[k], lambda)
            });
            PolicyPoint {
                lambda,
                accuracy,
                mean_cost,
            }
        })
        .collect();

    let mut artifacts = BTreeMap::new();
    artifacts.insert("dataset".to_string(), dataset_hash.clone());
    artifacts.insert("teacher".to_string(), teacher_hash.clone());
    artifacts.insert("gate".to_string(), gate_hash.clone());
    artifacts.insert("thresholds".to_string(), table_hash.clone());
    artifacts.insert("sweep".to_string(), file_sha256(&out)?);
    artifacts.insert("envelope".to_string(), file_sha256(&env_path)?);
    artifacts.insert("risk".to_string(), file_sha256(&risk_path)?);
    let summary = RunSummary {
        seed: cfg.seed,
        config_sha256: cfg.sha256(),
        artifacts,
        static_points,
        full_info,
        knn,
    };
    let summary_path = paths.summary();
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;

    write_sidecar(cfg, paths, "sweep", &out, &inputs)?;
    Ok(out)
}

/// Runs every stage in order, reusing cached artifacts where the hash
/// chain proves them current.
pub fn run_pipeline(cfg: &RunConfig, paths: &PipelinePaths) -> Result<()> {
    stage_gen_data(cfg, paths)?;
    stage_train_teacher(cfg, paths)?;
    stage_train_gate(cfg, paths)?;
    stage_calibrate(cfg, paths)?;
    stage_sweep(cfg, paths)?;
    Ok(())
}
