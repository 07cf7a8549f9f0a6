//! Online two-stage routing, baselines, sweep metrics, and complexity
//! accounting.
//!
//! The deployed rule evaluates the gate score `s = sigma(margin / T)` from
//! the embedding and the cost weight alone, accepts the local model iff
//! `s >= tau*(lambda; alpha)`, and otherwise runs the utility argmax
//! `max_m p_m - lambda c_m` over the deferral set with full state access.
//! Risk columns are measured on the unfiltered test split (exchangeable
//! with calibration traffic); accuracy and mean cost use the evaluation
//! subset that drops queries no pool model answers correctly.

use std::fmt::Write as _;

use crate::calibration::ThresholdTable;
use crate::cost::{DeploymentModel, SystemState, Tier};
use crate::dataset::{QueryRecord, RoutingDataset, Split};
use crate::error::{Error, Result};
use crate::gate::{gate_forward, GateParams, PSI_DIM};
use crate::teacher::{full_info_select, teacher_forward, TeacherParams};

/// One calibrated grid point the router runs at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub lambda: f64,
    pub alpha: f64,
}

/// Which models the deferred branch may select. The inclusive variant may
/// map a deferred query back to the local model; the others never do.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferPolicy {
    Inclusive,
    EdgeOnly,
    Fallback(String),
}

impl DeferPolicy {
    /// Deferral-set indices in pool order.
    pub fn candidate_indices(&self, deployment: &DeploymentModel) -> Result<Vec<usize>> {
        let profiles = deployment.pool.profiles();
        match self {
            DeferPolicy::Inclusive => Ok((0..profiles.len()).collect()),
            DeferPolicy::EdgeOnly => Ok(profiles
                .iter()
                .enumerate()
                .filter(|(_, p)| p.tier == Tier::Edge)
                .map(|(i, _)| i)
                .collect()),
            DeferPolicy::Fallback(id) => {
                let idx = profiles
                    .iter()
                    .position(|p| &p.model_id == id)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!("fallback model `{id}` not in pool"))
                    })?;
                if profiles[idx].tier != Tier::Edge {
                    return Err(Error::InvalidConfig(format!(
                        "fallback model `{id}` must be an edge model"
                    )));
                }
                Ok(vec![idx])
            }
        }
    }
}

/// First-stage mistake relative to the full-information selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateError {
    None,
    /// Deferred although the full-information rule keeps the query local.
    FalseDefer,
    /// Accepted locally although the full-information rule prefers edge.
    FalseAccept,
}

/// Routing decision and realized metrics for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutcome {
    pub selected: usize,
    pub model_id: String,
    pub accepted_locally: bool,
    pub correctness: u8,
    pub cost: f64,
    pub gate_error: GateError,
}

/// Routes one query at a calibrated operating point. The acceptance
/// decision consumes only (embedding, lambda); the state enters the
/// deferred branch alone, so two states can differ only in what a
/// deferred query is routed to, never in whether it defers.
#[allow(clippy::too_many_arguments)]
pub fn route_one(
    query: &QueryRecord,
    state: &SystemState,
    op: OperatingPoint,
    gate: &GateParams,
    table: &ThresholdTable,
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
    defer: &DeferPolicy,
) -> Result<RoutingOutcome> {
    let tau = table.lookup(op.lambda, op.alpha)?;
    let (_, score) = gate_forward(gate, &query.embedding, op.lambda)?;
    let accepted_locally = score >= tau;

    let (_, probs) = teacher_forward(teacher, &query.embedding)?;
    let costs = deployment.costs(&query.workload(), state);
    let local_idx = deployment.local_index();

    let selected = if accepted_locally {
        local_idx
    } else {
        let candidates = defer.candidate_indices(deployment)?;
        if candidates.is_empty() {
            return Err(Error::EmptySet("deferral candidate set".into()));
        }
        let sub_p: Vec<f64> = candidates.iter().map(|&m| probs[m]).collect();
        let sub_c: Vec<f64> = candidates.iter().map(|&m| costs[m]).collect();
        candidates[full_info_select(&sub_p, &sub_c, op.lambda)]
    };

    let full_info = full_info_select(&probs, &costs, op.lambda);
    let gate_error = match (accepted_locally, full_info == local_idx) {
        (true, false) => GateError::FalseAccept,
        (false, true) => GateError::FalseDefer,
        _ => GateError::None,
    };

    Ok(RoutingOutcome {
        selected,
        model_id: deployment.pool.profiles()[selected].model_id.clone(),
        accepted_locally,
        correctness: query.correctness[selected],
        cost: costs[selected],
        gate_error,
    })
}

/// Full-information reference rule: scalarized utility argmax over the
/// whole pool with teacher probabilities and realized state costs.
pub fn full_info_route(
    query: &QueryRecord,
    state: &SystemState,
    lambda: f64,
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
) -> Result<usize> {
    let (_, probs) = teacher_forward(teacher, &query.embedding)?;
    let costs = deployment.costs(&query.workload(), state);
    Ok(full_info_select(&probs, &costs, lambda))
}

/// Per-model correctness estimate from the `k` training embeddings most
/// cosine-similar to the query: a brute-force scan over the train split,
/// similarity ties keeping the earlier training index.
pub fn knn_probabilities(query: &QueryRecord, ds: &RoutingDataset, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let train_idx = ds.split_indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::EmptySet("training split".into()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q_norm = norm(&query.embedding);
    let mut scored: Vec<(f64, usize)> = train_idx
        .iter()
        .map(|&i| {
            let e = &ds.queries[i].embedding;
            let denom = q_norm * norm(e);
            let sim = if denom > 0.0 {
                query
                    .embedding
                    .iter()
                    .zip(e)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / denom
            } else {
                0.0
            };
            (sim, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let kept = &scored[..k.min(scored.len())];

    let mut p_hat = vec![0.0; ds.model_ids.len()];
    for &(_, i) in kept {
        for (m, &bit) in ds.queries[i].correctness.iter().enumerate() {
            p_hat[m] += f64::from(bit);
        }
    }
    for p in &mut p_hat {
        *p /= kept.len() as f64;
    }
    Ok(p_hat)
}

/// Nearest-neighbor baseline: neighborhood correctness estimates fed into
/// the same utility argmax as the full-information rule.
pub fn knn_route(
    query: &QueryRecord,
    state: &SystemState,
    lambda: f64,
    ds: &RoutingDataset,
    deployment: &DeploymentModel,
    k: usize,
) -> Result<usize> {
    let p_hat = knn_probabilities(query, ds, k)?;
    let costs = deployment.costs(&query.workload(), state);
    Ok(full_info_select(&p_hat, &costs, lambda))
}

/// First-stage error rates over a batch of outcomes: the two rates
/// partition the total disagreement with the full-information local/defer
/// decision.
pub fn gate_error_decomposition(outcomes: &[RoutingOutcome]) -> (f64, f64) {
    if outcomes.is_empty() {
        return (0.0, 0.0);
    }
    let n = outcomes.len() as f64;
    let fd = outcomes
        .iter()
        .filter(|o| o.gate_error == GateError::FalseDefer)
        .count() as f64;
    let fa = outcomes
        .iter()
        .filter(|o| o.gate_error == GateError::FalseAccept)
        .count() as f64;
    (fd / n, fa / n)
}

/// Aggregate metrics at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub alpha: f64,
    /// Mean correctness on the evaluation subset (answerable queries).
    pub accuracy: f64,
    /// Mean normalized cost on the same subset.
    pub mean_cost: f64,
    /// Fraction of all test queries accepted locally against the
    /// full-information preference for edge.
    pub fa_risk: f64,
    /// Fraction of all test queries accepted locally.
    pub local_rate: f64,
    pub false_defer: f64,
    pub false_accept: f64,
}

/// Sweep rows plus their non-dominated (accuracy up, cost down) subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub envelope: Vec<SweepRow>,
}

pub const SWEEP_COLUMNS: &str = "lambda, alpha, accuracy, mean_cost, fa_risk, local_rate, false_defer, false_accept";

fn write_rows(out: &mut String, rows: &[SweepRow]) {
    let _ = writeln!(out, "{SWEEP_COLUMNS}");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.9e}, {:.9e}, {:.9e}, {:.9e}, {:.9e}, {:.9e}, {:.9e}, {:.9e}",
            r.lambda, r.alpha, r.accuracy, r.mean_cost, r.fa_risk, r.local_rate, r.false_defer,
            r.false_accept
        );
    }
}

impl SweepResult {
    /// Plot-ready tabular text, one row per operating point.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_rows(&mut out, &self.rows);
        out
    }

    /// The Pareto-envelope table, cheapest row first.
    pub fn envelope_text(&self) -> String {
        let mut out = String::new();
        write_rows(&mut out, &self.envelope);
        out
    }
}

/// Rows not dominated in the (accuracy, mean cost) plane, sorted by cost
/// ascending. A row is dominated when another is at least as accurate and
/// at most as costly, strictly better in one of the two.
pub fn pareto_envelope(rows: &[SweepRow]) -> Vec<SweepRow> {
    let dominated = |a: &SweepRow| {
        rows.iter().any(|b| {
            b.accuracy >= a.accuracy
                && b.mean_cost <= a.mean_cost
                && (b.accuracy > a.accuracy || b.mean_cost < a.mean_cost)
        })
    };
    let mut keep: Vec<SweepRow> = rows.iter().filter(|r| !dominated(r)).copied().collect();
    keep.sort_by(|a, b| {
        a.mean_cost
            .partial_cmp(&b.mean_cost)
            .unwrap()
            .then(a.accuracy.partial_cmp(&b.accuracy).unwrap())
    });
    keep
}

/// Reporting anchors for frontier comparisons at fixed budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub cost_targets: Vec<f64>,
    pub accuracy_targets: Vec<f64>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .cost_targets
            .iter()
            .chain(&self.accuracy_targets)
            .any(|&t| !(t > 0.0 && t.is_finite()))
        {
            return Err(Error::InvalidConfig(
                "reporting targets must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Best accuracy among rows within the cost budget; `None` when no row
/// qualifies. No interpolation: the nearest achieved point is reported.
pub fn fixed_cost_accuracy(rows: &[SweepRow], cost_target: f64) -> Option<SweepRow> {
    rows.iter()
        .filter(|r| r.mean_cost <= cost_target)
        .copied()
        .max_by(|a, b| a.accuracy.partial_cmp(&b.accuracy).unwrap())
}

/// Cheapest row achieving the accuracy target; `None` when unattained.
pub fn fixed_accuracy_cost(rows: &[SweepRow], accuracy_target: f64) -> Option<SweepRow> {
    rows.iter()
        .filter(|r| r.accuracy >= accuracy_target)
        .copied()
        .min_by(|a, b| a.mean_cost.partial_cmp(&b.mean_cost).unwrap())
}

/// Evaluates the router over the (cost weight, risk level) grid of the
/// threshold table restricted to `lambda_grid` x `alpha_set`. Scores,
/// teacher probabilities, and deferral selections are shared across risk
/// levels; thresholding is the only per-level work. The reduction is a
/// deterministic ordered fold, so results are independent of evaluation
/// order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_sweep(
    gate: &GateParams,
    table: &ThresholdTable,
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
    ds: &RoutingDataset,
    states: &[SystemState],
    lambda_grid: &[f64],
    alpha_set: &[f64],
    defer: &DeferPolicy,
) -> Result<SweepResult> {
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
    let eval_idx = ds.eval_test_indices();
    if eval_idx.is_empty() {
        return Err(Error::EmptySet("evaluation subset of the test split".into()));
    }
    let in_eval: Vec<bool> = {
        let mut mask = vec![false; ds.queries.len()];
        for &i in &eval_idx {
            mask[i] = true;
        }
        test_idx.iter().map(|&i| mask[i]).collect()
    };
    let local_idx = deployment.local_index();
    let candidates = defer.candidate_indices(deployment)?;
    if candidates.is_empty() {
        return Err(Error::EmptySet("deferral candidate set".into()));
    }

    let probs: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| teacher_forward(teacher, &ds.queries[i].embedding).map(|(_, p)| p))
        .collect::<Result<_>>()?;
    let costs: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| deployment.costs(&ds.queries[i].workload(), &states[i]))
        .collect();

    let n_test = test_idx.len() as f64;
    let n_eval = in_eval.iter().filter(|&&b| b).count() as f64;
    let mut rows = Vec::with_capacity(lambda_grid.len() * alpha_set.len());
    for &lambda in lambda_grid {
        let scores: Vec<f64> = test_idx
            .iter()
            .map(|&i| gate_forward(gate, &ds.queries[i].embedding, lambda).map(|(_, s)| s))
            .collect::<Result<_>>()?;
        let full_info: Vec<usize> = probs
            .iter()
            .zip(&costs)
            .map(|(p, c)| full_info_select(p, c, lambda))
            .collect();
        let deferred_to: Vec<usize> = probs
            .iter()
            .zip(&costs)
            .map(|(p, c)| {
                let sub_p: Vec<f64> = candidates.iter().map(|&m| p[m]).collect();
                let sub_c: Vec<f64> = candidates.iter().map(|&m| c[m]).collect();
                candidates[full_info_select(&sub_p, &sub_c, lambda)]
            })
            .collect();

        for &alpha in alpha_set {
            let tau = table.lookup(lambda, alpha)?;
            let mut correct = 0.0;
            let mut cost_sum = 0.0;
            let mut fa = 0usize;
            let mut fd = 0usize;
            let mut accepts = 0usize;
            for (k, &qi) in test_idx.iter().enumerate() {
                let accepted = scores[k] >= tau;
                let selected = if accepted { local_idx } else { deferred_to[k] };
                if accepted {
                    accepts += 1;
                    fa += usize::from(full_info[k] != local_idx);
                } else {
                    fd += usize::from(full_info[k] == local_idx);
                }
                if in_eval[k] {
                    correct += f64::from(ds.queries[qi].correctness[selected]);
                    cost_sum += costs[k][selected];
                }
            }
            rows.push(SweepRow {
                lambda,
                alpha,
                accuracy: correct / n_eval,
                mean_cost: cost_sum / n_eval,
                fa_risk: fa as f64 / n_test,
                local_rate: accepts as f64 / n_test,
                false_defer: fd as f64 / n_test,
                false_accept: fa as f64 / n_test,
            });
        }
    }
    let envelope = pareto_envelope(&rows);
    Ok(SweepResult { rows, envelope })
}

/// Router head whose serving complexity is being counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouterArtifact {
    Gate { emb_dim: usize, hidden: usize },
    TeacherHeads { emb_dim: usize, hidden: usize, n_models: usize },
    Knn { n_train: usize, emb_dim: usize },
}

/// Parameters and per-query FLOPs for a stack of dense layers: weights
/// plus biases for parameters, two FLOPs per multiply-accumulate plus one
/// per activation evaluation.
pub fn dense_complexity(layers: &[(usize, usize, usize)], activations: usize) -> (usize, usize) {
    let params: usize = layers.iter().map(|&(i, o, b)| i * o + b).sum();
    let macs: usize = layers.iter().map(|&(i, o, _)| i * o).sum();
    (params, 2 * macs + activations)
}

/// Exact serving complexity under the documented convention: dense
/// multiply-accumulates at 2 FLOPs, activation evaluations at 1,
/// normalization and feature-map overheads excluded.
pub fn router_complexity(artifact: &RouterArtifact) -> (usize, usize) {
    match *artifact {
        RouterArtifact::Gate { emb_dim, hidden } => {
            // W1 without bias, FiLM generator, scalar head with bias, plus
            // the temperature parameter; GELU per hidden unit and one
            // output sigmoid.
            let layers = [
                (emb_dim, hidden, 0),
                (PSI_DIM, 2 * hidden, 0),
                (hidden, 1, 1),
            ];
            let (params, flops) = dense_complexity(&layers, hidden + 1);
            (params + 1, flops)
        }
        RouterArtifact::TeacherHeads {
            emb_dim,
            hidden,
            n_models,
        } => {
            let layers = [(emb_dim, hidden, hidden), (hidden, 1, 1)];
            let (p, f) = dense_complexity(&layers, hidden + 1);
            (n_models * p, n_models * f)
        }
        RouterArtifact::Knn { n_train, emb_dim } => {
            // Cosine scan over the training set plus query normalization.
            (0, 2 * n_train * emb_dim + 2 * emb_dim)
        }
    }
}
