//! Verification suite: nine acceptance criteria covering the statistical
//! guarantee, formula equivalences, gradient fidelity, cost-model
//! exactness, margin structure, end-to-end learnability, policy
//! monotonicity, and artifact determinism. Each criterion returns a
//! pass/fail line; tolerances are pinned here, next to the checks.

use std::time::Instant;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::calibration::{
    calibrate_threshold, crc_correction, empirical_risk, log_spaced_grid, CalibrationRecord,
};
use crate::config::RunConfig;
use crate::cost::{link_rate, Direction};
use crate::dataset::{generate_synthetic, Split};
use crate::error::{Error, Result};
use crate::gate::{gate_forward, gate_loss_grad, GateBatch, GateLossWeights, GateParams};
use crate::numeric::gradcheck::{check_gradient, GradCheckConfig};
use crate::pipeline::{
    eval_bundle, pipeline_states, run_pipeline, PipelinePaths,
};
use crate::rng::{stream, substream, StreamRole};
use crate::router::{evaluate_sweep, pareto_envelope, SweepRow};
use crate::teacher::{
    full_info_select, teacher_forward, teacher_loss_grad, teacher_margin, TeacherLossWeights,
    TeacherParams,
};

/// One acceptance criterion's outcome.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        format!("{} {}: {}", self.id, verdict, self.detail)
    }
}

struct LoadedRun {
    teacher: TeacherParams,
    gate: GateParams,
}

fn load_run(paths: &PipelinePaths) -> Result<LoadedRun> {
    let (teacher, _) = crate::artifact::load_teacher(&paths.teacher())?;
    let (gate, _) = crate::artifact::load_gate(&paths.gate())?;
    Ok(LoadedRun { teacher, gate })
}

/// Runs the pipeline (cached when current) and then every criterion, in
/// order. A failing criterion is a `pass: false` row, not an error.
pub fn run_all(cfg: &RunConfig, paths: &PipelinePaths) -> Result<Vec<CriterionResult>> {
    cfg.validate()?;
    run_pipeline(cfg, paths)?;
    let run = load_run(paths)?;

    // A9 also times two fresh end-to-end runs; A7 reuses that wall time.
    let (a9, fresh_secs) = a9_determinism(cfg, paths)?;

    Ok(vec![
        a1_crc_guarantee(cfg, &run)?,
        a2_crc_forms(cfg),
        a3_threshold_exactness(cfg),
        a4_gradient_fidelity(cfg),
        a5_cost_exactness(cfg)?,
        a6_margin_structure(cfg)?,
        a7_learnability(cfg, paths, &run, fresh_secs)?,
        a8_cost_monotonicity(cfg),
        a9,
    ])
}

/// A1: mean test false-acceptance risk over 200 exchangeable
/// (cal 2000, test 2000) draws stays within Monte-Carlo slack of alpha,
/// per cost weight and risk level, with the frozen pipeline gate.
fn a1_crc_guarantee(cfg: &RunConfig, run: &LoadedRun) -> Result<CriterionResult> {
    let deployment = cfg.deployment()?;
    let n_cal = 2000;
    let n_test = 2000;
    let n_draws = 200;
    let mut gen_cfg = cfg.dataset.clone();
    gen_cfg.n_queries = 40_000;
    let mut rng = stream(cfg.seed, StreamRole::Eval);
    let (pool, _) = generate_synthetic(&gen_cfg, &deployment.pool.model_ids(), &mut rng)?;

    let lambdas = log_spaced_grid(0.1, 20.0, 6);
    let alphas = [0.002, 0.01, 0.05];
    let probs: Vec<Vec<f64>> = pool
        .queries
        .iter()
        .map(|q| teacher_forward(&run.teacher, &q.embedding).map(|(_, p)| p))
        .collect::<Result<_>>()?;
    let scores: Vec<Vec<f64>> = lambdas
        .iter()
        .map(|&l| {
            pool.queries
                .iter()
                .map(|q| gate_forward(&run.gate, &q.embedding, l).map(|(_, s)| s))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let local_idx = deployment.local_index();

    let mut risk_sum = vec![[0.0f64; 3]; lambdas.len()];
    for draw in 0..n_draws {
        let mut drng = substream(cfg.seed, StreamRole::Eval, draw as u64);
        let picked = index_sample(&mut drng, pool.queries.len(), n_cal + n_test);
        let idx: Vec<usize> = picked.into_iter().collect();
        let costs: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let state = deployment.sample_state(&mut drng);
                deployment.costs(&pool.queries[i].workload(), &state)
            })
            .collect();
        for (li, _) in lambdas.iter().enumerate() {
            let lambda = lambdas[li];
            let records: Vec<CalibrationRecord> = (0..n_cal)
                .map(|k| CalibrationRecord {
                    score: scores[li][idx[k]],
                    disagree: u8::from(
                        full_info_select(&probs[idx[k]], &costs[k], lambda) != local_idx,
                    ),
                })
                .collect();
            for (ai, &alpha) in alphas.iter().enumerate() {
                let tau = calibrate_threshold(&records, alpha)?;
                let mut hits = 0usize;
                for k in n_cal..n_cal + n_test {
                    let accepted = scores[li][idx[k]] >= tau;
                    if accepted && full_info_select(&probs[idx[k]], &costs[k], lambda) != local_idx
                    {
                        hits += 1;
                    }
                }
                risk_sum[li][ai] += hits as f64 / n_test as f64;
            }
        }
    }

    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_at = String::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        for (ai, &alpha) in alphas.iter().enumerate() {
            let mean_risk = risk_sum[li][ai] / n_draws as f64;
            let bound = alpha + 3.0 * (alpha / (n_draws as f64 * n_test as f64)).sqrt();
            let excess = mean_risk - bound;
            if excess > worst_excess {
                worst_excess = excess;
                worst_at = format!(
                    "lambda {lambda:.3} alpha {alpha}: mean risk {mean_risk:.6} vs bound {bound:.6}"
                );
            }
        }
    }
    Ok(CriterionResult {
        id: "A1",
        pass: worst_excess <= 0.0,
        detail: format!(
            "mean FA risk within Monte-Carlo slack on {} (lambda, alpha) cells over {n_draws} draws; tightest cell {worst_at}",
            lambdas.len() * alphas.len()
        ),
    })
}

/// A2: both algebraic forms of the conformal correction agree to 1e-15 on
/// 1,000 random record sets.
fn a2_crc_forms(cfg: &RunConfig) -> CriterionResult {
    let mut rng = substream(cfg.seed, StreamRole::Eval, 1_000_001);
    let mut max_diff = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let records: Vec<CalibrationRecord> = (0..n)
            .map(|_| CalibrationRecord {
                score: rng.random_range(0.0..1.0),
                disagree: u8::from(rng.random_range(0.0..1.0) < 0.3),
            })
            .collect();
        let tau = rng.random_range(0.0..1.0);
        let n_v = records.len() as f64;
        let via_risk =
            (n_v / (n_v + 1.0)) * empirical_risk(&records, tau).unwrap() + 1.0 / (n_v + 1.0);
        let via_count = crc_correction(&records, tau).unwrap();
        max_diff = max_diff.max((via_risk - via_count).abs());
    }
    CriterionResult {
        id: "A2",
        pass: max_diff <= 1e-15,
        detail: format!("max deviation between correction forms {max_diff:.2e} over 1000 sets (tolerance 1e-15)"),
    }
}

/// A3: the threshold scan equals brute force on 1,000 random instances
/// with up to 200 records, and thresholds never increase with alpha.
fn a3_threshold_exactness(cfg: &RunConfig) -> CriterionResult {
    let mut rng = substream(cfg.seed, StreamRole::Eval, 1_000_002);
    let mut mismatches = 0usize;
    let mut monotone_violations = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let records: Vec<CalibrationRecord> = (0..n)
            .map(|_| {
                // A coarse score grid now and then forces duplicate
                // candidates through the dedup path.
                let score = if rng.random_range(0.0..1.0) < 0.3 {
                    (rng.random_range(0.0f64..1.0) * 8.0).round() / 8.0
                } else {
                    rng.random_range(0.0..1.0)
                };
                CalibrationRecord {
                    score,
                    disagree: u8::from(rng.random_range(0.0..1.0) < 0.3),
                }
            })
            .collect();
        let mut alphas: Vec<f64> = (0..4).map(|_| rng.random_range(0.005..0.9)).collect();
        alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = f64::INFINITY;
        for &alpha in &alphas {
            let got = calibrate_threshold(&records, alpha).unwrap();
            let want = brute_force_threshold(&records, alpha);
            if got.to_bits() != want.to_bits() {
                mismatches += 1;
            }
            if got > prev {
                monotone_violations += 1;
            }
            prev = got;
        }
    }
    CriterionResult {
        id: "A3",
        pass: mismatches == 0 && monotone_violations == 0,
        detail: format!(
            "{mismatches} brute-force mismatches, {monotone_violations} alpha-monotonicity violations over 1000 instances"
        ),
    }
}

fn brute_force_threshold(records: &[CalibrationRecord], alpha: f64) -> f64 {
    let mut candidates: Vec<f64> = records.iter().map(|r| r.score).collect();
    candidates.push(f64::INFINITY);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = records.len() as f64;
    candidates
        .into_iter()
        .find(|&tau| {
            let d = records
                .iter()
                .filter(|r| r.disagree == 1 && r.score >= tau)
                .count() as f64;
            (d + 1.0) / (n + 1.0) <= alpha
        })
        .unwrap_or(f64::INFINITY)
}

/// A4: analytic gradients of both training losses match central finite
/// differences to relative error below 1e-4 on ten random 16-sample
/// batches each, dropout disabled.
fn a4_gradient_fidelity(cfg: &RunConfig) -> CriterionResult {
    let mut rng = substream(cfg.seed, StreamRole::Eval, 1_000_003);
    let (d, h) = (7, 9);
    let ids: Vec<String> = (0..3).map(|m| format!("m{m}")).collect();
    let mut worst_teacher = 0.0f64;
    for _ in 0..10 {
        let params = TeacherParams::init(d, h, ids.clone(), &mut rng);
        let embs: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let labels: Vec<Vec<u8>> = (0..16)
            .map(|_| (0..3).map(|_| u8::from(rng.random_range(0.0..1.0) < 0.5)).collect())
            .collect();
        let emb_refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
        let label_refs: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
        let weights = TeacherLossWeights::default();
        let mut grad = vec![0.0; params.flat().len()];
        teacher_loss_grad(&params, &emb_refs, &label_refs, &weights, None, Some(&mut grad));
        let report = check_gradient(params.flat(), &grad, GradCheckConfig::default(), |flat| {
            let p = TeacherParams::from_flat(d, h, ids.clone(), flat.to_vec()).unwrap();
            teacher_loss_grad(&p, &emb_refs, &label_refs, &weights, None, None)
        });
        worst_teacher = worst_teacher.max(report.max_rel_err);
    }

    let mut worst_gate = 0.0f64;
    for _ in 0..10 {
        let params = GateParams::init(d, h, 0.1, &mut rng);
        let embs: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let emb_refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
        let mut lambdas: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..20.0)).collect();
        lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let targets: Vec<f64> = (0..3 * 16).map(|_| rng.random_range(-0.6..0.6)).collect();
        let labels: Vec<u8> = (0..3 * 16)
            .map(|_| u8::from(rng.random_range(0.0..1.0) < 0.5))
            .collect();
        let batch = GateBatch {
            embeddings: &emb_refs,
            lambdas: &lambdas,
            targets: &targets,
            labels: &labels,
        };
        let weights = GateLossWeights::default();
        let mut grad = vec![0.0; params.flat().len()];
        gate_loss_grad(&params, &batch, &weights, 0.1, None, Some(&mut grad));
        let report = check_gradient(params.flat(), &grad, GradCheckConfig::default(), |flat| {
            let p = GateParams::from_flat(d, h, flat.to_vec()).unwrap();
            gate_loss_grad(&p, &batch, &weights, 0.1, None, None)
        });
        worst_gate = worst_gate.max(report.max_rel_err);
    }

    CriterionResult {
        id: "A4",
        pass: worst_teacher < 1e-4 && worst_gate < 1e-4,
        detail: format!(
            "max relative gradient error: teacher {worst_teacher:.2e}, gate {worst_gate:.2e} (tolerance 1e-4, 10 batches of 16 each)"
        ),
    }
}

/// A5: reference-model cost is exactly 1, the Shannon rate matches an
/// independent oracle, and the local model is cheapest in the profiled
/// regime.
fn a5_cost_exactness(cfg: &RunConfig) -> Result<CriterionResult> {
    let deployment = cfg.deployment()?;
    let mut rng = substream(cfg.seed, StreamRole::Eval, 1_000_004);
    let n = 10_000;
    let n_models = deployment.n_models();
    let ref_idx = deployment.ref_index();
    let local_idx = deployment.local_index();
    let mut max_ref_dev = 0.0f64;
    let mut max_rate_dev = 0.0f64;
    let mut regime_violations = 0usize;
    let dcfg = &cfg.dataset;
    let clamp = |tokens: f64| -> u32 {
        (tokens.round() as i64)
            .clamp(i64::from(dcfg.min_tokens), i64::from(dcfg.max_tokens)) as u32
    };
    for _ in 0..n {
        // Workloads follow the profile's token model: log-normal prompt
        // and decode lengths, decode shared across models up to jitter.
        let l_in = clamp(
            (dcfg.l_in_median.ln() + dcfg.l_in_sigma * rng.sample::<f64, _>(StandardNormal)).exp(),
        );
        let base =
            (dcfg.l_out_median.ln() + dcfg.l_out_sigma * rng.sample::<f64, _>(StandardNormal))
                .exp();
        let workload = crate::cost::QueryWorkload {
            l_in,
            l_out: (0..n_models)
                .map(|_| {
                    let jitter =
                        (dcfg.l_out_jitter_sigma * rng.sample::<f64, _>(StandardNormal)).exp();
                    clamp(base * jitter)
                })
                .collect(),
        };
        let state = deployment.sample_state(&mut rng);
        let costs = deployment.costs(&workload, &state);
        max_ref_dev = max_ref_dev.max((costs[ref_idx] - 1.0).abs());
        let cheapest = costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        regime_violations += usize::from(cheapest != local_idx);

        for dir in [Direction::Uplink, Direction::Downlink] {
            let got = link_rate(&deployment.comm, &state, dir);
            // Independent oracle through log2 instead of ln_1p.
            let (p, bw, fade) = match dir {
                Direction::Uplink => (deployment.comm.p_u_ul, deployment.comm.bw_ul, state.fade_ul),
                Direction::Downlink => {
                    (deployment.comm.p_bs_dl, deployment.comm.bw_dl, state.fade_dl)
                }
            };
            let gain = deployment.comm.k0 * fade * state.d_ue.powf(-deployment.comm.alpha_pl);
            let snr = p * gain / (bw * deployment.comm.n0);
            let oracle = bw * (1.0 + snr).log2();
            let rel = (got - oracle).abs() / oracle.abs().max(1e-300);
            max_rate_dev = max_rate_dev.max(rel);
        }
    }
    let violation_rate = regime_violations as f64 / n as f64;
    Ok(CriterionResult {
        id: "A5",
        pass: max_ref_dev < 1e-12 && max_rate_dev < 1e-9 && violation_rate < 0.001,
        detail: format!(
            "|c_ref - 1| max {max_ref_dev:.2e} (tol 1e-12), link-rate oracle deviation {max_rate_dev:.2e} (tol 1e-9), local-cheapest violation rate {violation_rate:.4} (tol 0.001) on {n} samples"
        ),
    })
}

/// A6: with the local model cheapest, the teacher margin never decreases
/// in the cost weight, and selector and margin sign match brute force.
fn a6_margin_structure(cfg: &RunConfig) -> Result<CriterionResult> {
    let mut rng = substream(cfg.seed, StreamRole::Eval, 1_000_005);
    let grid = log_spaced_grid(0.01, 50.0, 50);
    let n = 10_000;
    let mut margin_violations = 0usize;
    let mut selector_mismatches = 0usize;
    let mut sign_mismatches = 0usize;
    for _ in 0..n {
        let m = rng.random_range(2..=5);
        let p: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let c0 = rng.random_range(0.05..0.3);
        let mut c = vec![c0];
        for _ in 1..m {
            c.push(rng.random_range(c0 + 0.05..3.0));
        }
        let mut prev = f64::NEG_INFINITY;
        for &lambda in &grid {
            let (margin, z) = teacher_margin(&p, &c, lambda, 0)?;
            if margin < prev - 1e-9 {
                margin_violations += 1;
            }
            prev = margin;
            let selected = full_info_select(&p, &c, lambda);
            let brute = brute_force_select(&p, &c, lambda);
            if selected != brute {
                selector_mismatches += 1;
            }
            if (z == 1) != (selected == 0) {
                sign_mismatches += 1;
            }
        }
    }
    Ok(CriterionResult {
        id: "A6",
        pass: margin_violations == 0 && selector_mismatches == 0 && sign_mismatches == 0,
        detail: format!(
            "{margin_violations} margin-monotonicity violations (tol 1e-9), {selector_mismatches} brute-force selector mismatches, {sign_mismatches} margin-sign mismatches on {n} instances x 50 weights"
        ),
    })
}

/// Independent utility argmax with the same tie rules, written as a plain
/// scan instead of the production fold.
fn brute_force_select(p: &[f64], c: &[f64], lambda: f64) -> usize {
    let mut best = 0usize;
    for m in 1..p.len() {
        let u_m = p[m] - lambda * c[m];
        let u_b = p[best] - lambda * c[best];
        if u_m > u_b || (u_m == u_b && (c[m] < c[best] || (c[m] == c[best] && m < best))) {
            best = m;
        }
    }
    best
}

/// A7: the trained pipeline is deployable: gate-teacher sign agreement at
/// unit cost weight, Pareto dominance over both static policies, tracking
/// of the full-information frontier at the headline risk level, and the
/// runtime budget.
fn a7_learnability(
    cfg: &RunConfig,
    paths: &PipelinePaths,
    run: &LoadedRun,
    fresh_secs: f64,
) -> Result<CriterionResult> {
    let deployment = cfg.deployment()?;
    let ds = crate::dataset::load_tabular(&paths.dataset())?;
    let states = pipeline_states(cfg, ds.queries.len());
    let table = crate::calibration::ThresholdTable::load(&paths.thresholds())?;

    // Sign agreement with teacher labels at lambda = 1 on the test split.
    let test_idx = ds.split_indices(Split::Test);
    let local_idx = deployment.local_index();
    let mut agree = 0usize;
    for &i in &test_idx {
        let (_, p) = teacher_forward(&run.teacher, &ds.queries[i].embedding)?;
        let costs = deployment.costs(&ds.queries[i].workload(), &states[i]);
        let (_, z) = teacher_margin(&p, &costs, 1.0, local_idx)?;
        let (_, s) = gate_forward(&run.gate, &ds.queries[i].embedding, 1.0)?;
        agree += usize::from((s >= 0.5) == (z == 1));
    }
    let agreement = agree as f64 / test_idx.len() as f64;

    let sweep = evaluate_sweep(
        &run.gate,
        &table,
        &run.teacher,
        &deployment,
        &ds,
        &states,
        &table.lambda_grid.clone(),
        &cfg.sweep.alphas,
        &cfg.sweep.defer,
    )?;
    let bundle = eval_bundle(&run.teacher, &deployment, &ds, &states)?;
    let (local_acc, local_cost) = bundle.score_policy(&ds, |_| local_idx);
    let ref_idx = deployment.ref_index();
    let (ref_acc, ref_cost) = bundle.score_policy(&ds, |_| ref_idx);

    let weakly_dominated = |acc: f64, cost: f64, rows: &[SweepRow]| {
        rows.iter()
            .any(|r| r.accuracy >= acc - 1e-12 && r.mean_cost <= cost + 1e-12)
    };
    let envelope = pareto_envelope(&sweep.rows);
    let dominates_local = weakly_dominated(local_acc, local_cost, &envelope);
    let dominates_ref = weakly_dominated(ref_acc, ref_cost, &envelope);
    let (lo, hi) = (local_cost.min(ref_cost), local_cost.max(ref_cost));
    let has_interior = envelope
        .iter()
        .any(|r| r.mean_cost > lo + 1e-9 && r.mean_cost < hi - 1e-9);

    // Frontier tracking at the headline risk level: compare each operating
    // point against the best full-information accuracy within its budget.
    let full_info = bundle.full_info_curve(&ds, &log_spaced_grid(0.05, 40.0, 64));
    let headline: Vec<&SweepRow> = sweep
        .rows
        .iter()
        .filter(|r| (r.alpha - 0.01).abs() < 1e-12)
        .collect();
    let mut tracked = 0usize;
    for row in &headline {
        let fi_acc = full_info
            .iter()
            .filter(|p| p.mean_cost <= row.mean_cost + 1e-12)
            .map(|p| p.accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        if fi_acc.is_finite() && fi_acc - row.accuracy <= 0.05 {
            tracked += 1;
        }
    }
    let tracking_ok = !headline.is_empty() && 2 * tracked >= headline.len();

    let runtime_ok = fresh_secs < 300.0;
    let pass = agreement >= 0.90
        && dominates_local
        && dominates_ref
        && has_interior
        && tracking_ok
        && runtime_ok;
    Ok(CriterionResult {
        id: "A7",
        pass,
        detail: format!(
            "sign agreement {agreement:.4} (need 0.90); envelope dominates always-local {dominates_local} and always-reference {dominates_ref}, interior point {has_interior}; frontier gap <= 0.05 at {tracked}/{} headline points (need half); fresh pipeline {fresh_secs:.1}s (budget 300s)",
            headline.len()
        ),
    })
}

/// A8: the cost of the full-information selection never increases with
/// the cost weight, on random utility instances.
fn a8_cost_monotonicity(cfg: &RunConfig) -> CriterionResult {
    let mut rng = substream(cfg.seed, StreamRole::Eval, 1_000_006);
    let grid = log_spaced_grid(0.01, 50.0, 50);
    let n = 10_000;
    let mut violations = 0usize;
    for _ in 0..n {
        let m = rng.random_range(2..=6);
        let p: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..3.0)).collect();
        let mut prev = f64::INFINITY;
        for &lambda in &grid {
            let cost = c[full_info_select(&p, &c, lambda)];
            if cost > prev + 1e-9 {
                violations += 1;
            }
            prev = cost;
        }
    }
    CriterionResult {
        id: "A8",
        pass: violations == 0,
        detail: format!(
            "{violations} cost-monotonicity violations (tol 1e-9) on {n} instances x 50 weights"
        ),
    }
}

/// A9: two fresh end-to-end runs with the same config produce
/// byte-identical artifacts. Returns the faster run's wall time for the
/// A7 budget check.
fn a9_determinism(cfg: &RunConfig, paths: &PipelinePaths) -> Result<(CriterionResult, f64)> {
    let root_a = paths.root.join("determinism-a");
    let root_b = paths.root.join("determinism-b");
    for root in [&root_a, &root_b] {
        if root.exists() {
            std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    let pa = PipelinePaths::new(&root_a);
    let pb = PipelinePaths::new(&root_b);
    let t0 = Instant::now();
    run_pipeline(cfg, &pa)?;
    let secs_a = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    run_pipeline(cfg, &pb)?;
    let secs_b = t1.elapsed().as_secs_f64();

    let mut mismatched = Vec::new();
    let files = [
        "config.resolved.toml",
        "dataset.csv",
        "teacher.ckpt",
        "gate.ckpt",
        "thresholds.txt",
        "sweep.csv",
        "envelope.csv",
        "risk.csv",
        "summary.json",
        "dataset.meta.json",
        "teacher.meta.json",
        "gate.meta.json",
        "thresholds.meta.json",
        "sweep.meta.json",
    ];
    for name in files {
        let a = std::fs::read(root_a.join(name)).map_err(|e| Error::io(root_a.join(name), e))?;
        let b = std::fs::read(root_b.join(name)).map_err(|e| Error::io(root_b.join(name), e))?;
        if a != b {
            mismatched.push(name);
        }
    }
    let result = CriterionResult {
        id: "A9",
        pass: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!(
                "all {} artifacts byte-identical across two fresh runs ({secs_a:.1}s, {secs_b:.1}s)",
                files.len()
            )
        } else {
            format!("artifacts differ across reruns: {mismatched:?}")
        },
    };
    Ok((result, secs_a.min(secs_b)))
}
