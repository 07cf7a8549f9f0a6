//! Device-side margin gate: a FiLM-conditioned head over the frozen query
//! embedding that predicts the teacher utility margin for any cost weight.
//!
//! The forward pass is
//!
//! ```text
//! h = W1 LN(e)             (gamma, beta) = split(W_film psi_lambda)
//! delta_hat = W2 Drop(GELU(gamma . h + beta)) + b2
//! s = sigmoid(delta_hat / T),   T = softplus(eta_T) + 1e-6
//! ```
//!
//! so the only inputs are the embedding and the scalar cost weight; runtime
//! state and edge utilities never reach this code path. Training distills
//! teacher margins across jointly sampled cost weights with three terms:
//! sign BCE on `delta_hat / T`, a Huber regression onto the (stop-gradient)
//! teacher margin, and a hinge on adjacent sorted cost weights that pushes
//! the margin profile toward monotone growth in lambda.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::DeploymentModel;
use crate::dataset::{RoutingDataset, Split};
use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, matvec, outer_acc, uniform_fill};
use crate::numeric::ops::{
    bce_with_logits, gelu, gelu_grad, huber, huber_grad, layernorm, sigmoid, softplus,
};
use crate::numeric::AdamW;
use crate::rng::{stream, StreamRole};
use crate::teacher::{teacher_forward, teacher_margin, TeacherParams};

/// Frequencies of the periodic cost-weight features.
pub const PSI_FREQS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Cost-weight feature length: `log lambda` plus one (sin, cos) pair per
/// frequency.
pub const PSI_DIM: usize = 1 + 2 * PSI_FREQS.len();

/// `[log l, sin(2 pi f_k log l), cos(2 pi f_k log l), ...]` in fixed order.
pub fn psi_lambda(lambda: f64) -> Result<[f64; PSI_DIM]> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidData(format!(
            "cost weight must be positive and finite, got {lambda}"
        )));
    }
    let log_l = lambda.ln();
    let mut psi = [0.0; PSI_DIM];
    psi[0] = log_l;
    for (k, &f) in PSI_FREQS.iter().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * f * log_l;
        psi[1 + 2 * k] = angle.sin();
        psi[2 + 2 * k] = angle.cos();
    }
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateLossWeights {
    pub w_sign: f64,
    pub w_margin: f64,
    pub w_mono: f64,
}

impl Default for GateLossWeights {
    fn default() -> Self {
        Self {
            w_sign: 1.0,
            w_margin: 1.0,
            w_mono: 1.0,
        }
    }
}

impl GateLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_sign < 0.0 || self.w_margin < 0.0 || self.w_mono < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gate loss weights ({}, {}, {}) must be nonnegative",
                self.w_sign, self.w_margin, self.w_mono
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cost weights sampled jointly per step and shared across the batch.
    pub lambdas_per_step: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Temperature after the softplus at initialization.
    pub init_temperature: f64,
    pub huber_beta: f64,
    pub loss: GateLossWeights,
    pub optimizer: crate::numeric::AdamWConfig,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            dropout: 0.1,
            epochs: 30,
            batch_size: 256,
            lambdas_per_step: 8,
            lambda_min: 0.1,
            lambda_max: 20.0,
            init_temperature: 0.1,
            huber_beta: 0.1,
            loss: GateLossWeights::default(),
            optimizer: crate::numeric::AdamWConfig {
                lr: 1e-3,
                ..crate::numeric::AdamWConfig::default()
            },
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "gate hidden/epochs/batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.lambdas_per_step < 2 && self.loss.w_mono > 0.0 {
            return Err(Error::InvalidConfig(
                "monotone penalty needs at least 2 cost weights per step".into(),
            ));
        }
        if !(self.lambda_min > 0.0 && self.lambda_max > self.lambda_min) {
            return Err(Error::InvalidConfig(format!(
                "cost-weight range ({}, {}) must be positive and increasing",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.init_temperature > 0.0 && self.huber_beta > 0.0) {
            return Err(Error::InvalidConfig(
                "init_temperature and huber_beta must be positive".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Gate weights in one flat vector: `W1 (hidden x emb_dim)`, `W_film
/// (2 hidden x PSI_DIM)`, `W2 (hidden)`, `b2`, `eta_T`, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    emb_dim: usize,
    hidden: usize,
    flat: Vec<f64>,
}

/// Inverse of `t = softplus(eta) + 1e-6`.
fn inverse_softplus_shifted(t: f64) -> f64 {
    ((t - 1e-6).exp() - 1.0).ln()
}

impl GateParams {
    pub fn init<R: Rng>(emb_dim: usize, hidden: usize, init_temperature: f64, rng: &mut R) -> Self {
        let mut flat = vec![0.0; Self::param_count(emb_dim, hidden)];
        let (w1, film, w2, _, eta) = Self::offsets_for(emb_dim, hidden);
        uniform_fill(&mut flat[w1..w1 + hidden * emb_dim], 1.0 / (emb_dim as f64).sqrt(), rng);
        uniform_fill(
            &mut flat[film..film + 2 * hidden * PSI_DIM],
            1.0 / (PSI_DIM as f64).sqrt(),
            rng,
        );
        uniform_fill(&mut flat[w2..w2 + hidden], 1.0 / (hidden as f64).sqrt(), rng);
        flat[eta] = inverse_softplus_shifted(init_temperature);
        Self {
            emb_dim,
            hidden,
            flat,
        }
    }

    pub fn from_flat(emb_dim: usize, hidden: usize, flat: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(emb_dim, hidden);
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} parameters"),
                got: format!("{}", flat.len()),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "gate parameters contain non-finite values".into(),
            ));
        }
        Ok(Self {
            emb_dim,
            hidden,
            flat,
        })
    }

    pub fn param_count(emb_dim: usize, hidden: usize) -> usize {
        hidden * emb_dim + 2 * hidden * PSI_DIM + hidden + 2
    }

    fn offsets_for(emb_dim: usize, hidden: usize) -> (usize, usize, usize, usize, usize) {
        let w1 = 0;
        let film = w1 + hidden * emb_dim;
        let w2 = film + 2 * hidden * PSI_DIM;
        let b2 = w2 + hidden;
        let eta = b2 + 1;
        (w1, film, w2, b2, eta)
    }

    fn offsets(&self) -> (usize, usize, usize, usize, usize) {
        Self::offsets_for(self.emb_dim, self.hidden)
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_params(&self) -> usize {
        self.flat.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    /// `softplus(eta_T) + 1e-6`, always positive.
    pub fn temperature(&self) -> f64 {
        let (_, _, _, _, eta) = self.offsets();
        softplus(self.flat[eta]) + 1e-6
    }
}

/// Margin estimate and acceptance score for one (embedding, cost weight)
/// pair; eval mode, no dropout.
pub fn gate_forward(params: &GateParams, embedding: &[f64], lambda: f64) -> Result<(f64, f64)> {
    if embedding.len() != params.emb_dim {
        return Err(Error::DimensionMismatch(format!(
            "embedding length {} != gate input dim {}",
            embedding.len(),
            params.emb_dim
        )));
    }
    let x = layernorm(embedding)?;
    let psi = psi_lambda(lambda)?;
    let (w1, film, w2, b2, _) = params.offsets();
    let h = params.hidden;
    let d = params.emb_dim;
    let mut hid = vec![0.0; h];
    matvec(&params.flat[w1..w1 + h * d], h, d, &x, &mut hid);
    let mut gb = vec![0.0; 2 * h];
    matvec(&params.flat[film..film + 2 * h * PSI_DIM], 2 * h, PSI_DIM, &psi, &mut gb);
    let mut act = vec![0.0; h];
    for u in 0..h {
        act[u] = gelu(gb[u] * hid[u] + gb[h + u]);
    }
    let delta = dot(&params.flat[w2..w2 + h], &act) + params.flat[b2];
    let t = params.temperature();
    Ok((delta, sigmoid(delta / t)))
}

/// One distillation batch: `B` embeddings crossed with `J` sorted cost
/// weights. `targets` and `labels` are laid out `[j][i]`.
pub struct GateBatch<'a> {
    pub embeddings: &'a [&'a [f64]],
    /// Ascending; shared by every query in the batch.
    pub lambdas: &'a [f64],
    /// Teacher margins, treated as constants.
    pub targets: &'a [f64],
    /// Teacher sign labels.
    pub labels: &'a [u8],
}

/// Total distillation loss, optionally with the flat gradient (caller
/// zeroes the buffer). `masks` holds inverted-scale dropout factors laid
/// out `[j][i][unit]`; `None` disables dropout. Gradients flow through the
/// temperature via the sign term.
pub fn gate_loss_grad(
    params: &GateParams,
    batch: &GateBatch<'_>,
    weights: &GateLossWeights,
    huber_beta: f64,
    masks: Option<&[f64]>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let b = batch.embeddings.len();
    let j = batch.lambdas.len();
    let h = params.hidden;
    let d = params.emb_dim;
    assert!(b > 0 && j > 0, "empty batch");
    assert_eq!(batch.targets.len(), j * b);
    assert_eq!(batch.labels.len(), j * b);
    debug_assert!(
        batch.lambdas.windows(2).all(|w| w[0] <= w[1]),
        "cost weights must be sorted ascending"
    );
    assert!(
        j >= 2 || weights.w_mono == 0.0,
        "monotone penalty needs at least 2 cost weights"
    );
    if let Some(masks) = masks {
        assert_eq!(masks.len(), j * b * h);
    }
    if let Some(g) = grad.as_deref() {
        assert_eq!(g.len(), params.n_params());
    }

    let (w1, film, w2, b2, eta) = params.offsets();
    let w2_slice = &params.flat[w2..w2 + h];
    let t = params.temperature();

    // Per-query embedding branch, reused across all J cost weights.
    let xs: Vec<Vec<f64>> = batch
        .embeddings
        .iter()
        .map(|e| layernorm(e).expect("embedding length checked by caller"))
        .collect();
    let hids: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut hid = vec![0.0; h];
            matvec(&params.flat[w1..w1 + h * d], h, d, x, &mut hid);
            hid
        })
        .collect();
    // Per-lambda FiLM branch.
    let psis: Vec<[f64; PSI_DIM]> = batch
        .lambdas
        .iter()
        .map(|&l| psi_lambda(l).expect("cost weights validated by caller"))
        .collect();
    let films: Vec<Vec<f64>> = psis
        .iter()
        .map(|psi| {
            let mut gb = vec![0.0; 2 * h];
            matvec(&params.flat[film..film + 2 * h * PSI_DIM], 2 * h, PSI_DIM, psi, &mut gb);
            gb
        })
        .collect();

    // Full forward, keeping pre-activations and masked activations.
    let mut pre = vec![0.0; j * b * h];
    let mut act = vec![0.0; j * b * h];
    let mut delta = vec![0.0; j * b];
    for jj in 0..j {
        let (gamma, beta) = films[jj].split_at(h);
        for i in 0..b {
            let cell = (jj * b + i) * h;
            let hid = &hids[i];
            let mut dv = params.flat[b2];
            for u in 0..h {
                let a = gamma[u] * hid[u] + beta[u];
                pre[cell + u] = a;
                let mut g = gelu(a);
                if let Some(ms) = masks {
                    g *= ms[cell + u];
                }
                act[cell + u] = g;
                dv += w2_slice[u] * g;
            }
            delta[jj * b + i] = dv;
        }
    }

    let denom = (j * b) as f64;
    let mut loss_sign = 0.0;
    let mut loss_margin = 0.0;
    let mut d_delta = vec![0.0; j * b];
    let mut d_t = 0.0;
    for idx in 0..j * b {
        let dv = delta[idx];
        let z = f64::from(batch.labels[idx]);
        let l = dv / t;
        loss_sign += bce_with_logits(l, z);
        let dl = weights.w_sign * (sigmoid(l) - z) / denom;
        d_delta[idx] += dl / t;
        d_t += dl * (-dv / (t * t));

        let r = dv - batch.targets[idx];
        loss_margin += huber(r, huber_beta);
        d_delta[idx] += weights.w_margin * huber_grad(r, huber_beta) / denom;
    }
    loss_sign /= denom;
    loss_margin /= denom;

    let mut loss_mono = 0.0;
    if weights.w_mono > 0.0 && j >= 2 {
        let denom_mono = ((j - 1) * b) as f64;
        for jj in 0..j - 1 {
            for i in 0..b {
                let gap = delta[jj * b + i] - delta[(jj + 1) * b + i];
                if gap > 0.0 {
                    loss_mono += gap;
                    let g = weights.w_mono / denom_mono;
                    d_delta[jj * b + i] += g;
                    d_delta[(jj + 1) * b + i] -= g;
                }
            }
        }
        loss_mono /= denom_mono;
    }

    if let Some(grad) = grad {
        let mut d_hid = vec![0.0; b * h];
        for jj in 0..j {
            let (gamma, _) = films[jj].split_at(h);
            let mut d_film = vec![0.0; 2 * h];
            for i in 0..b {
                let gd = d_delta[jj * b + i];
                if gd == 0.0 {
                    continue;
                }
                let cell = (jj * b + i) * h;
                let hid = &hids[i];
                grad[b2] += gd;
                for u in 0..h {
                    grad[w2 + u] += gd * act[cell + u];
                    let mut dg = gd * w2_slice[u];
                    if let Some(ms) = masks {
                        dg *= ms[cell + u];
                    }
                    let da = dg * gelu_grad(pre[cell + u]);
                    d_film[u] += da * hid[u];
                    d_film[h + u] += da;
                    d_hid[i * h + u] += da * gamma[u];
                }
            }
            outer_acc(
                &mut grad[film..film + 2 * h * PSI_DIM],
                &d_film,
                &psis[jj],
            );
        }
        for i in 0..b {
            outer_acc(&mut grad[w1..w1 + h * d], &d_hid[i * h..(i + 1) * h], &xs[i]);
        }
        grad[eta] += d_t * sigmoid(params.flat[eta]);
    }

    weights.w_sign * loss_sign + weights.w_margin * loss_margin + weights.w_mono * loss_mono
}

/// Per-epoch train/selection losses from [`train_gate`]; the checkpoint is
/// the epoch minimizing the selection loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrainReport {
    pub epoch_train_loss: Vec<f64>,
    pub epoch_selection_loss: Vec<f64>,
    pub selected_epoch: usize,
}

/// Margins, labels, and per-model costs for a fixed (state, lambda) draw.
struct MarginTargets {
    targets: Vec<f64>,
    labels: Vec<u8>,
}

fn margins_for(
    probs: &[Vec<f64>],
    costs: &[Vec<f64>],
    lambdas: &[f64],
    local_idx: usize,
) -> Result<MarginTargets> {
    let b = probs.len();
    let mut targets = vec![0.0; lambdas.len() * b];
    let mut labels = vec![0u8; lambdas.len() * b];
    for (jj, &lambda) in lambdas.iter().enumerate() {
        for i in 0..b {
            let (m, z) = teacher_margin(&probs[i], &costs[i], lambda, local_idx)?;
            targets[jj * b + i] = m;
            labels[jj * b + i] = z;
        }
    }
    Ok(MarginTargets { targets, labels })
}

/// Distills the frozen teacher into gate weights. Per step the stream
/// draws, in order: J log-uniform cost weights (then sorted), one runtime
/// state per query, and the dropout mask. Before the epoch loop it draws
/// the fixed selection sample (cost weights, then one state per
/// calibration query) used to pick the checkpoint epoch with dropout off.
pub fn train_gate(
    ds: &RoutingDataset,
    teacher: &TeacherParams,
    deployment: &DeploymentModel,
    cfg: &GateConfig,
    seed: u64,
) -> Result<(GateParams, GateTrainReport)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.model_ids != teacher.model_ids() || ds.model_ids != deployment.pool.model_ids() {
        return Err(Error::InvalidConfig(
            "dataset, teacher, and pool must agree on the model list".into(),
        ));
    }
    let train_idx = ds.split_indices(Split::Train);
    let cal_idx = ds.split_indices(Split::Cal);
    if train_idx.is_empty() || cal_idx.is_empty() {
        return Err(Error::EmptySet("train or calibration split".into()));
    }

    let mut rng = stream(seed, StreamRole::GateTrain);
    let mut params = GateParams::init(ds.embedding_dim, cfg.hidden, cfg.init_temperature, &mut rng);
    let local_idx = deployment.local_index();
    let j = cfg.lambdas_per_step;
    let h = cfg.hidden;
    let keep = 1.0 - cfg.dropout;
    let (log_min, log_max) = (cfg.lambda_min.ln(), cfg.lambda_max.ln());

    // Teacher probabilities are state- and lambda-independent: compute once.
    let all_probs: Vec<Vec<f64>> = ds
        .queries
        .iter()
        .map(|q| teacher_forward(teacher, &q.embedding).map(|(_, p)| p))
        .collect::<Result<_>>()?;

    // Fixed selection sample: lambdas, then one state per calibration query.
    let mut sel_lambdas: Vec<f64> = (0..j)
        .map(|_| rng.random_range(log_min..log_max).exp())
        .collect();
    sel_lambdas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let sel_costs: Vec<Vec<f64>> = cal_idx
        .iter()
        .map(|&i| {
            let state = deployment.sample_state(&mut rng);
            deployment.costs(&ds.queries[i].workload(), &state)
        })
        .collect();
    let sel_probs: Vec<Vec<f64>> = cal_idx.iter().map(|&i| all_probs[i].clone()).collect();
    let sel_embeddings: Vec<&[f64]> = cal_idx
        .iter()
        .map(|&i| ds.queries[i].embedding.as_slice())
        .collect();
    let sel = margins_for(&sel_probs, &sel_costs, &sel_lambdas, local_idx)?;
    let sel_batch = |params: &GateParams| {
        gate_loss_grad(
            params,
            &GateBatch {
                embeddings: &sel_embeddings,
                lambdas: &sel_lambdas,
                targets: &sel.targets,
                labels: &sel.labels,
            },
            &cfg.loss,
            cfg.huber_beta,
            None,
            None,
        )
    };

    let mut opt = AdamW::new(cfg.optimizer, params.n_params());
    let mut grad = vec![0.0; params.n_params()];
    let mut order = train_idx;
    let mut report = GateTrainReport {
        epoch_train_loss: Vec::with_capacity(cfg.epochs),
        epoch_selection_loss: Vec::with_capacity(cfg.epochs),
        selected_epoch: 0,
    };
    let mut best: Option<(f64, GateParams)> = None;
    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut lambdas: Vec<f64> = (0..j)
                .map(|_| rng.random_range(log_min..log_max).exp())
                .collect();
            lambdas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let costs: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| {
                    let state = deployment.sample_state(&mut rng);
                    deployment.costs(&ds.queries[i].workload(), &state)
                })
                .collect();
            let probs: Vec<Vec<f64>> = chunk.iter().map(|&i| all_probs[i].clone()).collect();
            let embeddings: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| ds.queries[i].embedding.as_slice())
                .collect();
            let m = margins_for(&probs, &costs, &lambdas, local_idx)?;
            let masks: Vec<f64> = (0..j * chunk.len() * h)
                .map(|_| {
                    if cfg.dropout > 0.0 && rng.random_range(0.0..1.0) < cfg.dropout {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect();
            grad.fill(0.0);
            let loss = gate_loss_grad(
                &params,
                &GateBatch {
                    embeddings: &embeddings,
                    lambdas: &lambdas,
                    targets: &m.targets,
                    labels: &m.labels,
                },
                &cfg.loss,
                cfg.huber_beta,
                Some(&masks),
                Some(&mut grad),
            );
            opt.step(params.flat_mut(), &mut grad);
            epoch_loss += loss;
            n_batches += 1;
        }
        report.epoch_train_loss.push(epoch_loss / n_batches as f64);
        let sel_loss = sel_batch(&params);
        report.epoch_selection_loss.push(sel_loss);
        if best.as_ref().is_none_or(|(b_loss, _)| sel_loss < *b_loss) {
            best = Some((sel_loss, params.clone()));
            report.selected_epoch = report.epoch_selection_loss.len() - 1;
        }
    }
    let (_, selected) = best.expect("at least one epoch ran");
    Ok((selected, report))
}
