//! Teacher selector: one binary MLP head per candidate model over the
//! shared frozen embedding, plus the utility algebra built on its outputs.
//!
//! Head `m` maps an embedding to a correctness logit through
//! `dense(hidden) -> GELU -> dropout -> dense(1)`; the probability is
//! `p_m = sigmoid(logit)`. The training objective is
//!
//! ```text
//! L = w_cls * mean_{i,m} BCE(l_im, y_im)
//!   + w_rank * mean_{i in B'} mean_{(m+, m-)} softplus(l_{m-} - l_{m+})
//! ```
//!
//! where `B'` holds queries with at least one correct and one incorrect
//! model; the rank term is zero when `B'` is empty. Utilities are
//! `u_m = p_m - lambda * c_m`; the teacher margin is the local utility
//! minus the best edge utility, and its sign (ties to the local model) is
//! the distillation label for the gate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{RoutingDataset, Split};
use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, matvec, outer_acc, uniform_fill};
use crate::numeric::ops::{bce_with_logits, gelu, gelu_grad, sigmoid, softplus};
use crate::numeric::AdamW;
use crate::rng::{stream, StreamRole};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherLossWeights {
    pub w_cls: f64,
    pub w_rank: f64,
}

impl Default for TeacherLossWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_rank: 1.0,
        }
    }
}

impl TeacherLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_cls < 0.0 || self.w_rank < 0.0 || (self.w_cls == 0.0 && self.w_rank == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "teacher loss weights ({}, {}) must be nonnegative and not both zero",
                self.w_cls, self.w_rank
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: TeacherLossWeights,
    pub optimizer: crate::numeric::AdamWConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            dropout: 0.1,
            epochs: 20,
            batch_size: 256,
            loss: TeacherLossWeights::default(),
            optimizer: crate::numeric::AdamWConfig::default(),
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "teacher hidden/epochs/batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        self.loss.validate()
    }
}

/// Frozen per-model heads stored as one flat parameter vector. Per head the
/// layout is `w1 (hidden x emb_dim), b1 (hidden), w2 (hidden), b2 (1)`,
/// heads in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherParams {
    emb_dim: usize,
    hidden: usize,
    model_ids: Vec<String>,
    flat: Vec<f64>,
}

fn head_stride(emb_dim: usize, hidden: usize) -> usize {
    hidden * emb_dim + 2 * hidden + 1
}

impl TeacherParams {
    pub fn init<R: Rng>(
        emb_dim: usize,
        hidden: usize,
        model_ids: Vec<String>,
        rng: &mut R,
    ) -> Self {
        let stride = head_stride(emb_dim, hidden);
        let mut flat = vec![0.0; stride * model_ids.len()];
        let s1 = 1.0 / (emb_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        for m in 0..model_ids.len() {
            let base = m * stride;
            uniform_fill(&mut flat[base..base + hidden * emb_dim], s1, rng);
            let w2_off = base + hidden * emb_dim + hidden;
            uniform_fill(&mut flat[w2_off..w2_off + hidden], s2, rng);
        }
        Self {
            emb_dim,
            hidden,
            model_ids,
            flat,
        }
    }

    pub fn from_flat(
        emb_dim: usize,
        hidden: usize,
        model_ids: Vec<String>,
        flat: Vec<f64>,
    ) -> Result<Self> {
        let expected = head_stride(emb_dim, hidden) * model_ids.len();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} parameters"),
                got: format!("{}", flat.len()),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "teacher parameters contain non-finite values".into(),
            ));
        }
        Ok(Self {
            emb_dim,
            hidden,
            model_ids,
            flat,
        })
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
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

    fn offsets(&self, m: usize) -> (usize, usize, usize, usize) {
        let base = m * head_stride(self.emb_dim, self.hidden);
        let w1 = base;
        let b1 = w1 + self.hidden * self.emb_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (w1, b1, w2, b2)
    }
}

/// Per-head activations captured by the training forward pass.
struct HeadTrace {
    pre: Vec<f64>,
    post_mask: Vec<f64>,
    logit: f64,
}

fn head_forward(
    params: &TeacherParams,
    m: usize,
    embedding: &[f64],
    mask: Option<&[f64]>,
) -> HeadTrace {
    let (w1, b1, w2, b2) = params.offsets(m);
    let h = params.hidden;
    let d = params.emb_dim;
    let mut pre = vec![0.0; h];
    matvec(&params.flat[w1..w1 + h * d], h, d, embedding, &mut pre);
    for (v, &b) in pre.iter_mut().zip(&params.flat[b1..b1 + h]) {
        *v += b;
    }
    let mut post_mask: Vec<f64> = pre.iter().map(|&a| gelu(a)).collect();
    if let Some(mask) = mask {
        for (g, &s) in post_mask.iter_mut().zip(mask) {
            *g *= s;
        }
    }
    let logit = dot(&params.flat[w2..w2 + h], &post_mask) + params.flat[b2];
    HeadTrace {
        pre,
        post_mask,
        logit,
    }
}

/// Eval-mode forward: per-model logits and probabilities for one embedding.
pub fn teacher_forward(params: &TeacherParams, embedding: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if embedding.len() != params.emb_dim {
        return Err(Error::DimensionMismatch(format!(
            "embedding length {} != teacher input dim {}",
            embedding.len(),
            params.emb_dim
        )));
    }
    let logits: Vec<f64> = (0..params.n_models())
        .map(|m| head_forward(params, m, embedding, None).logit)
        .collect();
    let probs = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok((logits, probs))
}

/// Loss (and optionally the flat gradient) of one batch. `masks`, when
/// present, holds inverted-scale dropout factors laid out `[sample][model]
/// [unit]`; `None` runs eval mode. The gradient buffer must be zeroed by
/// the caller.
pub fn teacher_loss_grad(
    params: &TeacherParams,
    embeddings: &[&[f64]],
    labels: &[&[u8]],
    weights: &TeacherLossWeights,
    masks: Option<&[f64]>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let b = embeddings.len();
    let n_m = params.n_models();
    let h = params.hidden;
    assert!(b > 0, "empty batch");
    assert_eq!(labels.len(), b);
    if let Some(masks) = masks {
        assert_eq!(masks.len(), b * n_m * h);
    }
    if let Some(g) = grad.as_deref() {
        assert_eq!(g.len(), params.n_params());
    }

    // Forward everything once, keeping traces only if gradients are wanted.
    let mut traces: Vec<Vec<HeadTrace>> = Vec::with_capacity(b);
    for (i, e) in embeddings.iter().enumerate() {
        let per_model = (0..n_m)
            .map(|m| {
                let mask = masks.map(|ms| &ms[(i * n_m + m) * h..(i * n_m + m + 1) * h]);
                head_forward(params, m, e, mask)
            })
            .collect();
        traces.push(per_model);
    }

    let mut loss_cls = 0.0;
    // d loss / d logit, accumulated across both terms.
    let mut dlogit = vec![0.0; b * n_m];
    let denom_cls = (b * n_m) as f64;
    for i in 0..b {
        for m in 0..n_m {
            let l = traces[i][m].logit;
            let y = f64::from(labels[i][m]);
            loss_cls += bce_with_logits(l, y);
            dlogit[i * n_m + m] += weights.w_cls * (sigmoid(l) - y) / denom_cls;
        }
    }
    loss_cls /= denom_cls;

    let ranked: Vec<usize> = (0..b)
        .filter(|&i| {
            labels[i].contains(&1) && labels[i].contains(&0)
        })
        .collect();
    let mut loss_rank = 0.0;
    if !ranked.is_empty() {
        let n_ranked = ranked.len() as f64;
        for &i in &ranked {
            let pos: Vec<usize> = (0..n_m).filter(|&m| labels[i][m] == 1).collect();
            let neg: Vec<usize> = (0..n_m).filter(|&m| labels[i][m] == 0).collect();
            let n_pairs = (pos.len() * neg.len()) as f64;
            let mut q_loss = 0.0;
            for &mp in &pos {
                for &mn in &neg {
                    let diff = traces[i][mn].logit - traces[i][mp].logit;
                    q_loss += softplus(diff);
                    let g = weights.w_rank * sigmoid(diff) / (n_ranked * n_pairs);
                    dlogit[i * n_m + mn] += g;
                    dlogit[i * n_m + mp] -= g;
                }
            }
            loss_rank += q_loss / n_pairs;
        }
        loss_rank /= n_ranked;
    }

    if let Some(grad) = grad {
        let d = params.emb_dim;
        for i in 0..b {
            for m in 0..n_m {
                let gl = dlogit[i * n_m + m];
                if gl == 0.0 {
                    continue;
                }
                let trace = &traces[i][m];
                let (w1, b1, w2, b2) = params.offsets(m);
                outer_acc(&mut grad[w2..w2 + h], &[gl], &trace.post_mask);
                grad[b2] += gl;
                let w2_slice = &params.flat[w2..w2 + h];
                let mut d_pre = vec![0.0; h];
                for u in 0..h {
                    let mut dg = gl * w2_slice[u];
                    if let Some(ms) = masks {
                        dg *= ms[(i * n_m + m) * h + u];
                    }
                    d_pre[u] = dg * gelu_grad(trace.pre[u]);
                }
                outer_acc(&mut grad[w1..w1 + h * d], &d_pre, embeddings[i]);
                for (gb, dp) in grad[b1..b1 + h].iter_mut().zip(&d_pre) {
                    *gb += dp;
                }
            }
        }
    }

    weights.w_cls * loss_cls + weights.w_rank * loss_rank
}

/// `u_m = p_m - lambda * c_m` over a candidate set.
pub fn teacher_utility(p: &[f64], costs: &[f64], lambda: f64) -> Vec<f64> {
    debug_assert_eq!(p.len(), costs.len());
    p.iter()
        .zip(costs)
        .map(|(&pm, &cm)| pm - lambda * cm)
        .collect()
}

/// Utility argmax with ties broken toward the smaller cost, then the
/// earlier index. Returns the winning index.
pub fn full_info_select(p: &[f64], costs: &[f64], lambda: f64) -> usize {
    let u = teacher_utility(p, costs, lambda);
    let mut best = 0usize;
    for i in 1..u.len() {
        if u[i] > u[best] || (u[i] == u[best] && costs[i] < costs[best]) {
            best = i;
        }
    }
    best
}

/// Teacher utility margin of the local model against the best edge
/// alternative, plus the sign label (`z = 1` keeps the query local; exact
/// ties go to the local model).
pub fn teacher_margin(
    p: &[f64],
    costs: &[f64],
    lambda: f64,
    local_idx: usize,
) -> Result<(f64, u8)> {
    if p.len() < 2 {
        return Err(Error::EmptySet("edge candidate set".into()));
    }
    let u = teacher_utility(p, costs, lambda);
    let best_edge = u
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != local_idx)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = u[local_idx] - best_edge;
    Ok((margin, u8::from(margin >= 0.0)))
}

/// Trains the heads on the train split for the configured epoch budget and
/// returns them frozen. Deterministic for a fixed (config, seed).
pub fn train_teacher(ds: &RoutingDataset, cfg: &TeacherConfig, seed: u64) -> Result<TeacherParams> {
    cfg.validate()?;
    ds.validate()?;
    let train_idx = ds.split_indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::EmptySet("train split".into()));
    }
    let mut rng = stream(seed, StreamRole::TeacherTrain);
    let mut params = TeacherParams::init(
        ds.embedding_dim,
        cfg.hidden,
        ds.model_ids.clone(),
        &mut rng,
    );
    let n_m = params.n_models();
    let h = params.hidden;
    let mut opt = AdamW::new(cfg.optimizer, params.n_params());
    let mut grad = vec![0.0; params.n_params()];
    let keep = 1.0 - cfg.dropout;

    let mut order = train_idx;
    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let embeddings: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| ds.queries[i].embedding.as_slice())
                .collect();
            let labels: Vec<&[u8]> = chunk
                .iter()
                .map(|&i| ds.queries[i].correctness.as_slice())
                .collect();
            let masks: Vec<f64> = (0..chunk.len() * n_m * h)
                .map(|_| {
                    if cfg.dropout > 0.0 && rng.random_range(0.0..1.0) < cfg.dropout {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect();
            grad.fill(0.0);
            teacher_loss_grad(
                &params,
                &embeddings,
                &labels,
                &cfg.loss,
                Some(&masks),
                Some(&mut grad),
            );
            opt.step(params.flat_mut(), &mut grad);
        }
    }
    Ok(params)
}
