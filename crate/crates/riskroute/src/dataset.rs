//! Routing datasets: synthetic generation, tabular file IO, and runtime
//! state attachment.
//!
//! A synthetic query draws an embedding from a Gaussian mixture, a scalar
//! difficulty `delta = w . e + noise`, and per-model correctness bits
//! `y_m ~ Bernoulli(sigmoid(a_m - b_m delta))`, so larger capability `a_m`
//! means a more accurate model and the difficulty direction `w` is linearly
//! decodable from the embedding. Token counts are log-normal with a shared
//! per-query output base and a small per-model jitter.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cost::{sample_state, CommParams, SystemState};
use crate::error::{Error, Result};
use crate::numeric::ops::sigmoid;
use crate::rng::{substream, StreamRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Cal,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Cal => "cal",
            Split::Test => "test",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "train" => Ok(Split::Train),
            "cal" => Ok(Split::Cal),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplitTag(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub embedding: Vec<f64>,
    pub l_in: u32,
    /// Correctness bit per model, pool order.
    pub correctness: Vec<u8>,
    /// Output token count per model, pool order.
    pub l_out: Vec<u32>,
}

impl QueryRecord {
    /// Token workload view consumed by the deployment-cost model.
    pub fn workload(&self) -> crate::cost::QueryWorkload {
        crate::cost::QueryWorkload {
            l_in: self.l_in,
            l_out: self.l_out.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDataset {
    pub embedding_dim: usize,
    pub model_ids: Vec<String>,
    pub queries: Vec<QueryRecord>,
    pub splits: Vec<Split>,
}

impl RoutingDataset {
    pub fn validate(&self) -> Result<()> {
        if self.model_ids.is_empty() {
            return Err(Error::InvalidData("dataset has no models".into()));
        }
        if self.queries.len() != self.splits.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} queries but {} split tags",
                self.queries.len(),
                self.splits.len()
            )));
        }
        let m = self.model_ids.len();
        for (i, q) in self.queries.iter().enumerate() {
            if q.embedding.len() != self.embedding_dim {
                return Err(Error::DimensionMismatch(format!(
                    "query {i}: embedding length {} != {}",
                    q.embedding.len(),
                    self.embedding_dim
                )));
            }
            if q.correctness.len() != m || q.l_out.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "query {i}: per-model field lengths ({}, {}) != {m}",
                    q.correctness.len(),
                    q.l_out.len()
                )));
            }
            if q.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "query {i}: non-finite embedding entry"
                )));
            }
            if q.correctness.iter().any(|&b| b > 1) {
                return Err(Error::NonBinaryLabel(format!(
                    "query {i}: correctness bit outside {{0,1}}"
                )));
            }
            if q.l_in < 1 || q.l_out.iter().any(|&l| l < 1) {
                return Err(Error::InvalidData(format!(
                    "query {i}: token counts must be >= 1"
                )));
            }
        }
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Test-split indices with all-incorrect queries removed. The raw file
    /// keeps those rows so calibration traffic stays representative; only
    /// accuracy evaluation excludes them.
    pub fn eval_test_indices(&self) -> Vec<usize> {
        self.split_indices(Split::Test)
            .into_iter()
            .filter(|&i| self.queries[i].correctness.contains(&1))
            .collect()
    }
}

/// Generator knobs. Capabilities and slopes align with the model pool
/// order handed to [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_queries: usize,
    pub embedding_dim: usize,
    pub n_clusters: usize,
    /// Within-cluster standard deviation; cluster centers are unit normal.
    pub cluster_spread: f64,
    /// Standard deviation of the difficulty noise added to w . e.
    pub difficulty_noise: f64,
    /// Scale of a shared latent added to every model's correctness logit;
    /// zero keeps bits conditionally independent.
    pub correlation_noise: f64,
    pub capabilities: Vec<f64>,
    pub slopes: Vec<f64>,
    pub l_in_median: f64,
    pub l_in_sigma: f64,
    pub l_out_median: f64,
    pub l_out_sigma: f64,
    /// Log-std of the per-model multiplicative jitter on l_out.
    pub l_out_jitter_sigma: f64,
    pub min_tokens: u32,
    pub max_tokens: u32,
    pub train_frac: f64,
    pub cal_frac: f64,
    pub test_frac: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_queries: 20_000,
            embedding_dim: 32,
            n_clusters: 8,
            cluster_spread: 0.5,
            difficulty_noise: 0.08,
            correlation_noise: 0.0,
            capabilities: vec![0.0, 1.0, 2.0, 2.2],
            slopes: vec![6.0, 4.5, 4.2, 1.0],
            l_in_median: 200.0,
            l_in_sigma: 0.5,
            l_out_median: 150.0,
            l_out_sigma: 0.5,
            l_out_jitter_sigma: 0.03,
            min_tokens: 8,
            max_tokens: 2048,
            train_frac: 0.6,
            cal_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self, n_models: usize) -> Result<()> {
        if self.n_queries < 10 {
            return Err(Error::InvalidConfig(
                "n_queries must be at least 10".into(),
            ));
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidConfig(
                "embedding_dim must be at least 2".into(),
            ));
        }
        if self.n_clusters < 1 {
            return Err(Error::InvalidConfig("n_clusters must be >= 1".into()));
        }
        if self.capabilities.len() != n_models || self.slopes.len() != n_models {
            return Err(Error::InvalidConfig(format!(
                "capabilities/slopes lengths ({}, {}) must match the {n_models}-model pool",
                self.capabilities.len(),
                self.slopes.len()
            )));
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("difficulty_noise", self.difficulty_noise),
            ("correlation_noise", self.correlation_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("l_in_median", self.l_in_median),
            ("l_in_sigma", self.l_in_sigma),
            ("l_out_median", self.l_out_median),
            ("l_out_sigma", self.l_out_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.min_tokens < 1 || self.min_tokens >= self.max_tokens {
            return Err(Error::InvalidConfig(format!(
                "token clamp [{}, {}] is infeasible",
                self.min_tokens, self.max_tokens
            )));
        }
        let fracs = [self.train_frac, self.cal_frac, self.test_frac];
        if fracs.iter().any(|&f| f <= 0.0)
            || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions {fracs:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Generation internals kept for diagnostics and tests; the pipeline does
/// not persist this.
#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub cluster: Vec<u16>,
    pub difficulty: Vec<f64>,
}

pub fn generate_synthetic<R: Rng>(
    cfg: &SyntheticConfig,
    model_ids: &[String],
    rng: &mut R,
) -> Result<(RoutingDataset, SyntheticTrace)> {
    cfg.validate(model_ids.len())?;
    let d = cfg.embedding_dim;
    let normal = StandardNormal;

    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| (0..d).map(|_| rng.sample(normal)).collect())
        .collect();
    // Unit difficulty direction so w . e inherits the centers' unit scale.
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(normal)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut w {
        *v /= norm;
    }

    let clamp = |tokens: f64| -> u32 {
        (tokens.round() as i64).clamp(i64::from(cfg.min_tokens), i64::from(cfg.max_tokens)) as u32
    };

    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut cluster_trace = Vec::with_capacity(cfg.n_queries);
    let mut difficulty_trace = Vec::with_capacity(cfg.n_queries);
    for _ in 0..cfg.n_queries {
        let k = rng.random_range(0..cfg.n_clusters);
        let embedding: Vec<f64> = centers[k]
            .iter()
            .map(|&c| c + cfg.cluster_spread * rng.sample::<f64, _>(normal))
            .collect();
        let dot: f64 = w.iter().zip(&embedding).map(|(a, b)| a * b).sum();
        let delta = dot + cfg.difficulty_noise * rng.sample::<f64, _>(normal);
        // Drawn unconditionally so toggling correlation_noise does not
        // shift the stream layout of later draws.
        let shared: f64 = rng.sample(normal);
        let correctness: Vec<u8> = model_ids
            .iter()
            .enumerate()
            .map(|(m, _)| {
                let logit_val = cfg.capabilities[m] - cfg.slopes[m] * delta
                    + cfg.correlation_noise * shared;
                u8::from(rng.random_range(0.0..1.0) < sigmoid(logit_val))
            })
            .collect();
        let l_in = clamp(
            (cfg.l_in_median.ln() + cfg.l_in_sigma * rng.sample::<f64, _>(normal)).exp(),
        );
        let base =
            (cfg.l_out_median.ln() + cfg.l_out_sigma * rng.sample::<f64, _>(normal)).exp();
        let l_out: Vec<u32> = model_ids
            .iter()
            .map(|_| {
                let jitter = (cfg.l_out_jitter_sigma * rng.sample::<f64, _>(normal)).exp();
                clamp(base * jitter)
            })
            .collect();
        queries.push(QueryRecord {
            embedding,
            l_in,
            correctness,
            l_out,
        });
        cluster_trace.push(k as u16);
        difficulty_trace.push(delta);
    }

    let n = cfg.n_queries;
    let n_train = (cfg.train_frac * n as f64).floor() as usize;
    let n_cal = (cfg.cal_frac * n as f64).floor() as usize;
    let n_test = n - n_train - n_cal;
    if n_train == 0 || n_cal == 0 || n_test == 0 {
        return Err(Error::InvalidConfig(format!(
            "split fractions leave an empty split at n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut splits = vec![Split::Train; n];
    for &i in order.iter().skip(n_train).take(n_cal) {
        splits[i] = Split::Cal;
    }
    for &i in order.iter().skip(n_train + n_cal) {
        splits[i] = Split::Test;
    }

    let ds = RoutingDataset {
        embedding_dim: d,
        model_ids: model_ids.to_vec(),
        queries,
        splits,
    };
    ds.validate()?;
    Ok((
        ds,
        SyntheticTrace {
            cluster: cluster_trace,
            difficulty: difficulty_trace,
        },
    ))
}

/// One independent runtime state per query via per-query substreams, so
/// states do not depend on evaluation order or thread count.
pub fn attach_states(n_queries: usize, params: &CommParams, seed: u64) -> Vec<SystemState> {
    (0..n_queries)
        .map(|i| {
            let mut rng = substream(seed, StreamRole::StateAttach, i as u64);
            sample_state(params, &mut rng)
        })
        .collect()
}

fn header_line(ds: &RoutingDataset) -> String {
    let mut h = String::from("id,split,l_in");
    for i in 0..ds.embedding_dim {
        let _ = write!(h, ",emb_{i}");
    }
    for m in &ds.model_ids {
        let _ = write!(h, ",y_{m}");
    }
    for m in &ds.model_ids {
        let _ = write!(h, ",lout_{m}");
    }
    h
}

pub fn save_tabular(ds: &RoutingDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut out = String::new();
    out.push_str(&header_line(ds));
    out.push('\n');
    for (i, (q, s)) in ds.queries.iter().zip(&ds.splits).enumerate() {
        let _ = write!(out, "{i},{},{}", s.as_str(), q.l_in);
        for v in &q.embedding {
            let _ = write!(out, ",{v:.17e}");
        }
        for &y in &q.correctness {
            let _ = write!(out, ",{y}");
        }
        for &l in &q.l_out {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_tabular(path: &Path) -> Result<RoutingDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();

    for (pos, expected) in [(0, "id"), (1, "split"), (2, "l_in")] {
        if cols.get(pos).copied() != Some(expected) {
            return Err(Error::MissingColumn(expected.to_string()));
        }
    }
    let mut at = 3;
    let mut dim = 0;
    while at < cols.len() && cols[at].starts_with("emb_") {
        let expected = format!("emb_{dim}");
        if cols[at] != expected {
            return Err(Error::MissingColumn(expected));
        }
        dim += 1;
        at += 1;
    }
    if dim == 0 {
        return Err(Error::MissingColumn("emb_0".into()));
    }
    let mut model_ids = Vec::new();
    while at < cols.len() && cols[at].starts_with("y_") {
        model_ids.push(cols[at][2..].to_string());
        at += 1;
    }
    if model_ids.is_empty() {
        return Err(Error::MissingColumn("y_<model>".into()));
    }
    for m in &model_ids {
        let expected = format!("lout_{m}");
        if cols.get(at).copied() != Some(expected.as_str()) {
            return Err(Error::MissingColumn(expected));
        }
        at += 1;
    }
    if at != cols.len() {
        return Err(Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: format!("unexpected trailing column {}", cols[at]),
        });
    }

    let n_cols = cols.len();
    let n_models = model_ids.len();
    let mut queries = Vec::new();
    let mut splits = Vec::new();
    for (row_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_cols {
            return Err(Error::DimensionMismatch(format!(
                "row {row_no}: {} fields, header has {n_cols}",
                fields.len()
            )));
        }
        let parse_err = |what: &str, tok: &str| Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: format!("row {row_no}: cannot parse {what} from {tok:?}"),
        };
        splits.push(Split::parse(fields[1])?);
        let l_in: u32 = fields[2]
            .parse()
            .map_err(|_| parse_err("l_in", fields[2]))?;
        let mut embedding = Vec::with_capacity(dim);
        for tok in &fields[3..3 + dim] {
            embedding.push(tok.parse::<f64>().map_err(|_| parse_err("embedding", tok))?);
        }
        let mut correctness = Vec::with_capacity(n_models);
        for tok in &fields[3 + dim..3 + dim + n_models] {
            let v: i64 = tok.parse().map_err(|_| parse_err("correctness", tok))?;
            if v != 0 && v != 1 {
                return Err(Error::NonBinaryLabel(format!(
                    "row {row_no}: correctness value {v}"
                )));
            }
            correctness.push(v as u8);
        }
        let mut l_out = Vec::with_capacity(n_models);
        for tok in &fields[3 + dim + n_models..] {
            l_out.push(tok.parse::<u32>().map_err(|_| parse_err("l_out", tok))?);
        }
        queries.push(QueryRecord {
            embedding,
            l_in,
            correctness,
            l_out,
        });
    }

    let ds = RoutingDataset {
        embedding_dim: dim,
        model_ids,
        queries,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamRole};

    fn ids() -> Vec<String> {
        vec![
            "local-1p7b".into(),
            "edge-4b".into(),
            "edge-8b".into(),
            "edge-14b".into(),
        ]
    }

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            n_queries: 2_000,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_slope_accuracy_matches_sigmoid_of_capability() {
        let cfg = SyntheticConfig {
            n_queries: 20_000,
            slopes: vec![0.0; 4],
            ..SyntheticConfig::default()
        };
        let mut rng = stream(11, StreamRole::DatasetGen);
        let (ds, _) = generate_synthetic(&cfg, &ids(), &mut rng).unwrap();
        for m in 0..4 {
            let acc = ds
                .queries
                .iter()
                .map(|q| f64::from(q.correctness[m]))
                .sum::<f64>()
                / ds.queries.len() as f64;
            let expected = sigmoid(cfg.capabilities[m]);
            assert!(
                (acc - expected).abs() < 0.015,
                "model {m}: acc {acc} vs sigmoid(a) {expected}"
            );
        }
    }

    #[test]
    fn capability_order_gives_monotone_accuracy() {
        let mut rng = stream(12, StreamRole::DatasetGen);
        let (ds, _) = generate_synthetic(&SyntheticConfig::default(), &ids(), &mut rng).unwrap();
        let accs: Vec<f64> = (0..4)
            .map(|m| {
                ds.queries
                    .iter()
                    .map(|q| f64::from(q.correctness[m]))
                    .sum::<f64>()
                    / ds.queries.len() as f64
            })
            .collect();
        for m in 0..3 {
            assert!(
                accs[m + 1] > accs[m] + 0.02,
                "accuracy ladder violated: {accs:?}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let gen = || {
            let mut rng = stream(13, StreamRole::DatasetGen);
            generate_synthetic(&small_cfg(), &ids(), &mut rng).unwrap().0
        };
        assert_eq!(gen(), gen());
    }

    #[test]
    fn near_noiseless_difficulty_pins_correctness_probabilities() {
        // With no difficulty noise the label probability is an exact
        // function of the embedding; steep slopes push it toward {0,1}
        // except for clusters sitting near a model's decision boundary.
        let cfg = SyntheticConfig {
            n_queries: 4_000,
            difficulty_noise: 0.0,
            cluster_spread: 0.02,
            slopes: vec![12.0; 4],
            ..small_cfg()
        };
        let mut rng = stream(14, StreamRole::DatasetGen);
        let (ds, trace) = generate_synthetic(&cfg, &ids(), &mut rng).unwrap();
        // The Bayes label 1[p > 0.5] agrees with a draw with probability
        // max(p, 1-p); compare the observed agreement to that exact mean.
        let mut agree = 0usize;
        let mut expected_agree = 0.0;
        let mut total = 0usize;
        for (q, &delta) in ds.queries.iter().zip(&trace.difficulty) {
            for m in 0..4 {
                let p = sigmoid(cfg.capabilities[m] - cfg.slopes[m] * delta);
                expected_agree += p.max(1.0 - p);
                agree += usize::from(q.correctness[m] == u8::from(p > 0.5));
                total += 1;
            }
        }
        let expected_rate = expected_agree / total as f64;
        let observed_rate = agree as f64 / total as f64;
        assert!(
            expected_rate > 0.9,
            "separable config should be nearly deterministic, Bayes rate {expected_rate}"
        );
        assert!(
            (observed_rate - expected_rate).abs() < 3.0 * (0.25 / total as f64).sqrt(),
            "agreement {observed_rate} vs Bayes {expected_rate}"
        );
    }

    #[test]
    fn splits_partition_with_requested_fractions() {
        let mut rng = stream(15, StreamRole::DatasetGen);
        let (ds, _) = generate_synthetic(&small_cfg(), &ids(), &mut rng).unwrap();
        let n_train = ds.split_indices(Split::Train).len();
        let n_cal = ds.split_indices(Split::Cal).len();
        let n_test = ds.split_indices(Split::Test).len();
        assert_eq!(n_train + n_cal + n_test, 2000);
        assert_eq!(n_train, 1200);
        assert_eq!(n_cal, 400);
        assert_eq!(n_test, 400);
    }

    #[test]
    fn infeasible_fractions_rejected() {
        let cfg = SyntheticConfig {
            train_frac: 0.9,
            cal_frac: 0.3,
            test_frac: 0.2,
            ..small_cfg()
        };
        let mut rng = stream(16, StreamRole::DatasetGen);
        assert!(generate_synthetic(&cfg, &ids(), &mut rng).is_err());
    }

    #[test]
    fn all_incorrect_kept_in_cal_but_dropped_from_eval_test() {
        let mut rng = stream(17, StreamRole::DatasetGen);
        let (ds, _) = generate_synthetic(&SyntheticConfig::default(), &ids(), &mut rng).unwrap();
        let all_wrong = |i: usize| ds.queries[i].correctness.iter().all(|&b| b == 0);
        let cal_wrong = ds.split_indices(Split::Cal).into_iter().filter(|&i| all_wrong(i)).count();
        assert!(cal_wrong > 0, "default config should produce all-incorrect queries");
        let test_raw = ds.split_indices(Split::Test);
        let test_eval = ds.eval_test_indices();
        assert!(test_eval.len() < test_raw.len());
        assert!(test_eval.iter().all(|&i| !all_wrong(i)));
    }

    #[test]
    fn tabular_round_trip_is_identity() {
        let mut rng = stream(18, StreamRole::DatasetGen);
        let (ds, _) = generate_synthetic(
            &SyntheticConfig {
                n_queries: 64,
                embedding_dim: 5,
                ..SyntheticConfig::default()
            },
            &ids(),
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save_tabular(&ds, &path).unwrap();
        let loaded = load_tabular(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn loader_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let base = "id,split,l_in,emb_0,emb_1,y_a,y_b,lout_a,lout_b\n";

        let write = |name: &str, body: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            p
        };

        let p = write("bad_label.csv", &format!("{base}0,train,10,0.1,0.2,2,1,5,5\n"));
        assert!(matches!(
            load_tabular(&p).unwrap_err(),
            Error::NonBinaryLabel(_)
        ));

        let p = write("short_row.csv", &format!("{base}0,train,10,0.1,0.2,1,1,5\n"));
        assert!(matches!(
            load_tabular(&p).unwrap_err(),
            Error::DimensionMismatch(_)
        ));

        let p = write("bad_split.csv", &format!("{base}0,dev,10,0.1,0.2,1,1,5,5\n"));
        assert!(matches!(
            load_tabular(&p).unwrap_err(),
            Error::UnknownSplitTag(_)
        ));

        let p = write(
            "missing_emb.csv",
            "id,split,l_in,y_a,y_b,lout_a,lout_b\n0,train,10,1,1,5,5\n",
        );
        assert!(matches!(
            load_tabular(&p).unwrap_err(),
            Error::MissingColumn(c) if c == "emb_0"
        ));

        let p = write(
            "missing_lout.csv",
            "id,split,l_in,emb_0,emb_1,y_a,y_b,lout_a\n0,train,10,0.1,0.2,1,1,5\n",
        );
        assert!(matches!(
            load_tabular(&p).unwrap_err(),
            Error::MissingColumn(c) if c == "lout_b"
        ));
    }

    #[test]
    fn attached_states_are_reproducible_and_split_balanced() {
        let params = CommParams::default();
        let mut rng = stream(19, StreamRole::DatasetGen);
        let (ds, _) = generate_synthetic(
            &SyntheticConfig {
                n_queries: 10_000,
                ..SyntheticConfig::default()
            },
            &ids(),
            &mut rng,
        )
        .unwrap();
        let states = attach_states(ds.queries.len(), &params, 99);
        let states2 = attach_states(ds.queries.len(), &params, 99);
        assert_eq!(states, states2);

        // Two-sample KS on distances between cal and test assignments.
        let mut cal_d: Vec<f64> = ds
            .split_indices(Split::Cal)
            .iter()
            .map(|&i| states[i].d_ue)
            .collect();
        let mut test_d: Vec<f64> = ds
            .split_indices(Split::Test)
            .iter()
            .map(|&i| states[i].d_ue)
            .collect();
        cal_d.sort_by(f64::total_cmp);
        test_d.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < cal_d.len() && j < test_d.len() {
            if cal_d[i] <= test_d[j] {
                i += 1;
            } else {
                j += 1;
            }
            let f1 = i as f64 / cal_d.len() as f64;
            let f2 = j as f64 / test_d.len() as f64;
            ks = ks.max((f1 - f2).abs());
        }
        assert!(ks < 0.045, "cal/test distance KS statistic {ks}");

        // States must not leak into embeddings.
        let n = ds.queries.len() as f64;
        let mean_fade = states.iter().map(|s| s.fade_ul).sum::<f64>() / n;
        let mean_emb = ds.queries.iter().map(|q| q.embedding[0]).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var_f = 0.0;
        let mut var_e = 0.0;
        for (q, s) in ds.queries.iter().zip(&states) {
            let df = s.fade_ul - mean_fade;
            let de = q.embedding[0] - mean_emb;
            cov += df * de;
            var_f += df * df;
            var_e += de * de;
        }
        let corr = cov / (var_f.sqrt() * var_e.sqrt());
        assert!(corr.abs() < 0.05, "fade/embedding correlation {corr}");
    }
}
