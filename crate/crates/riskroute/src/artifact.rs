//! Hash-chained artifact storage.
//!
//! Checkpoints are versioned binary blobs: a magic line, a JSON header
//! carrying shapes, provenance hashes, and the SHA-256 of the parameter
//! payload, then the parameters as little-endian f64. Loaders verify the
//! payload hash, so a single flipped byte surfaces as a hash mismatch
//! instead of silently corrupt weights. Stages are chained by content
//! hash: every artifact embeds the hashes of the artifacts it was built
//! from, and each stage refuses inputs whose recomputed hashes disagree.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gate::{GateParams, PSI_FREQS};
use crate::teacher::TeacherParams;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

const CHECKPOINT_MAGIC: &[u8] = b"riskroute-checkpoint v1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    emb_dim: usize,
    hidden: usize,
    #[serde(default)]
    model_ids: Vec<String>,
    #[serde(default)]
    psi_freqs: Vec<f64>,
    dataset_hash: String,
    #[serde(default)]
    teacher_hash: String,
    config_hash: String,
    seed: u64,
    payload_sha256: String,
}

/// Provenance carried by a teacher checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherMeta {
    pub dataset_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Provenance carried by a gate checkpoint, including the feature spec of
/// the cost-weight embedding it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMeta {
    pub dataset_hash: String,
    pub teacher_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

fn encode_checkpoint(header: &CheckpointHeader, flat: &[f64]) -> Vec<u8> {
    let header_json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + header_json.len() + flat.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_checkpoint(bytes: &[u8], path: &Path, kind: &str) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bad = |reason: String| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason,
    };
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| bad("missing checkpoint magic".into()))?;
    if rest.len() < 8 {
        return Err(bad("truncated header length".into()));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < header_len {
        return Err(bad("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    if header.kind != kind {
        return Err(bad(format!("expected a {kind} checkpoint, got {}", header.kind)));
    }
    let rest = &rest[header_len..];
    if rest.len() < 8 {
        return Err(bad("truncated payload length".into()));
    }
    let n = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() != n * 8 {
        return Err(bad(format!(
            "payload holds {} bytes for {n} parameters",
            rest.len()
        )));
    }
    let got = sha256_hex(rest);
    if got != header.payload_sha256 {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: header.payload_sha256,
            got,
        });
    }
    let flat: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, flat))
}

fn payload_hash(flat: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn save_teacher(path: &Path, params: &TeacherParams, meta: &TeacherMeta) -> Result<()> {
    let flat = params.flat();
    let header = CheckpointHeader {
        kind: "teacher".into(),
        emb_dim: params.emb_dim(),
        hidden: params.hidden(),
        model_ids: params.model_ids().to_vec(),
        psi_freqs: vec![],
        dataset_hash: meta.dataset_hash.clone(),
        teacher_hash: String::new(),
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        payload_sha256: payload_hash(flat),
    };
    std::fs::write(path, encode_checkpoint(&header, flat)).map_err(|e| Error::io(path, e))
}

pub fn load_teacher(path: &Path) -> Result<(TeacherParams, TeacherMeta)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, flat) = decode_checkpoint(&bytes, path, "teacher")?;
    let params = TeacherParams::from_flat(header.emb_dim, header.hidden, header.model_ids, flat)?;
    Ok((
        params,
        TeacherMeta {
            dataset_hash: header.dataset_hash,
            config_hash: header.config_hash,
            seed: header.seed,
        },
    ))
}

pub fn save_gate(path: &Path, params: &GateParams, meta: &GateMeta) -> Result<()> {
    let flat = params.flat();
    let header = CheckpointHeader {
        kind: "gate".into(),
        emb_dim: params.emb_dim(),
        hidden: params.hidden(),
        model_ids: vec![],
        psi_freqs: PSI_FREQS.to_vec(),
        dataset_hash: meta.dataset_hash.clone(),
        teacher_hash: meta.teacher_hash.clone(),
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        payload_sha256: payload_hash(flat),
    };
    std::fs::write(path, encode_checkpoint(&header, flat)).map_err(|e| Error::io(path, e))
}

pub fn load_gate(path: &Path) -> Result<(GateParams, GateMeta)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, flat) = decode_checkpoint(&bytes, path, "gate")?;
    if header.psi_freqs != PSI_FREQS.to_vec() {
        return Err(Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: format!(
                "checkpoint cost-weight features {:?} differ from this build's {:?}",
                header.psi_freqs, PSI_FREQS
            ),
        });
    }
    let params = GateParams::from_flat(header.emb_dim, header.hidden, flat)?;
    Ok((
        params,
        GateMeta {
            dataset_hash: header.dataset_hash,
            teacher_hash: header.teacher_hash,
            config_hash: header.config_hash,
            seed: header.seed,
        },
    ))
}

/// Per-stage metadata written next to every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSidecar {
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Input-artifact hashes keyed by role, sorted for stable bytes.
    pub inputs: BTreeMap<String, String>,
    pub output_sha256: String,
}

impl StageSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: format!("sidecar is not valid JSON: {e}"),
        })
    }
}

/// Errors unless the file on disk hashes to `expected`.
pub fn require_hash(path: &Path, expected: &str) -> Result<()> {
    let got = file_sha256(path)?;
    if got != expected {
        return Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: expected.to_string(),
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::GateConfig;
    use crate::rng::{stream, StreamRole};

    fn demo_teacher() -> TeacherParams {
        let mut rng = stream(101, StreamRole::TeacherTrain);
        TeacherParams::init(6, 8, vec!["m0".into(), "m1".into()], &mut rng)
    }

    fn demo_gate() -> GateParams {
        let mut rng = stream(102, StreamRole::GateTrain);
        GateParams::init(6, 8, GateConfig::default().init_temperature, &mut rng)
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn teacher_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        let params = demo_teacher();
        let meta = TeacherMeta {
            dataset_hash: "d".repeat(64),
            config_hash: "c".repeat(64),
            seed: 17,
        };
        save_teacher(&path, &params, &meta).unwrap();
        let (back, back_meta) = load_teacher(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn gate_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gate.ckpt");
        let params = demo_gate();
        let meta = GateMeta {
            dataset_hash: "d".repeat(64),
            teacher_hash: "t".repeat(64),
            config_hash: "c".repeat(64),
            seed: 17,
        };
        save_gate(&path, &params, &meta).unwrap();
        let (back, back_meta) = load_gate(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn saving_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let params = demo_teacher();
        let meta = TeacherMeta {
            dataset_hash: "d".into(),
            config_hash: "c".into(),
            seed: 1,
        };
        save_teacher(&a, &params, &meta).unwrap();
        save_teacher(&b, &params, &meta).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn flipped_payload_byte_is_a_hash_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        let meta = TeacherMeta {
            dataset_hash: "d".into(),
            config_hash: "c".into(),
            seed: 1,
        };
        save_teacher(&path, &demo_teacher(), &meta).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&path, bytes).unwrap();
        match load_teacher(&path) {
            Err(Error::HashMismatch { .. }) => {}
            other => panic!("expected hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn kind_confusion_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let meta = TeacherMeta {
            dataset_hash: "d".into(),
            config_hash: "c".into(),
            seed: 1,
        };
        save_teacher(&path, &demo_teacher(), &meta).unwrap();
        assert!(load_gate(&path).is_err());
    }

    #[test]
    fn missing_file_is_distinct_from_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.ckpt");
        assert!(matches!(load_teacher(&missing), Err(Error::MissingFile(_))));
        let garbage = dir.path().join("garbage.ckpt");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_teacher(&garbage),
            Err(Error::MalformedArtifact { .. })
        ));
    }

    #[test]
    fn sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stage.json");
        let mut inputs = BTreeMap::new();
        inputs.insert("dataset".to_string(), "aa".to_string());
        let sc = StageSidecar {
            stage: "train-teacher".into(),
            seed: 17,
            config_sha256: "cc".into(),
            inputs,
            output_sha256: "bb".into(),
        };
        sc.save(&path).unwrap();
        assert_eq!(StageSidecar::load(&path).unwrap(), sc);
    }

    #[test]
    fn require_hash_accepts_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        std::fs::write(&path, b"abc").unwrap();
        let h = file_sha256(&path).unwrap();
        require_hash(&path, &h).unwrap();
        assert!(matches!(
            require_hash(&path, "deadbeef"),
            Err(Error::HashMismatch { .. })
        ));
        assert!(matches!(
            require_hash(&dir.path().join("gone"), &h),
            Err(Error::MissingFile(_))
        ));
    }
}
