//! The server's view of a federation and its on-disk form.
//!
//! A trace directory holds `trace_meta.json` plus one binary file per round
//! and one for the final global model. Binary files are raw little-endian
//! `f64` arrays: a round file is the global model before the round followed
//! by the `K` uploaded updates in client order, each `dim` values long. The
//! metadata records each file's byte length and SHA-256 digest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DefenseConfig;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};

pub const META_FILE: &str = "trace_meta.json";
pub const FORMAT_NAME: &str = "fedaudit-trace";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Effective learning rate used by clients and server in this round.
    pub lr: f64,
    pub global_before: ParamVector,
    /// Post-defense uploads, indexed by client.
    pub updates: Vec<ParamVector>,
    /// Holdout accuracy of the model produced by this round.
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub spec: ModelSpec,
    pub defense: DefenseConfig,
    pub seed: u64,
    pub num_clients: usize,
    pub rounds: Vec<RoundRecord>,
    pub final_model: ParamVector,
}

impl UpdateTrace {
    pub fn dim(&self) -> usize {
        self.spec.param_count()
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: String| Err(Error::Contract(m));
        if self.rounds.is_empty() {
            return bad("trace has no rounds".into());
        }
        if self.final_model.len() != d {
            return bad(format!(
                "final model has {} values, expected {d}",
                self.final_model.len()
            ));
        }
        for (t, r) in self.rounds.iter().enumerate() {
            if r.round != t {
                return bad(format!("round {t} is labelled {}", r.round));
            }
            if r.updates.len() != self.num_clients {
                return bad(format!(
                    "round {t} has {} updates, expected {}",
                    r.updates.len(),
                    self.num_clients
                ));
            }
            if r.global_before.len() != d || r.updates.iter().any(|u| u.len() != d) {
                return bad(format!("round {t} has a vector of the wrong dimension"));
            }
        }
        Ok(())
    }

    /// Global model after round `t` (0-based).
    pub fn global_after(&self, t: usize) -> &ParamVector {
        self.rounds.get(t + 1).map_or(&self.final_model, |r| &r.global_before)
    }

    /// The trace as it stood after the first `rounds` rounds.
    pub fn truncated(&self, rounds: usize) -> Result<UpdateTrace> {
        if rounds == 0 || rounds > self.num_rounds() {
            return Err(Error::param(format!(
                "cannot truncate a {}-round trace to {rounds} rounds",
                self.num_rounds()
            )));
        }
        Ok(UpdateTrace {
            spec: self.spec,
            defense: self.defense.clone(),
            seed: self.seed,
            num_clients: self.num_clients,
            rounds: self.rounds[..rounds].to_vec(),
            final_model: self.global_after(rounds - 1).clone(),
        })
    }

    /// Copy with every uploaded update multiplied by `c`.
    pub fn with_scaled_updates(&self, c: f64) -> UpdateTrace {
        let mut out = self.clone();
        for r in &mut out.rounds {
            for u in &mut r.updates {
                u.iter_mut().for_each(|v| *v *= c);
            }
        }
        out
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rounds = Vec::with_capacity(self.rounds.len());
        for r in &self.rounds {
            let file = format!("round_{:04}.bin", r.round);
            let vectors = std::iter::once(&r.global_before).chain(r.updates.iter());
            let entry = write_f64s(&dir.join(&file), vectors)?;
            rounds.push(RoundMeta {
                round: r.round,
                lr: r.lr,
                test_accuracy: r.test_accuracy,
                file: FileMeta { name: file, ..entry },
            });
        }
        let final_entry = write_f64s(&dir.join("final_model.bin"), std::iter::once(&self.final_model))?;
        let meta = TraceMeta {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            model: self.spec,
            defense: self.defense.clone(),
            seed: self.seed,
            num_clients: self.num_clients,
            num_rounds: self.rounds.len(),
            dim: self.dim(),
            rounds,
            final_model: FileMeta {
                name: "final_model.bin".into(),
                ..final_entry
            },
            extra,
        };
        let json = serde_json::to_string_pretty(&meta).expect("trace metadata serializes");
        let path = dir.join(META_FILE);
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads and verifies a trace directory. Returns the trace and the
    /// `extra` metadata stored with it.
    pub fn load(dir: &Path) -> Result<(UpdateTrace, serde_json::Value)> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::integrity(&meta_path, "missing trace metadata"),
            _ => Error::io(&meta_path, e),
        })?;
        let meta: TraceMeta = serde_json::from_str(&text)
            .map_err(|e| Error::integrity(&meta_path, format!("malformed metadata: {e}")))?;
        if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
            return Err(Error::integrity(
                &meta_path,
                format!("unsupported format {} v{}", meta.format, meta.version),
            ));
        }
        if meta.model.param_count() != meta.dim || meta.rounds.len() != meta.num_rounds {
            return Err(Error::integrity(&meta_path, "inconsistent dimensions"));
        }
        let d = meta.dim;
        let mut rounds = Vec::with_capacity(meta.num_rounds);
        for (t, rm) in meta.rounds.iter().enumerate() {
            if rm.round != t {
                return Err(Error::integrity(&meta_path, format!("round {t} listed out of order")));
            }
            let values = read_f64s(dir, &rm.file, (meta.num_clients + 1) * d)?;
            let mut chunks = values.chunks(d).map(|c| ParamVector(c.to_vec()));
            let global_before = chunks.next().expect("length checked");
            rounds.push(RoundRecord {
                round: rm.round,
                lr: rm.lr,
                global_before,
                updates: chunks.collect(),
                test_accuracy: rm.test_accuracy,
            });
        }
        let final_model = ParamVector(read_f64s(dir, &meta.final_model, d)?);
        let trace = UpdateTrace {
            spec: meta.model,
            defense: meta.defense,
            seed: meta.seed,
            num_clients: meta.num_clients,
            rounds,
            final_model,
        };
        trace
            .validate()
            .map_err(|e| Error::integrity(&meta_path, e.to_string()))?;
        Ok((trace, meta.extra))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMeta {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundMeta {
    round: usize,
    lr: f64,
    test_accuracy: f64,
    file: FileMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceMeta {
    format: String,
    version: u32,
    model: ModelSpec,
    defense: DefenseConfig,
    seed: u64,
    num_clients: usize,
    num_rounds: usize,
    dim: usize,
    rounds: Vec<RoundMeta>,
    final_model: FileMeta,
    #[serde(default)]
    extra: serde_json::Value,
}

fn write_f64s<'a>(path: &Path, vectors: impl Iterator<Item = &'a ParamVector>) -> Result<FileMeta> {
    let mut bytes = Vec::new();
    for v in vectors {
        for x in v.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(FileMeta {
        name: String::new(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn read_f64s(dir: &Path, meta: &FileMeta, expected_len: usize) -> Result<Vec<f64>> {
    if meta.name.contains(['/', '\\']) || meta.name.starts_with('.') {
        return Err(Error::integrity(
            dir.join(META_FILE),
            format!("illegal file name {}", meta.name),
        ));
    }
    let path: PathBuf = dir.join(&meta.name);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::integrity(&path, "file missing"),
        _ => Error::io(&path, e),
    })?;
    if bytes.len() as u64 != meta.bytes || bytes.len() != expected_len * 8 {
        return Err(Error::integrity(
            &path,
            format!("expected {} bytes, found {}", expected_len * 8, bytes.len()),
        ));
    }
    if hex::encode(Sha256::digest(&bytes)) != meta.sha256 {
        return Err(Error::integrity(&path, "checksum mismatch"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn tiny_trace() -> UpdateTrace {
        let spec = ModelSpec::linear(1, 2, 0.0);
        let v = |a: f64| ParamVector(vec![a, a + 0.1, -a, 1.0 / 3.0]);
        UpdateTrace {
            spec,
            defense: DefenseConfig::None,
            seed: 3,
            num_clients: 2,
            rounds: vec![
                RoundRecord {
                    round: 0,
                    lr: 0.1,
                    global_before: v(0.0),
                    updates: vec![v(1.0), v(2.0)],
                    test_accuracy: 0.5,
                },
                RoundRecord {
                    round: 1,
                    lr: 0.099,
                    global_before: v(0.3),
                    updates: vec![v(3.0), v(4.0)],
                    test_accuracy: 0.75,
                },
            ],
            final_model: v(0.7),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = tiny_trace();
        t.save(dir.path(), serde_json::json!({"note": 1})).unwrap();
        let (back, extra) = UpdateTrace::load(dir.path()).unwrap();
        assert_eq!(back, t);
        assert_eq!(extra["note"], 1);
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        tiny_trace().save(dir.path(), serde_json::Value::Null).unwrap();
        let f = dir.path().join("round_0001.bin");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 8]).unwrap();
        match UpdateTrace::load(dir.path()) {
            Err(Error::Integrity { file, .. }) => assert!(file.ends_with("round_0001.bin")),
            other => panic!("expected integrity error, got {other:?}"),
        }
        let mut flipped = bytes.clone();
        flipped[3] ^= 1;
        fs::write(&f, &flipped).unwrap();
        assert!(matches!(UpdateTrace::load(dir.path()), Err(Error::Integrity { .. })));
        fs::remove_file(dir.path().join(META_FILE)).unwrap();
        assert!(matches!(UpdateTrace::load(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn truncated_view() {
        let t = tiny_trace();
        let one = t.truncated(1).unwrap();
        assert_eq!(one.num_rounds(), 1);
        assert_eq!(one.final_model, t.rounds[1].global_before);
        assert_eq!(t.truncated(2).unwrap(), t);
        assert!(t.truncated(0).is_err());
        assert!(t.truncated(3).is_err());
    }
}
