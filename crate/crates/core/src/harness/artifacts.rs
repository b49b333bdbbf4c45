//! On-disk formats written next to an experiment's traces and reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::evaluate::{AttackEvaluation, TargetSet};
use crate::attack::{MeasurementMatrix, TargetProfile};
use crate::error::{Error, Result};
use crate::fedsim::UpdateTrace;
use crate::model::LabeledSample;

pub const TARGETS_FILE: &str = "targets.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.bin";
pub const MEASUREMENTS_META: &str = "measurements.json";
pub const TRACE_META: &str = "trace_meta.json";

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `sample_id,dataset_index,is_member,label,x0,...`
pub fn targets_csv(targets: &TargetSet) -> String {
    let mut s = String::from("sample_id,dataset_index,is_member,label,features\n");
    for (i, x) in targets.samples.iter().enumerate() {
        let _ = write!(
            s,
            "{i},{},{},{}",
            targets.dataset_index[i],
            u8::from(targets.is_member[i]),
            x.y
        );
        for v in &x.x {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_targets_csv(path: &Path) -> Result<TargetSet> {
    let text = read_to_string(path)?;
    let bad = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "sample_id,dataset_index,is_member,label,features")) => {}
        _ => return Err(bad(1, "missing or unexpected header")),
    }
    let mut out = TargetSet {
        samples: Vec::new(),
        is_member: Vec::new(),
        dataset_index: Vec::new(),
    };
    for (n, line) in lines {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(bad(line_no, "expected an id, index, flag, label and features"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(line_no, "expected an integer"));
        if int(fields[0])? != out.samples.len() {
            return Err(bad(line_no, "sample ids must count up from 0"));
        }
        out.dataset_index.push(int(fields[1])?);
        out.is_member.push(match fields[2] {
            "1" => true,
            "0" => false,
            _ => return Err(bad(line_no, "is_member must be 0 or 1")),
        });
        let y = int(fields[3])?;
        let x = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(line_no, "expected a number")))
            .collect::<Result<Vec<_>>>()?;
        out.samples.push(LabeledSample::new(x, y));
    }
    Ok(out)
}

/// `method,sample_id,is_member_truth,score`
pub fn scores_csv(eval: &AttackEvaluation, targets: &TargetSet) -> String {
    let mut s = String::from("method,sample_id,is_member_truth,score\n");
    for m in &eval.scores {
        for (i, v) in m.scores.iter().enumerate() {
            let _ = writeln!(s, "{},{i},{},{v}", m.method, u8::from(targets.is_member[i]));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub method: String,
    pub sample_id: usize,
    pub is_member: bool,
    pub score: f64,
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = read_to_string(path)?;
    let bad = |line: usize| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: "malformed score row".into(),
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some("method,sample_id,is_member_truth,score") {
        return Err(bad(1));
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(n + 1));
            }
            Ok(ScoreRow {
                method: f[0].to_string(),
                sample_id: f[1].parse().map_err(|_| bad(n + 1))?,
                is_member: match f[2] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad(n + 1)),
                },
                score: f[3].parse().map_err(|_| bad(n + 1))?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RoundScores<'a> {
    method: &'a str,
    targets: Vec<TargetRounds<'a>>,
}

#[derive(Serialize)]
struct TargetRounds<'a> {
    sample_id: usize,
    per_round: &'a [f64],
    aggregate: f64,
}

/// Per-round FedMIA scores for audit.
pub fn rounds_json(eval: &AttackEvaluation) -> Result<String> {
    let doc: Vec<RoundScores> = eval
        .fedmia_rounds
        .iter()
        .map(|(m, scores)| RoundScores {
            method: m.id(),
            targets: scores
                .iter()
                .enumerate()
                .map(|(i, s)| TargetRounds {
                    sample_id: i,
                    per_round: &s.per_round,
                    aggregate: s.aggregate,
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&doc).map_err(|e| Error::param(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementsMeta {
    format: String,
    version: u32,
    targets: usize,
    rounds: usize,
    clients: usize,
    trace_meta_sha256: String,
    bytes: u64,
    sha256: String,
}

/// Stores target profiles next to a saved trace so that replays can skip
/// the measurement step.
pub fn save_measurements(trace_dir: &Path, profiles: &[TargetProfile]) -> Result<()> {
    let meta_bytes = std::fs::read(trace_dir.join(TRACE_META)).map_err(|e| Error::io(trace_dir.join(TRACE_META), e))?;
    let rounds = profiles.first().map_or(0, TargetProfile::num_rounds);
    let clients = profiles.first().map_or(0, |p| p.cosine.num_clients());
    let mut buf = Vec::with_capacity(profiles.len() * (3 * rounds * clients + rounds + 1) * 8);
    for p in profiles {
        for m in [&p.cosine, &p.loss, &p.grad_diff] {
            for v in m.values.iter().flatten() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in &p.global_loss {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = MeasurementsMeta {
        format: "fedaudit-measurements".into(),
        version: 1,
        targets: profiles.len(),
        rounds,
        clients,
        trace_meta_sha256: sha256_hex(&meta_bytes),
        bytes: buf.len() as u64,
        sha256: sha256_hex(&buf),
    };
    write(&trace_dir.join(MEASUREMENTS_FILE), &buf)?;
    write(
        &trace_dir.join(MEASUREMENTS_META),
        serde_json::to_string_pretty(&meta).map_err(|e| Error::param(e.to_string()))?,
    )
}

fn take_matrix(vals: &mut impl Iterator<Item = f64>, rounds: usize, clients: usize) -> MeasurementMatrix {
    MeasurementMatrix {
        values: (0..rounds).map(|_| vals.by_ref().take(clients).collect()).collect(),
    }
}

/// Loads cached profiles if present; `Ok(None)` when there is no cache.
pub fn load_measurements(trace_dir: &Path, trace: &UpdateTrace, targets: usize) -> Result<Option<Vec<TargetProfile>>> {
    let meta_path = trace_dir.join(MEASUREMENTS_META);
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: MeasurementsMeta =
        serde_json::from_str(&read_to_string(&meta_path)?).map_err(|e| Error::integrity(&meta_path, e.to_string()))?;
    let trace_meta = std::fs::read(trace_dir.join(TRACE_META)).map_err(|e| Error::io(trace_dir.join(TRACE_META), e))?;
    if meta.trace_meta_sha256 != sha256_hex(&trace_meta) {
        return Err(Error::integrity(&meta_path, "measurements belong to a different trace"));
    }
    let (rounds, clients) = (trace.num_rounds(), trace.num_clients);
    if meta.targets != targets || meta.rounds != rounds || meta.clients != clients {
        return Err(Error::integrity(
            &meta_path,
            "dimensions do not match the trace and targets",
        ));
    }
    let bin_path = trace_dir.join(MEASUREMENTS_FILE);
    let buf = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let per_target = 3 * rounds * clients + rounds + 1;
    if buf.len() as u64 != meta.bytes || buf.len() != targets * per_target * 8 {
        return Err(Error::integrity(&bin_path, "unexpected file size"));
    }
    if sha256_hex(&buf) != meta.sha256 {
        return Err(Error::integrity(&bin_path, "checksum mismatch"));
    }
    let mut vals = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let grad_norm = MeasurementMatrix {
        values: trace
            .rounds
            .iter()
            .map(|r| r.updates.iter().map(|u| u.norm()).collect())
            .collect(),
    };
    let profiles = (0..targets)
        .map(|_| {
            let cosine = take_matrix(&mut vals, rounds, clients);
            let loss = take_matrix(&mut vals, rounds, clients);
            let grad_diff = take_matrix(&mut vals, rounds, clients);
            let global_loss = vals.by_ref().take(rounds + 1).collect();
            TargetProfile {
                cosine,
                loss,
                grad_norm: grad_norm.clone(),
                grad_diff,
                global_loss,
            }
        })
        .collect();
    Ok(Some(profiles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::MeasurementMatrix;

    fn targets() -> TargetSet {
        TargetSet {
            samples: vec![
                LabeledSample::new(vec![0.1, -2.5e-7], 1),
                LabeledSample::new(vec![1.0 / 3.0, 4.0], 0),
            ],
            is_member: vec![true, false],
            dataset_index: vec![17, 3],
        }
    }

    #[test]
    fn targets_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TARGETS_FILE);
        write(&path, targets_csv(&targets())).unwrap();
        assert_eq!(read_targets_csv(&path).unwrap(), targets());
    }

    #[test]
    fn targets_golden() {
        assert_eq!(
            targets_csv(&targets()),
            "sample_id,dataset_index,is_member,label,features\n\
             0,17,1,1,0.1,-0.00000025\n\
             1,3,0,0,0.3333333333333333,4\n"
        );
    }

    #[test]
    fn malformed_targets_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TARGETS_FILE);
        write(&path, "sample_id,dataset_index,is_member,label,features\n0,1,2,0,0.5\n").unwrap();
        match read_targets_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scores_golden_and_round_trip() {
        use super::super::evaluate::MethodScores;
        use crate::attack::AttackMethod;
        let eval = AttackEvaluation {
            scores: vec![MethodScores {
                method: AttackMethod::FedmiaIi,
                scores: vec![0.75, 0.125],
            }],
            fedmia_rounds: Vec::new(),
            metrics: Vec::new(),
            inclusion: Vec::new(),
            round_curves: Vec::new(),
        };
        let text = scores_csv(&eval, &targets());
        assert_eq!(
            text,
            "method,sample_id,is_member_truth,score\nfedmia_ii,0,1,0.75\nfedmia_ii,1,0,0.125\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write(&path, &text).unwrap();
        let rows = read_scores_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].score, 0.125);
        assert!(!rows[1].is_member);
    }

    #[test]
    fn measurement_cache_detects_tampering() {
        use crate::fedsim::{DefenseConfig, RoundRecord};
        use crate::model::{ModelSpec, ParamVector};
        let spec = ModelSpec::linear(1, 2, 0.0);
        let trace = UpdateTrace {
            spec,
            defense: DefenseConfig::None,
            seed: 1,
            num_clients: 3,
            rounds: vec![RoundRecord {
                round: 0,
                lr: 0.1,
                global_before: ParamVector::zeros(4),
                updates: vec![ParamVector(vec![1.0, 0.0, 0.0, 0.0]); 3],
                test_accuracy: 0.5,
            }],
            final_model: ParamVector::zeros(4),
        };
        let dir = tempfile::tempdir().unwrap();
        trace.save(dir.path(), serde_json::Value::Null).unwrap();
        let m = |v: f64| MeasurementMatrix {
            values: vec![vec![v, v + 1.0, v + 2.0]],
        };
        let profile = TargetProfile {
            cosine: m(0.1),
            loss: m(0.2),
            grad_norm: m(1.0),
            grad_diff: m(0.3),
            global_loss: vec![0.5, 0.25],
        };
        save_measurements(dir.path(), std::slice::from_ref(&profile)).unwrap();
        let back = load_measurements(dir.path(), &trace, 1).unwrap().unwrap();
        assert_eq!(back[0].cosine, profile.cosine);
        assert_eq!(back[0].global_loss, profile.global_loss);
        assert_eq!(back[0].grad_norm.values, vec![vec![1.0; 3]]);
        assert!(load_measurements(dir.path(), &trace, 2).is_err());

        let bin = dir.path().join(MEASUREMENTS_FILE);
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        std::fs::write(&bin, bytes).unwrap();
        match load_measurements(dir.path(), &trace, 1) {
            Err(Error::Integrity { file, .. }) => assert_eq!(file, bin),
            other => panic!("{other:?}"),
        }
    }
}
