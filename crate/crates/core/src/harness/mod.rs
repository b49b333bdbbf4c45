//! Experiment runner: data, federation, attacks and metrics for every seed
//! and sweep point, plus trace replay and report rendering.
//!
//! A run directory looks like this:
//!
//! ```text
//! <out>/<name>/
//!   config.toml              parsed config, re-serialized
//!   metrics.csv              seed means per (method, sweep point)
//!   metrics_by_seed.csv      one row per (seed, sweep point, method)
//!   rounds.csv               seed-mean AUC / TPR using the first t rounds
//!   pareto.json              privacy-utility points, fronts and hypervolumes
//!   report.json              everything above plus aggregate-inclusion checks and provenance
//!   scores/seed<S>_point<P>.csv          method,sample_id,is_member_truth,score
//!   scores/seed<S>_point<P>_rounds.json  per-round FedMIA scores
//!   traces/seed<S>_point<P>/             update trace, targets.csv, measurement cache
//! ```

mod artifacts;
pub mod config;
mod evaluate;
mod plots;

pub use artifacts::{read_scores_csv, read_targets_csv, scores_csv, targets_csv, ScoreRow};
pub use config::{AttackConfig, DatasetConfig, ExperimentConfig, PartitionScheme, ReplayConfig, SweepConfig};
pub use evaluate::{evaluate, AttackEvaluation, InclusionCheck, MethodMetrics, MethodScores, RoundCurve, TargetSet};
pub use plots::emit_plots;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackContext, AttackMethod};
use crate::data::{self, Dataset, EvalSplitConfig, Partition};
use crate::error::{Error, Result};
use crate::fedsim::{self, DefenseConfig, UpdateTrace};
use crate::metrics::{self, ParetoPoint};
use crate::numstat::{tag, RngStream};
use artifacts::{fmt_opt, sha256_hex, write};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_HEADER: &str = "method,defense,param,auc,tpr_at_fpr,fpr_cap,utility_loss";
pub const METRICS_BY_SEED_HEADER: &str =
    "seed,point,method,defense,param,auc,tpr_at_fpr,achieved_fpr,fpr_cap,utility_loss";

/// Dataset, partition and audited targets of one seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub partition: Partition,
    pub targets: TargetSet,
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let root = RngStream::root(seed);
    let dataset = match &cfg.dataset {
        DatasetConfig::Synthetic {
            num_classes,
            input_dim,
            per_class,
            class_sep,
            geometry,
        } => {
            let ds = data::synth_blobs(
                &mut root.derive(tag::DATASET).rng(),
                *num_classes,
                *input_dim,
                *per_class,
                *class_sep,
            )?;
            Dataset::new(ds.samples, ds.num_classes, *geometry)?
        }
        DatasetConfig::Csv {
            path,
            num_classes,
            geometry,
        } => {
            let ds = data::load_csv(path, *num_classes)?;
            Dataset::new(ds.samples, ds.num_classes, *geometry).map_err(|e| match e {
                Error::Shape { .. } | Error::Parameter(_) => Error::config("dataset.geometry", e.to_string()),
                other => other,
            })?
        }
    };
    let p = &cfg.partition;
    let mut rng = root.derive(tag::PARTITION).rng();
    let partition = match p.scheme {
        PartitionScheme::Iid => data::partition_iid(&mut rng, &dataset, p.clients, p.per_client, p.holdout)?,
        PartitionScheme::Dirichlet => data::partition_dirichlet(
            &mut rng,
            &dataset,
            p.clients,
            p.per_client,
            p.beta.expect("validated"),
            p.holdout,
        )?,
    };
    let split = data::eval_split(
        &mut root.derive(tag::TARGETS).rng(),
        &partition,
        &EvalSplitConfig {
            target_client: cfg.attack.target_client,
            per_side: cfg.attack.targets_per_class,
            source: p.nonmember_source,
            holdout_fraction: p.holdout_fraction,
            others_fraction: p.others_fraction,
        },
    )?;
    let dataset_index: Vec<usize> = split
        .member_indices
        .iter()
        .chain(&split.nonmember_indices)
        .copied()
        .collect();
    let targets = TargetSet {
        samples: dataset.select(&dataset_index),
        is_member: dataset_index
            .iter()
            .enumerate()
            .map(|(i, _)| i < split.member_indices.len())
            .collect(),
        dataset_index,
    };
    Ok(PreparedData {
        dataset,
        partition,
        targets,
    })
}

/// Outcome of one (seed, sweep point) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub seed: u64,
    pub point: usize,
    pub defense: String,
    pub param: Option<f64>,
    pub test_accuracy: f64,
    pub utility_loss: f64,
    pub metrics: Vec<MethodMetrics>,
    pub inclusion: Vec<InclusionCheck>,
    pub round_curves: Vec<RoundCurve>,
}

/// Seed means for one (sweep point, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: AttackMethod,
    pub point: usize,
    pub defense: String,
    pub param: Option<f64>,
    pub auc: f64,
    pub tpr_at_fpr: f64,
    pub fpr_cap: f64,
    pub utility_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSummary {
    pub method: AttackMethod,
    /// One point per sweep point, in sweep order.
    pub points: Vec<ParetoPoint>,
    pub front: Vec<ParetoPoint>,
    pub hypervolume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub fpr_cap: f64,
    pub jobs: Vec<JobResult>,
    pub summary: Vec<SummaryRow>,
    pub pareto: Vec<ParetoSummary>,
    pub inclusion_checks: usize,
    pub inclusion_violations: usize,
}

impl ExperimentReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        if !path.exists() {
            return Err(Error::config(path.display().to_string(), "no report in this directory"));
        }
        serde_json::from_str(&artifacts::read_to_string(&path)?)
            .map_err(|e| Error::integrity(&path, format!("malformed report: {e}")))
    }

    pub fn summary_for(&self, method: AttackMethod, point: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.point == point)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Parent of the run directory.
    pub out_root: PathBuf,
    /// Replaces the config's seed list.
    pub seeds: Option<Vec<u64>>,
}

fn job_stem(seed: u64, point: usize) -> String {
    format!("seed{seed}_point{point}")
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs one job and writes its scores and, if configured, its trace.
fn run_job(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
    point: usize,
    defense: &DefenseConfig,
    run_dir: &Path,
) -> Result<JobResult> {
    let spec = cfg.model_spec(data.dataset.input_dim(), data.dataset.num_classes);
    let fed = cfg.fed_config(seed, defense.clone());
    let trace = fedsim::run_federation(&data.dataset, &data.partition, &spec, &fed)?;
    let profiles = AttackContext::new(&trace)?.profiles(&data.targets.samples)?;
    let eval = evaluate(&profiles, &data.targets, &cfg.attack)?;

    let stem = job_stem(seed, point);
    write(
        &run_dir.join("scores").join(format!("{stem}.csv")),
        scores_csv(&eval, &data.targets),
    )?;
    write(
        &run_dir.join("scores").join(format!("{stem}_rounds.json")),
        artifacts::rounds_json(&eval)?,
    )?;
    if cfg.save_traces {
        let dir = run_dir.join("traces").join(&stem);
        let extra = serde_json::json!({ "target_client": cfg.attack.target_client });
        trace.save(&dir, extra)?;
        write(&dir.join(artifacts::TARGETS_FILE), targets_csv(&data.targets))?;
        artifacts::save_measurements(&dir, &profiles)?;
    }

    let test_accuracy = trace.rounds.last().map_or(0.0, |r| r.test_accuracy);
    let job = JobResult {
        seed,
        point,
        defense: defense.name().into(),
        param: cfg.point_param(defense),
        test_accuracy,
        utility_loss: 1.0 - test_accuracy,
        metrics: eval.metrics,
        inclusion: eval.inclusion,
        round_curves: eval.round_curves,
    };
    let fedmia_auc = job
        .metrics
        .iter()
        .find(|m| m.method == AttackMethod::FedmiaIi)
        .map_or(String::new(), |m| format!(", FedMIA-II AUC {:.4}", m.auc));
    log::info!(
        "seed {seed} point {point} ({} {}): test accuracy {:.4}{fedmia_auc}",
        job.defense,
        fmt_opt(job.param),
        test_accuracy
    );
    Ok(job)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn summarize(cfg: &ExperimentConfig, jobs: &[JobResult], points: usize) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for point in 0..points {
        let at: Vec<&JobResult> = jobs.iter().filter(|j| j.point == point).collect();
        for &method in &cfg.attack.methods {
            let ms: Vec<&MethodMetrics> = at
                .iter()
                .filter_map(|j| j.metrics.iter().find(|m| m.method == method))
                .collect();
            rows.push(SummaryRow {
                method,
                point,
                defense: at[0].defense.clone(),
                param: at[0].param,
                auc: mean(ms.iter().map(|m| m.auc)),
                tpr_at_fpr: mean(ms.iter().map(|m| m.tpr_at_fpr)),
                fpr_cap: cfg.attack.fpr_cap,
                utility_loss: mean(at.iter().map(|j| j.utility_loss)),
                test_accuracy: mean(at.iter().map(|j| j.test_accuracy)),
            });
        }
    }
    rows
}

fn pareto_summaries(cfg: &ExperimentConfig, summary: &[SummaryRow]) -> Result<Vec<ParetoSummary>> {
    cfg.attack
        .methods
        .iter()
        .map(|&method| {
            let points: Vec<ParetoPoint> = summary
                .iter()
                .filter(|r| r.method == method)
                .map(|r| ParetoPoint::new(r.utility_loss.clamp(0.0, 1.0), r.tpr_at_fpr))
                .collect();
            Ok(ParetoSummary {
                method,
                front: metrics::pareto_front(&points)?,
                hypervolume: metrics::hypervolume(&points, (1.0, 1.0))?,
                points,
            })
        })
        .collect()
}

pub fn metrics_csv(summary: &[SummaryRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.defense,
            fmt_opt(r.param),
            r.auc,
            r.tpr_at_fpr,
            r.fpr_cap,
            r.utility_loss
        );
    }
    s
}

pub fn metrics_by_seed_csv(jobs: &[JobResult]) -> String {
    let mut s = format!("{METRICS_BY_SEED_HEADER}\n");
    for j in jobs {
        for m in &j.metrics {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                j.seed,
                j.point,
                m.method,
                j.defense,
                fmt_opt(j.param),
                m.auc,
                m.tpr_at_fpr,
                m.achieved_fpr,
                m.fpr_cap,
                j.utility_loss
            );
        }
    }
    s
}

/// Seed-mean round curves: `method,defense,param,round,auc,tpr_at_fpr`,
/// rounds counted from 1.
pub fn rounds_csv(cfg_methods: &[AttackMethod], jobs: &[JobResult], points: usize) -> String {
    let mut s = String::from("method,defense,param,round,auc,tpr_at_fpr\n");
    for point in 0..points {
        let at: Vec<&JobResult> = jobs.iter().filter(|j| j.point == point).collect();
        let Some(first) = at.first() else { continue };
        for &method in cfg_methods {
            let curves: Vec<&RoundCurve> = at
                .iter()
                .filter_map(|j| j.round_curves.iter().find(|c| c.method == method))
                .collect();
            let rounds = curves.first().map_or(0, |c| c.auc.len());
            for t in 0..rounds {
                let _ = writeln!(
                    s,
                    "{method},{},{},{},{},{}",
                    first.defense,
                    fmt_opt(first.param),
                    t + 1,
                    mean(curves.iter().map(|c| c.auc[t])),
                    mean(curves.iter().map(|c| c.tpr_at_fpr[t]))
                );
            }
        }
    }
    s
}

/// Runs an already-parsed config. `config_text` is hashed for provenance.
pub fn run_config(cfg: &ExperimentConfig, config_text: &str, opts: &RunOptions) -> Result<(ExperimentReport, PathBuf)> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &opts.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    let started_unix = now_unix();
    let run_dir = opts.out_root.join(&cfg.name);
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write(&run_dir.join("config.toml"), cfg.to_toml()?)?;

    let defenses = cfg.defenses()?;
    log::info!(
        "running {} seed(s) x {} sweep point(s) into {}",
        cfg.seeds.len(),
        defenses.len(),
        run_dir.display()
    );
    let prepared: Vec<PreparedData> = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_data(&cfg, s))
        .collect::<Result<_>>()?;
    let work: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|i| (0..defenses.len()).map(move |p| (i, p)))
        .collect();
    let jobs: Vec<JobResult> = work
        .par_iter()
        .map(|&(i, p)| run_job(&cfg, &prepared[i], cfg.seeds[i], p, &defenses[p], &run_dir))
        .collect::<Result<_>>()?;

    let summary = summarize(&cfg, &jobs, defenses.len());
    let pareto = pareto_summaries(&cfg, &summary)?;
    write(&run_dir.join("metrics.csv"), metrics_csv(&summary))?;
    write(&run_dir.join("metrics_by_seed.csv"), metrics_by_seed_csv(&jobs))?;
    write(
        &run_dir.join("rounds.csv"),
        rounds_csv(&cfg.attack.methods, &jobs, defenses.len()),
    )?;
    write(
        &run_dir.join("pareto.json"),
        serde_json::to_string_pretty(&pareto).map_err(|e| Error::param(e.to_string()))? + "\n",
    )?;

    let checks: Vec<&InclusionCheck> = jobs.iter().flat_map(|j| &j.inclusion).collect();
    let violations = checks.iter().filter(|c| !c.holds).count();
    if violations > 0 {
        log::error!("{violations} aggregate-inclusion violation(s)");
    }
    let report = ExperimentReport {
        format: "fedaudit-report".into(),
        version: 1,
        name: cfg.name.clone(),
        provenance: Provenance {
            config_sha256: sha256_hex(config_text.as_bytes()),
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix,
            finished_unix: now_unix(),
        },
        seeds: cfg.seeds.clone(),
        rounds: cfg.federation.rounds,
        fpr_cap: cfg.attack.fpr_cap,
        inclusion_checks: checks.len(),
        inclusion_violations: violations,
        jobs,
        summary,
        pareto,
    };
    write(
        &run_dir.join(REPORT_FILE),
        serde_json::to_string_pretty(&report).map_err(|e| Error::param(e.to_string()))? + "\n",
    )?;
    Ok((report, run_dir))
}

/// Loads, validates and runs a config file.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<(ExperimentReport, PathBuf)> {
    let cfg = ExperimentConfig::load(config_path)?;
    let text = artifacts::read_to_string(config_path)?;
    run_config(&cfg, &text, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub trace: UpdateTrace,
    pub targets: TargetSet,
    pub evaluation: AttackEvaluation,
    /// Whether stored measurements were used instead of recomputed.
    pub reused_measurements: bool,
}

/// Re-runs the attacks on a stored trace directory.
///
/// Members and non-members come from the directory's `targets.csv`, so the
/// audited client is the one recorded with the trace.
pub fn replay_attack(trace_dir: &Path, attack: &AttackConfig) -> Result<ReplayOutcome> {
    let (trace, extra) = UpdateTrace::load(trace_dir)?;
    let targets_path = trace_dir.join(artifacts::TARGETS_FILE);
    if !targets_path.exists() {
        return Err(Error::integrity(&targets_path, "missing target list"));
    }
    let targets = read_targets_csv(&targets_path)?;
    let mut attack = attack.clone();
    if let Some(k) = extra.get("target_client").and_then(serde_json::Value::as_u64) {
        if k as usize != attack.target_client {
            log::warn!("auditing client {k} as recorded with the trace");
        }
        attack.target_client = k as usize;
    }
    attack.validate(trace.num_clients)?;
    let (profiles, reused) = match artifacts::load_measurements(trace_dir, &trace, targets.len())? {
        Some(p) => (p, true),
        None => (AttackContext::new(&trace)?.profiles(&targets.samples)?, false),
    };
    let evaluation = evaluate(&profiles, &targets, &attack)?;
    Ok(ReplayOutcome {
        trace,
        targets,
        evaluation,
        reused_measurements: reused,
    })
}

/// Writes a replay's scores and metrics into `out_dir`.
pub fn write_replay(out: &ReplayOutcome, out_dir: &Path) -> Result<()> {
    write(&out_dir.join("scores.csv"), scores_csv(&out.evaluation, &out.targets))?;
    write(&out_dir.join("rounds.json"), artifacts::rounds_json(&out.evaluation)?)?;
    let test_accuracy = out.trace.rounds.last().map_or(0.0, |r| r.test_accuracy);
    let job = JobResult {
        seed: out.trace.seed,
        point: 0,
        defense: out.trace.defense.name().into(),
        param: out.trace.defense.primary_param().map(|(_, v)| v),
        test_accuracy,
        utility_loss: 1.0 - test_accuracy,
        metrics: out.evaluation.metrics.clone(),
        inclusion: out.evaluation.inclusion.clone(),
        round_curves: out.evaluation.round_curves.clone(),
    };
    write(
        &out_dir.join("metrics_by_seed.csv"),
        metrics_by_seed_csv(std::slice::from_ref(&job)),
    )
}

/// Plain-text summary of a report.
pub fn render_report(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} seed(s), {} round(s), config sha256 {}",
        report.name,
        report.seeds.len(),
        report.rounds,
        &report.provenance.config_sha256[..12.min(report.provenance.config_sha256.len())]
    );
    let _ = writeln!(
        s,
        "\n{:<14} {:<18} {:>10} {:>8} {:>12} {:>9}",
        "method",
        "defense",
        "param",
        "AUC",
        format!("TPR@{}", report.fpr_cap),
        "test acc"
    );
    for r in &report.summary {
        let _ = writeln!(
            s,
            "{:<14} {:<18} {:>10} {:>8.4} {:>12.4} {:>9.4}",
            r.method.label(),
            r.defense,
            fmt_opt(r.param),
            r.auc,
            r.tpr_at_fpr,
            r.test_accuracy
        );
    }
    if report.pareto.iter().any(|p| p.points.len() > 1) {
        let _ = writeln!(s, "\nhypervolume (reference (1, 1)):");
        for p in &report.pareto {
            let _ = writeln!(
                s,
                "  {:<14} {:.4}  ({} front point(s))",
                p.method.label(),
                p.hypervolume,
                p.front.len()
            );
        }
    }
    let _ = writeln!(
        s,
        "\naggregate-inclusion checks: {} check(s), {} violation(s)",
        report.inclusion_checks, report.inclusion_violations
    );
    s
}
