use std::fs;
use std::path::{Path, PathBuf};

use fedaudit::attack::{AttackContext, AttackMethod};
use fedaudit::fedsim::{self, UpdateTrace};
use fedaudit::harness::{
    self, emit_plots, prepare_data, read_scores_csv, read_targets_csv, replay_attack, run_config, scores_csv,
    ExperimentConfig, ExperimentReport, RunOptions, METRICS_BY_SEED_HEADER, METRICS_HEADER,
};
use fedaudit::Error;

const MINIMAL: &str = include_str!("data/minimal.toml");

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    cfg.attack.methods = AttackMethod::ALL.to_vec();
    cfg
}

fn run_into(root: &Path, cfg: &ExperimentConfig) -> (ExperimentReport, PathBuf) {
    let opts = RunOptions {
        out_root: root.to_path_buf(),
        seeds: None,
    };
    run_config(cfg, MINIMAL, &opts).unwrap()
}

/// Compares `actual` with the file under `tests/data/golden`, or rewrites the
/// file when `FEDAUDIT_BLESS` is set.
fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/golden")
        .join(name);
    if std::env::var_os("FEDAUDIT_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "{name} differs from its golden copy");
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn run_directory_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = run_into(dir.path(), &config());
    let metrics = read(run.join("metrics.csv"));
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    assert_eq!(
        read(run.join("metrics_by_seed.csv")).lines().next(),
        Some(METRICS_BY_SEED_HEADER)
    );
    golden("metrics.csv", &metrics);
    golden("metrics_by_seed.csv", &read(run.join("metrics_by_seed.csv")));
    golden("rounds.csv", &read(run.join("rounds.csv")));
    golden("pareto.json", &read(run.join("pareto.json")));
    golden("scores.csv", &read(run.join("scores/seed3_point0.csv")));
    golden("scores_rounds.json", &read(run.join("scores/seed3_point0_rounds.json")));
    let trace = run.join("traces/seed3_point0");
    golden("targets.csv", &read(trace.join("targets.csv")));
    golden("trace_meta.json", &read(trace.join("trace_meta.json")));
    golden("measurements.json", &read(trace.join("measurements.json")));
}

#[test]
fn identical_runs_write_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, da) = run_into(a.path(), &config());
    let (rb, db) = run_into(b.path(), &config());
    for f in [
        "metrics.csv",
        "metrics_by_seed.csv",
        "rounds.csv",
        "pareto.json",
        "config.toml",
        "scores/seed3_point0.csv",
        "scores/seed3_point0_rounds.json",
        "traces/seed3_point0/trace_meta.json",
        "traces/seed3_point0/round_0001.bin",
        "traces/seed3_point0/measurements.bin",
    ] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    assert_eq!(ra.jobs, rb.jobs);
    assert_eq!(ra.summary, rb.summary);
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = {
        let mut c = config();
        c.seeds = vec![3, 4, 5];
        c
    };
    let a = tempfile::tempdir().unwrap();
    let (_, da) = run_into(a.path(), &cfg);
    let b = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (_, db) = pool.install(|| run_into(b.path(), &cfg));
    for f in ["metrics.csv", "metrics_by_seed.csv", "rounds.csv"] {
        assert_eq!(read(da.join(f)), read(db.join(f)), "{f}");
    }
}

#[test]
fn stored_trace_equals_a_fresh_federation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let (_, run) = run_into(dir.path(), &cfg);
    let (stored, extra) = UpdateTrace::load(&run.join("traces/seed3_point0")).unwrap();
    assert_eq!(extra["target_client"], 0);

    let data = prepare_data(&cfg, 3).unwrap();
    let spec = cfg.model_spec(data.dataset.input_dim(), data.dataset.num_classes);
    let fresh = fedsim::run_federation(
        &data.dataset,
        &data.partition,
        &spec,
        &cfg.fed_config(3, Default::default()),
    )
    .unwrap();
    assert_eq!(stored, fresh);

    let targets = read_targets_csv(&run.join("traces/seed3_point0/targets.csv")).unwrap();
    assert_eq!(targets, data.targets);
}

#[test]
fn replay_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let (report, run) = run_into(dir.path(), &cfg);
    let trace_dir = run.join("traces/seed3_point0");
    let inline_scores = read(run.join("scores/seed3_point0.csv"));

    let cached = replay_attack(&trace_dir, &cfg.attack).unwrap();
    assert!(cached.reused_measurements);
    assert_eq!(scores_csv(&cached.evaluation, &cached.targets), inline_scores);
    assert_eq!(cached.evaluation.metrics, report.jobs[0].metrics);
    assert_eq!(cached.evaluation.round_curves, report.jobs[0].round_curves);
    assert_eq!(cached.evaluation.inclusion, report.jobs[0].inclusion);

    fs::remove_file(trace_dir.join("measurements.json")).unwrap();
    let recomputed = replay_attack(&trace_dir, &cfg.attack).unwrap();
    assert!(!recomputed.reused_measurements);
    assert_eq!(recomputed.evaluation, cached.evaluation);

    let out = dir.path().join("replay");
    harness::write_replay(&recomputed, &out).unwrap();
    assert_eq!(read(out.join("scores.csv")), inline_scores);
    let rows = read_scores_csv(&out.join("scores.csv")).unwrap();
    assert_eq!(rows.len(), AttackMethod::ALL.len() * cached.targets.len());
}

#[test]
fn replay_uses_cached_profiles_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let (_, run) = run_into(dir.path(), &cfg);
    let trace_dir = run.join("traces/seed3_point0");
    let (trace, _) = UpdateTrace::load(&trace_dir).unwrap();
    let targets = read_targets_csv(&trace_dir.join("targets.csv")).unwrap();
    let profiles = AttackContext::new(&trace).unwrap().profiles(&targets.samples).unwrap();
    let replayed = replay_attack(&trace_dir, &cfg.attack).unwrap();
    let direct = harness::evaluate(&profiles, &targets, &cfg.attack).unwrap();
    assert_eq!(replayed.evaluation, direct);
}

fn flip_byte(path: &Path, at: usize) {
    let mut bytes = fs::read(path).unwrap();
    bytes[at] ^= 0x01;
    fs::write(path, bytes).unwrap();
}

#[test]
fn tampering_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let (_, run) = run_into(dir.path(), &cfg);
    let trace_dir = run.join("traces/seed3_point0");

    flip_byte(&trace_dir.join("measurements.bin"), 17);
    let e = replay_attack(&trace_dir, &cfg.attack).unwrap_err();
    assert!(matches!(e, Error::Integrity { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
    flip_byte(&trace_dir.join("measurements.bin"), 17);
    replay_attack(&trace_dir, &cfg.attack).unwrap();

    flip_byte(&trace_dir.join("round_0000.bin"), 40);
    let e = UpdateTrace::load(&trace_dir).unwrap_err();
    assert!(matches!(e, Error::Integrity { .. }), "{e}");
    flip_byte(&trace_dir.join("round_0000.bin"), 40);

    let meta = trace_dir.join("trace_meta.json");
    let text = read(&meta);
    fs::write(&meta, text.replace("\"seed\": 3", "\"seed\": 4")).unwrap();
    let e = replay_attack(&trace_dir, &cfg.attack).unwrap_err();
    assert!(matches!(e, Error::Integrity { .. }), "{e}");

    fs::remove_file(&meta).unwrap();
    assert!(matches!(UpdateTrace::load(&trace_dir), Err(Error::Integrity { .. })));
}

#[test]
fn plots_cover_every_job_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.seeds = vec![3, 4];
    let (report, run) = run_into(dir.path(), &cfg);
    let paths = emit_plots(&run).unwrap();
    assert_eq!(paths.len(), 3);

    let hist = read(run.join("plots/histogram.csv"));
    assert_eq!(
        hist.lines().next(),
        Some("seed,point,method,bin,bin_lo,bin_hi,class,count")
    );
    let per_job = AttackMethod::ALL.len() * 20 * 2;
    assert_eq!(hist.lines().count(), 1 + report.jobs.len() * per_job);
    let targets = prepare_data(&cfg, 3).unwrap().targets.len();
    let counted: usize = hist
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("3,0,fedmia_ii,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, targets);

    let pareto = read(run.join("plots/pareto.csv"));
    assert_eq!(
        pareto.lines().next(),
        Some("method,defense,param,utility_loss,privacy_leakage,on_front")
    );
    assert_eq!(pareto.lines().count(), 1 + AttackMethod::ALL.len());
    let rounds = read(run.join("plots/rounds.csv"));
    assert_eq!(rounds, read(run.join("rounds.csv")));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = config();
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    for path in ["default.toml", "perturb_sweep.toml", "sparsify_sweep.toml"] {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(path);
        ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{path}: {e}"));
    }
}

#[test]
fn config_errors_name_the_field() {
    let cases = [
        (
            MINIMAL.replace("schema_version = 1", "schema_version = 2"),
            "schema_version",
        ),
        (MINIMAL.replace("rounds = 2", "rounds = 2\nround = 3"), "round"),
        (MINIMAL.replace("clients = 3", "clients = 2"), "clients"),
        (MINIMAL.replace("lr = 0.1", "lr = -0.1"), "federation.lr"),
        (
            MINIMAL.replace("targets_per_class = 10", "targets_per_class = 10\nfpr_cap = 1.0"),
            "fpr_cap",
        ),
    ];
    for (text, field) in cases {
        let e = ExperimentConfig::from_toml(&text)
            .and_then(|c| c.validate().map(|_| c))
            .unwrap_err();
        assert_eq!(e.exit_code(), 2, "{e}");
        assert!(e.to_string().contains(field), "{field}: {e}");
    }
}
