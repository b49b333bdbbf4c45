use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedaudit::harness::{self, ReplayConfig, RunOptions};
use fedaudit::Error;

/// Federated-learning membership-inference audit simulator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Output root; run directories are created beneath it.
    #[arg(long, global = true, env = "FEDAUDIT_OUT", default_value = "runs")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, attack and evaluate as described by a config file.
    Run {
        config: PathBuf,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
    },
    /// Re-run the attacks on a stored trace directory.
    Replay { trace_dir: PathBuf, attack_config: PathBuf },
    /// Print the summary of a finished run.
    Report { report_dir: PathBuf },
    /// Write plot-ready CSV series for a finished run.
    Plots { report_dir: PathBuf },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, seed_override } => {
            let opts = RunOptions {
                out_root: cli.out,
                seeds: seed_override,
            };
            let (report, dir) = harness::run_experiment(&config, &opts)?;
            print!("{}", harness::render_report(&report));
            println!("results in {}", dir.display());
        }
        Command::Replay {
            trace_dir,
            attack_config,
        } => {
            let (trace, _) = fedaudit::fedsim::UpdateTrace::load(&trace_dir)?;
            let attack = ReplayConfig::load(&attack_config, trace.num_clients)?;
            let outcome = harness::replay_attack(&trace_dir, &attack)?;
            let name = trace_dir
                .file_name()
                .map_or("trace".into(), |n| n.to_string_lossy().into_owned());
            let dir = cli.out.join("replay").join(name);
            harness::write_replay(&outcome, &dir)?;
            println!("{:<14} {:>8} {:>10}", "method", "AUC", "TPR");
            for m in &outcome.evaluation.metrics {
                println!("{:<14} {:>8.4} {:>10.4}", m.method.label(), m.auc, m.tpr_at_fpr);
            }
            let violations = outcome.evaluation.inclusion.iter().filter(|c| !c.holds).count();
            println!(
                "aggregate-inclusion violations: {violations}; measurements {}",
                if outcome.reused_measurements {
                    "reused"
                } else {
                    "recomputed"
                }
            );
            println!("results in {}", dir.display());
        }
        Command::Report { report_dir } => {
            print!(
                "{}",
                harness::render_report(&harness::ExperimentReport::load(&report_dir)?)
            );
        }
        Command::Plots { report_dir } => {
            for p in harness::emit_plots(&report_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
