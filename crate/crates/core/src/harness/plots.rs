//! Plot-ready CSV series derived from a finished run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::artifacts::{fmt_opt, read_scores_csv, write, ScoreRow};
use super::{job_stem, rounds_csv, ExperimentReport};
use crate::attack::AttackMethod;
use crate::error::Result;

const BINS: usize = 20;

/// `seed,point,method,bin,bin_lo,bin_hi,class,count`, one row per
/// (bin, class); equal-width bins over each method's score range.
fn histogram_rows(s: &mut String, seed: u64, point: usize, method: &str, rows: &[&ScoreRow]) {
    let lo = rows.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / BINS as f64;
    let mut counts = [[0usize; 2]; BINS];
    for r in rows {
        let b = if width > 0.0 {
            (((r.score - lo) / width) as usize).min(BINS - 1)
        } else {
            0
        };
        counts[b][usize::from(r.is_member)] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        let (b_lo, b_hi) = (
            lo + width * b as f64,
            if b + 1 == BINS { hi } else { lo + width * (b + 1) as f64 },
        );
        for (class, name) in [(1, "member"), (0, "nonmember")] {
            let _ = writeln!(s, "{seed},{point},{method},{b},{b_lo},{b_hi},{name},{}", c[class]);
        }
    }
}

/// Writes `plots/histogram.csv`, `plots/rounds.csv` and `plots/pareto.csv`
/// under `report_dir` and returns their paths.
pub fn emit_plots(report_dir: &Path) -> Result<Vec<PathBuf>> {
    let report = ExperimentReport::load(report_dir)?;
    let plot_dir = report_dir.join("plots");

    let mut hist = String::from("seed,point,method,bin,bin_lo,bin_hi,class,count\n");
    for job in &report.jobs {
        let path = report_dir
            .join("scores")
            .join(format!("{}.csv", job_stem(job.seed, job.point)));
        let rows = read_scores_csv(&path)?;
        let mut methods: Vec<&str> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        for m in methods {
            let of_method: Vec<&ScoreRow> = rows.iter().filter(|r| r.method == m).collect();
            histogram_rows(&mut hist, job.seed, job.point, m, &of_method);
        }
    }

    let methods: Vec<AttackMethod> = report.pareto.iter().map(|p| p.method).collect();
    let points = report.jobs.iter().map(|j| j.point + 1).max().unwrap_or(0);
    let rounds = rounds_csv(&methods, &report.jobs, points);

    let mut pareto = String::from("method,defense,param,utility_loss,privacy_leakage,on_front\n");
    for p in &report.pareto {
        let rows: Vec<_> = report.summary.iter().filter(|r| r.method == p.method).collect();
        let mut order: Vec<usize> = (0..p.points.len()).collect();
        order.sort_by(|&a, &b| {
            p.points[a]
                .utility_loss
                .total_cmp(&p.points[b].utility_loss)
                .then(p.points[a].privacy_leakage.total_cmp(&p.points[b].privacy_leakage))
        });
        for i in order {
            let pt = p.points[i];
            let _ = writeln!(
                pareto,
                "{},{},{},{},{},{}",
                p.method,
                rows[i].defense,
                fmt_opt(rows[i].param),
                pt.utility_loss,
                pt.privacy_leakage,
                u8::from(p.front.contains(&pt))
            );
        }
    }

    let out = vec![
        (plot_dir.join("histogram.csv"), hist),
        (plot_dir.join("rounds.csv"), rounds),
        (plot_dir.join("pareto.csv"), pareto),
    ];
    for (path, text) in &out {
        write(path, text)?;
    }
    Ok(out.into_iter().map(|(p, _)| p).collect())
}
