//! Attack evaluation: ROC curves, AUC, TPR at a capped FPR, and the
//! privacy-utility Pareto front with its 2-D hypervolume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores of a labelled set of targets; higher score means "member".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCohort {
    entries: Vec<(f64, bool)>,
    positives: usize,
}

impl ScoredCohort {
    pub fn new(entries: Vec<(f64, bool)>) -> Result<Self> {
        if entries.iter().any(|(s, _)| !s.is_finite()) {
            return Err(Error::param("cohort contains a non-finite score"));
        }
        let positives = entries.iter().filter(|(_, m)| *m).count();
        if positives == 0 {
            return Err(Error::Cohort("cohort has no members"));
        }
        if positives == entries.len() {
            return Err(Error::Cohort("cohort has no non-members"));
        }
        Ok(Self { entries, positives })
    }

    pub fn from_split(members: &[f64], nonmembers: &[f64]) -> Result<Self> {
        Self::new(
            members
                .iter()
                .map(|&s| (s, true))
                .chain(nonmembers.iter().map(|&s| (s, false)))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(f64, bool)] {
        &self.entries
    }

    pub fn num_members(&self) -> usize {
        self.positives
    }

    pub fn num_nonmembers(&self) -> usize {
        self.entries.len() - self.positives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub false_positives: usize,
    pub true_positives: usize,
    /// Lowest admitted score; infinite for the empty prediction.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc(cohort: &ScoredCohort) -> RocCurve {
    let mut sorted = cohort.entries.clone();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = cohort.num_members() as f64;
    let n_neg = cohort.num_nonmembers() as f64;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        false_positives: 0,
        true_positives: 0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
            false_positives: fp,
            true_positives: tp,
            threshold: score,
        });
    }
    RocCurve { points }
}

impl RocCurve {
    /// Trapezoidal area.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

pub fn auc(cohort: &ScoredCohort) -> f64 {
    roc(cohort).area()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub tpr: f64,
    /// FPR of the operating point that attains `tpr`.
    pub achieved_fpr: f64,
    pub fpr_cap: f64,
}

/// Best TPR among thresholds whose FPR does not exceed `fpr_cap`.
pub fn tpr_at_fpr_detail(cohort: &ScoredCohort, fpr_cap: f64) -> Result<TprAtFpr> {
    if !(0.0..1.0).contains(&fpr_cap) {
        return Err(Error::param(format!("fpr cap {fpr_cap} outside [0, 1)")));
    }
    let n_neg = cohort.num_nonmembers();
    let allowed = (fpr_cap * n_neg as f64 + 1e-9).floor() as usize;
    let curve = roc(cohort);
    let best = curve
        .points
        .iter()
        .take_while(|p| p.false_positives <= allowed)
        .fold(curve.points[0], |best, p| if p.tpr > best.tpr { *p } else { best });
    Ok(TprAtFpr {
        tpr: best.tpr,
        achieved_fpr: best.fpr,
        fpr_cap,
    })
}

pub fn tpr_at_fpr(cohort: &ScoredCohort, fpr_cap: f64) -> Result<f64> {
    tpr_at_fpr_detail(cohort, fpr_cap).map(|r| r.tpr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    /// Test error rate of the defended model.
    pub utility_loss: f64,
    /// Attack TPR at the configured FPR cap.
    pub privacy_leakage: f64,
}

impl ParetoPoint {
    pub fn new(utility_loss: f64, privacy_leakage: f64) -> Self {
        Self {
            utility_loss,
            privacy_leakage,
        }
    }

    fn dominates(&self, other: &Self) -> bool {
        self.utility_loss <= other.utility_loss && self.privacy_leakage <= other.privacy_leakage && self != other
    }
}

/// Points not dominated when both objectives are minimized, without
/// duplicates, sorted by utility loss.
pub fn pareto_front(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::EmptySample("pareto front of no points"));
    }
    if points
        .iter()
        .any(|p| !p.utility_loss.is_finite() || !p.privacy_leakage.is_finite())
    {
        return Err(Error::param("pareto point with a non-finite coordinate"));
    }
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .copied()
        .collect();
    front.sort_by(|a, b| {
        a.utility_loss
            .total_cmp(&b.utility_loss)
            .then(a.privacy_leakage.total_cmp(&b.privacy_leakage))
    });
    front.dedup();
    Ok(front)
}

/// Area dominated by `points` and bounded by `reference`.
pub fn hypervolume(points: &[ParetoPoint], reference: (f64, f64)) -> Result<f64> {
    let (rx, ry) = reference;
    if let Some(p) = points
        .iter()
        .find(|p| !(p.utility_loss <= rx && p.privacy_leakage <= ry))
    {
        return Err(Error::ReferencePoint {
            x: p.utility_loss,
            y: p.privacy_leakage,
            rx,
            ry,
        });
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let front = pareto_front(points)?;
    let mut area = 0.0;
    for (i, p) in front.iter().enumerate() {
        let next_x = front.get(i + 1).map_or(rx, |q| q.utility_loss);
        area += (next_x - p.utility_loss) * (ry - p.privacy_leakage);
    }
    Ok(area)
}
