//! One-tailed likelihood-ratio scoring against an out-distribution estimated
//! from the non-target clients of each round.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{MeasurementMatrix, Orientation};
use crate::error::{Error, Result};
use crate::numstat;

/// Knobs of the out-distribution estimate and the tail score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrtConfig {
    /// Variance floor is `(scale * (1 + |mu_out|))^2`.
    #[serde(default = "default_sigma_floor_scale")]
    pub sigma_floor_scale: f64,
    /// Judge each non-target client against the statistics of the others
    /// instead of the full non-target sample.
    #[serde(default)]
    pub leave_one_out_filter: bool,
}

fn default_sigma_floor_scale() -> f64 {
    1e-8
}

impl Default for LrtConfig {
    fn default() -> Self {
        Self {
            sigma_floor_scale: default_sigma_floor_scale(),
            leave_one_out_filter: false,
        }
    }
}

impl LrtConfig {
    pub fn sigma_floor(&self, mean: f64) -> f64 {
        self.sigma_floor_scale * (1.0 + mean.abs())
    }
}

/// Null distribution of one round's measurement, `N(mean, variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutDistribution {
    pub round: usize,
    /// Non-target clients that survived the 3-sigma filter.
    pub kept: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
}

fn is_outlier(value: f64, mean: f64, std: f64, orientation: Orientation) -> bool {
    match orientation {
        Orientation::MemberHigh => value > mean + 3.0 * std,
        Orientation::MemberLow => value < mean - 3.0 * std,
    }
}

/// Estimates round `t`'s out-distribution from the non-target clients.
///
/// Mean and standard deviation over all `K - 1` non-target values decide which
/// clients look trained on the target (beyond three standard deviations on the
/// member side); the survivors give the population mean and variance.
///
/// With `n` values the largest possible standardized deviation is
/// `(n - 1) / sqrt(n)`, so for `n <= 10` the filter never removes anything.
pub fn estimate_out(
    m: &MeasurementMatrix,
    round: usize,
    target_client: usize,
    orientation: Orientation,
    cfg: &LrtConfig,
) -> Result<RoundOutDistribution> {
    let row = m
        .values
        .get(round)
        .ok_or_else(|| Error::param(format!("round {round} outside the measurement matrix")))?;
    let k = row.len();
    if k < 3 {
        return Err(Error::InsufficientClients {
            needed: 3,
            available: k,
        });
    }
    if target_client >= k {
        return Err(Error::param(format!("target client {target_client} out of range")));
    }
    let others: Vec<usize> = (0..k).filter(|&j| j != target_client).collect();
    let values: Vec<f64> = others.iter().map(|&j| row[j]).collect();

    let mut kept: Vec<usize> = if cfg.leave_one_out_filter {
        let mut kept = Vec::with_capacity(others.len());
        for (i, &j) in others.iter().enumerate() {
            let rest: Vec<f64> = values
                .iter()
                .enumerate()
                .filter(|&(o, _)| o != i)
                .map(|(_, &v)| v)
                .collect();
            let s = numstat::summary(&rest)?;
            if !is_outlier(values[i], s.mean, s.std_dev(), orientation) {
                kept.push(j);
            }
        }
        kept
    } else {
        let s = numstat::summary(&values)?;
        others
            .iter()
            .zip(&values)
            .filter(|&(_, &v)| !is_outlier(v, s.mean, s.std_dev(), orientation))
            .map(|(&j, _)| j)
            .collect()
    };
    if kept.is_empty() {
        // Only reachable with the leave-one-out rule on tiny samples.
        kept = others;
    }
    let kept_values: Vec<f64> = kept.iter().map(|&j| row[j]).collect();
    let s = numstat::summary(&kept_values)?;
    Ok(RoundOutDistribution {
        round,
        kept,
        mean: s.mean,
        variance: s.variance,
    })
}

/// Tail probability of the target's measurement under the round's null,
/// taken on the non-member side: `Phi(z)` when members score high and
/// `1 - Phi(z)` when they score low.
pub fn score_round(measurement: f64, out: &RoundOutDistribution, orientation: Orientation, cfg: &LrtConfig) -> f64 {
    let floor = cfg.sigma_floor(out.mean);
    let variance = out.variance.max(floor * floor);
    let z = (measurement - out.mean) / variance.sqrt();
    match orientation {
        Orientation::MemberHigh => numstat::std_normal_cdf(z),
        Orientation::MemberLow => numstat::std_normal_cdf(-z),
    }
}

/// Mean of the per-round scores, kept inside `[min, max]` of its inputs so
/// floating summation cannot push it past every round.
pub fn score_temporal(per_round: &[f64]) -> Result<f64> {
    if per_round.is_empty() {
        return Err(Error::EmptySample("temporal aggregation of no rounds"));
    }
    let mean = per_round.iter().sum::<f64>() / per_round.len() as f64;
    let lo = per_round.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = per_round.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(mean.clamp(lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipScore {
    pub per_round: Vec<f64>,
    pub aggregate: f64,
}

impl MembershipScore {
    pub fn from_rounds(per_round: Vec<f64>) -> Result<Self> {
        let aggregate = score_temporal(&per_round)?;
        Ok(Self { per_round, aggregate })
    }

    /// Score using only the first `rounds` rounds.
    pub fn prefix(&self, rounds: usize) -> Result<Self> {
        if rounds == 0 || rounds > self.per_round.len() {
            return Err(Error::param(format!("prefix of {rounds} rounds out of range")));
        }
        Self::from_rounds(self.per_round[..rounds].to_vec())
    }
}

/// Scores one target across all rounds.
pub fn score_target(
    m: &MeasurementMatrix,
    target_client: usize,
    orientation: Orientation,
    cfg: &LrtConfig,
) -> Result<MembershipScore> {
    let per_round = (0..m.values.len())
        .map(|t| {
            let out = estimate_out(m, t, target_client, orientation, cfg)?;
            Ok(score_round(m.values[t][target_client], &out, orientation, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    MembershipScore::from_rounds(per_round)
}

/// Targets whose score strictly exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSet {
    pub threshold: f64,
    pub members: BTreeSet<usize>,
}

impl MemberSet {
    pub fn from_scores(scores: impl IntoIterator<Item = f64>, threshold: f64) -> Self {
        Self {
            threshold,
            members: scores
                .into_iter()
                .enumerate()
                .filter(|&(_, s)| s > threshold)
                .map(|(i, _)| i)
                .collect(),
        }
    }
}

/// Per-round member sets and the set chosen by the aggregated score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSets {
    pub per_round: Vec<MemberSet>,
    pub aggregate: MemberSet,
}

pub fn decide(scores: &[MembershipScore], delta: f64) -> DecisionSets {
    let rounds = scores.first().map_or(0, |s| s.per_round.len());
    DecisionSets {
        per_round: (0..rounds)
            .map(|t| MemberSet::from_scores(scores.iter().map(|s| s.per_round[t]), delta))
            .collect(),
        aggregate: MemberSet::from_scores(scores.iter().map(|s| s.aggregate), delta),
    }
}

/// Whether every aggregate member is a member in at least one round.
pub fn check_inclusion(sets: &DecisionSets) -> Result<bool> {
    let delta = sets.aggregate.threshold;
    if let Some(bad) = sets.per_round.iter().find(|s| s.threshold.to_bits() != delta.to_bits()) {
        return Err(Error::Contract(format!(
            "per-round threshold {} differs from aggregate threshold {delta}",
            bad.threshold
        )));
    }
    Ok(sets
        .aggregate
        .members
        .iter()
        .all(|i| sets.per_round.iter().any(|s| s.members.contains(i))))
}
