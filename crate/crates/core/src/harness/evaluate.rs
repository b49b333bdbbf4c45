//! Scoring of every configured attack on one trace and the metrics derived
//! from the scores.

use serde::{Deserialize, Serialize};

use super::config::AttackConfig;
use crate::attack::{self, check_inclusion, decide, fedmia_scores, AttackMethod, MembershipScore, TargetProfile};
use crate::error::Result;
use crate::metrics::{self, ScoredCohort};
use crate::model::LabeledSample;

/// Targets in scoring order: members first, then non-members.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub samples: Vec<LabeledSample>,
    pub is_member: Vec<bool>,
    /// Index of each target in the experiment's dataset.
    pub dataset_index: Vec<usize>,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cohort(&self, scores: &[f64]) -> Result<ScoredCohort> {
        ScoredCohort::new(scores.iter().copied().zip(self.is_member.iter().copied()).collect())
    }
}

type PrefixScores<'a> = Box<dyn Fn(usize) -> Result<Vec<f64>> + 'a>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: AttackMethod,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: AttackMethod,
    pub auc: f64,
    pub tpr_at_fpr: f64,
    pub achieved_fpr: f64,
    pub fpr_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionCheck {
    pub method: AttackMethod,
    pub delta: f64,
    pub holds: bool,
    /// Size of the aggregate member set.
    pub aggregate_members: usize,
    /// Size of the union of the per-round member sets.
    pub union_members: usize,
}

/// AUC and TPR of one method using only the first `t` rounds, `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCurve {
    pub method: AttackMethod,
    pub auc: Vec<f64>,
    pub tpr_at_fpr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEvaluation {
    pub scores: Vec<MethodScores>,
    /// Per-round scores of the FedMIA variants.
    pub fedmia_rounds: Vec<(AttackMethod, Vec<MembershipScore>)>,
    pub metrics: Vec<MethodMetrics>,
    pub inclusion: Vec<InclusionCheck>,
    pub round_curves: Vec<RoundCurve>,
}

impl AttackEvaluation {
    pub fn metrics_for(&self, method: AttackMethod) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|m| m.method == method)
    }

    pub fn scores_for(&self, method: AttackMethod) -> Option<&[f64]> {
        self.scores
            .iter()
            .find(|s| s.method == method)
            .map(|s| s.scores.as_slice())
    }

    pub fn round_curve(&self, method: AttackMethod) -> Option<&RoundCurve> {
        self.round_curves.iter().find(|c| c.method == method)
    }
}

fn method_metrics(method: AttackMethod, targets: &TargetSet, scores: &[f64], fpr_cap: f64) -> Result<MethodMetrics> {
    let cohort = targets.cohort(scores)?;
    let t = metrics::tpr_at_fpr_detail(&cohort, fpr_cap)?;
    Ok(MethodMetrics {
        method,
        auc: metrics::auc(&cohort),
        tpr_at_fpr: t.tpr,
        achieved_fpr: t.achieved_fpr,
        fpr_cap,
    })
}

/// Runs every configured method on precomputed target profiles.
pub fn evaluate(profiles: &[TargetProfile], targets: &TargetSet, cfg: &AttackConfig) -> Result<AttackEvaluation> {
    let rounds = profiles.first().map_or(0, TargetProfile::num_rounds);
    let lrt = cfg.lrt();
    let mut out = AttackEvaluation {
        scores: Vec::new(),
        fedmia_rounds: Vec::new(),
        metrics: Vec::new(),
        inclusion: Vec::new(),
        round_curves: Vec::new(),
    };
    for &method in &cfg.methods {
        let (scores, prefix_scores): (Vec<f64>, PrefixScores) = match method.variant() {
            Some(v) => {
                let full = fedmia_scores(profiles, cfg.target_client, v, &lrt)?;
                for &delta in &cfg.deltas {
                    let sets = decide(&full, delta);
                    let union: std::collections::BTreeSet<usize> =
                        sets.per_round.iter().flat_map(|s| s.members.iter().copied()).collect();
                    out.inclusion.push(InclusionCheck {
                        method,
                        delta,
                        holds: check_inclusion(&sets)?,
                        aggregate_members: sets.aggregate.members.len(),
                        union_members: union.len(),
                    });
                }
                let aggregate = full.iter().map(|s| s.aggregate).collect();
                let per_round = full.clone();
                out.fedmia_rounds.push((method, full));
                let prefix = move |t: usize| -> Result<Vec<f64>> {
                    per_round.iter().map(|s| s.prefix(t).map(|p| p.aggregate)).collect()
                };
                (aggregate, Box::new(prefix))
            }
            None => {
                let scores = attack::baseline_scores(method, profiles, cfg.target_client, rounds)?;
                let prefix = move |t: usize| attack::baseline_scores(method, profiles, cfg.target_client, t);
                (scores, Box::new(prefix))
            }
        };
        out.metrics.push(method_metrics(method, targets, &scores, cfg.fpr_cap)?);
        let mut curve = RoundCurve {
            method,
            auc: Vec::with_capacity(rounds),
            tpr_at_fpr: Vec::with_capacity(rounds),
        };
        for t in 1..=rounds {
            let m = if t == rounds {
                out.metrics.last().cloned().expect("pushed above")
            } else {
                method_metrics(method, targets, &prefix_scores(t)?, cfg.fpr_cap)?
            };
            curve.auc.push(m.auc);
            curve.tpr_at_fpr.push(m.tpr_at_fpr);
        }
        out.round_curves.push(curve);
        out.scores.push(MethodScores { method, scores });
    }
    Ok(out)
}
