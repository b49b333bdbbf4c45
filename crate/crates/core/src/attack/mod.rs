//! Membership inference against a recorded update trace.
//!
//! Every attack starts from per-round, per-client measurements of how a
//! client's update relates to one target sample. [`AttackContext`] computes
//! all of them once per target so that variants, thresholds and round
//! prefixes only redo the cheap scoring.

mod baselines;
mod lrt;

pub use baselines::{baseline_scores, baselines};
pub use lrt::{
    check_inclusion, decide, estimate_out, score_round, score_target, score_temporal, DecisionSets, LrtConfig,
    MemberSet, MembershipScore, RoundOutDistribution,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::fedsim::UpdateTrace;
use crate::model::{self, LabeledSample, ParamVector};
use crate::numstat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Cosine,
    Loss,
    GradNorm,
    GradDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    MemberHigh,
    MemberLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub orientation: Orientation,
}

impl MeasurementKind {
    pub fn default_orientation(self) -> Orientation {
        match self {
            MeasurementKind::Cosine | MeasurementKind::GradDiff => Orientation::MemberHigh,
            MeasurementKind::Loss | MeasurementKind::GradNorm => Orientation::MemberLow,
        }
    }
}

impl From<MeasurementKind> for Measurement {
    fn from(kind: MeasurementKind) -> Self {
        Self {
            kind,
            orientation: kind.default_orientation(),
        }
    }
}

/// `values[t][k]`: measurement of client `k`'s round-`t` update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMatrix {
    pub values: Vec<Vec<f64>>,
}

impl MeasurementMatrix {
    pub fn num_rounds(&self) -> usize {
        self.values.len()
    }

    pub fn num_clients(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }
}

/// Everything the attacks need to know about one target sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetProfile {
    pub cosine: MeasurementMatrix,
    pub loss: MeasurementMatrix,
    pub grad_norm: MeasurementMatrix,
    pub grad_diff: MeasurementMatrix,
    /// Loss of the global model before each round, then of the final model.
    pub global_loss: Vec<f64>,
}

impl TargetProfile {
    pub fn matrix(&self, kind: MeasurementKind) -> &MeasurementMatrix {
        match kind {
            MeasurementKind::Cosine => &self.cosine,
            MeasurementKind::Loss => &self.loss,
            MeasurementKind::GradNorm => &self.grad_norm,
            MeasurementKind::GradDiff => &self.grad_diff,
        }
    }

    pub fn num_rounds(&self) -> usize {
        self.cosine.num_rounds()
    }
}

/// A trace with the per-client quantities that do not depend on the target.
pub struct AttackContext<'a> {
    trace: &'a UpdateTrace,
    client_models: Vec<Vec<ParamVector>>,
    update_norms: Vec<Vec<f64>>,
}

impl<'a> AttackContext<'a> {
    pub fn new(trace: &'a UpdateTrace) -> Result<Self> {
        trace.validate()?;
        let client_models = trace
            .rounds
            .iter()
            .map(|r| {
                r.updates
                    .iter()
                    .map(|u| {
                        let mut w = r.global_before.clone();
                        numstat::axpy(-r.lr, u, &mut w)?;
                        Ok(w)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let update_norms = trace
            .rounds
            .iter()
            .map(|r| r.updates.iter().map(|u| u.norm()).collect())
            .collect();
        Ok(Self {
            trace,
            client_models,
            update_norms,
        })
    }

    pub fn trace(&self) -> &UpdateTrace {
        self.trace
    }

    pub fn num_clients(&self) -> usize {
        self.trace.num_clients
    }

    /// Measures one target against every round and client.
    ///
    /// A zero-norm update has no direction and gets cosine 0.
    pub fn profile(&self, target: &LabeledSample) -> Result<TargetProfile> {
        let spec = &self.trace.spec;
        check_dims(spec.input_dim, target.x.len())?;
        let t_max = self.trace.num_rounds();
        let mut cosine = Vec::with_capacity(t_max);
        let mut grad_diff = Vec::with_capacity(t_max);
        let mut loss = Vec::with_capacity(t_max);
        let mut global_loss = Vec::with_capacity(t_max + 1);
        for (t, r) in self.trace.rounds.iter().enumerate() {
            global_loss.push(model::loss(spec, &r.global_before, target)?);
            let g = model::grad_sample(spec, &r.global_before, target)?;
            let g_norm = g.norm();
            if g_norm == 0.0 {
                return Err(Error::ZeroGradient("target sample gradient vanishes"));
            }
            let mut cos_row = Vec::with_capacity(r.updates.len());
            let mut diff_row = Vec::with_capacity(r.updates.len());
            for (u, &u_norm) in r.updates.iter().zip(&self.update_norms[t]) {
                let d = numstat::dot(u, &g)?;
                diff_row.push(d);
                cos_row.push(if u_norm == 0.0 {
                    0.0
                } else {
                    (d / (u_norm * g_norm)).clamp(-1.0, 1.0)
                });
            }
            cosine.push(cos_row);
            grad_diff.push(diff_row);
            loss.push(
                self.client_models[t]
                    .iter()
                    .map(|w| model::loss(spec, w, target))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        global_loss.push(model::loss(spec, &self.trace.final_model, target)?);
        Ok(TargetProfile {
            cosine: MeasurementMatrix { values: cosine },
            loss: MeasurementMatrix { values: loss },
            grad_norm: MeasurementMatrix {
                values: self.update_norms.clone(),
            },
            grad_diff: MeasurementMatrix { values: grad_diff },
            global_loss,
        })
    }

    /// Profiles every target in parallel; output order follows `targets`.
    pub fn profiles(&self, targets: &[LabeledSample]) -> Result<Vec<TargetProfile>> {
        targets.par_iter().map(|x| self.profile(x)).collect()
    }
}

/// Single measurement matrix for one target.
pub fn measure(trace: &UpdateTrace, target: &LabeledSample, kind: MeasurementKind) -> Result<MeasurementMatrix> {
    Ok(AttackContext::new(trace)?.profile(target)?.matrix(kind).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Loss of the reconstructed local model, members score low.
    I,
    /// Cosine between update and target gradient, members score high.
    II,
}

impl Variant {
    pub fn measurement(self) -> Measurement {
        match self {
            Variant::I => MeasurementKind::Loss.into(),
            Variant::II => MeasurementKind::Cosine.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    FedmiaI,
    FedmiaIi,
    BlackboxLoss,
    GradCosine,
    GradNorm,
    LossSeries,
    AvgCosine,
    GradDiff,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 8] = [
        AttackMethod::FedmiaI,
        AttackMethod::FedmiaIi,
        AttackMethod::BlackboxLoss,
        AttackMethod::GradCosine,
        AttackMethod::GradNorm,
        AttackMethod::LossSeries,
        AttackMethod::AvgCosine,
        AttackMethod::GradDiff,
    ];

    pub const BASELINES: [AttackMethod; 6] = [
        AttackMethod::BlackboxLoss,
        AttackMethod::GradCosine,
        AttackMethod::GradNorm,
        AttackMethod::LossSeries,
        AttackMethod::AvgCosine,
        AttackMethod::GradDiff,
    ];

    /// Identifier used in configs and CSV files.
    pub fn id(self) -> &'static str {
        match self {
            AttackMethod::FedmiaI => "fedmia_i",
            AttackMethod::FedmiaIi => "fedmia_ii",
            AttackMethod::BlackboxLoss => "blackbox_loss",
            AttackMethod::GradCosine => "grad_cosine",
            AttackMethod::GradNorm => "grad_norm",
            AttackMethod::LossSeries => "loss_series",
            AttackMethod::AvgCosine => "avg_cosine",
            AttackMethod::GradDiff => "grad_diff",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AttackMethod::FedmiaI => "FedMIA-I",
            AttackMethod::FedmiaIi => "FedMIA-II",
            AttackMethod::BlackboxLoss => "Blackbox-Loss",
            AttackMethod::GradCosine => "Grad-Cosine",
            AttackMethod::GradNorm => "Grad-Norm",
            AttackMethod::LossSeries => "Loss-Series",
            AttackMethod::AvgCosine => "Avg-Cosine",
            AttackMethod::GradDiff => "Grad-Diff",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == id)
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            AttackMethod::FedmiaI => Some(Variant::I),
            AttackMethod::FedmiaIi => Some(Variant::II),
            _ => None,
        }
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

fn check_target_client(target_client: usize, clients: usize) -> Result<()> {
    if target_client >= clients {
        return Err(Error::param(format!(
            "target client {target_client} out of range for {clients} clients"
        )));
    }
    Ok(())
}

/// Per-round and aggregate FedMIA scores from precomputed profiles.
pub fn fedmia_scores(
    profiles: &[TargetProfile],
    target_client: usize,
    variant: Variant,
    cfg: &LrtConfig,
) -> Result<Vec<MembershipScore>> {
    let m = variant.measurement();
    profiles
        .par_iter()
        .map(|p| score_target(p.matrix(m.kind), target_client, m.orientation, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedMiaOutcome {
    pub scores: Vec<MembershipScore>,
    pub decisions: DecisionSets,
}

pub fn fedmia(
    trace: &UpdateTrace,
    targets: &[LabeledSample],
    target_client: usize,
    variant: Variant,
    delta: f64,
    cfg: &LrtConfig,
) -> Result<FedMiaOutcome> {
    if trace.num_clients < 3 {
        return Err(Error::InsufficientClients {
            needed: 3,
            available: trace.num_clients,
        });
    }
    check_target_client(target_client, trace.num_clients)?;
    let ctx = AttackContext::new(trace)?;
    let profiles = ctx.profiles(targets)?;
    let scores = fedmia_scores(&profiles, target_client, variant, cfg)?;
    let decisions = decide(&scores, delta);
    Ok(FedMiaOutcome { scores, decisions })
}

/// Scores of any method using only the first `rounds` rounds.
pub fn method_scores(
    method: AttackMethod,
    profiles: &[TargetProfile],
    target_client: usize,
    rounds: usize,
    cfg: &LrtConfig,
) -> Result<Vec<f64>> {
    match method.variant() {
        Some(v) => fedmia_scores(profiles, target_client, v, cfg)?
            .iter()
            .map(|s| s.prefix(rounds).map(|p| p.aggregate))
            .collect(),
        None => baseline_scores(method, profiles, target_client, rounds),
    }
}
