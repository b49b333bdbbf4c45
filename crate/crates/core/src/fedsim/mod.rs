//! FedAvg simulation over `K` clients and `T` rounds, recording everything the
//! server observes.
//!
//! An uploaded update is the parameter displacement of local training divided
//! by the round's effective learning rate, so the server step
//! `w <- w - lr_t * mean_k(update_k)` lands exactly on the average of the
//! clients' local models when no defense is active.

mod defense;
pub mod trace;

pub use defense::{defend_update, perturb, quantize, sparsify, DefenseConfig};
pub use trace::{RoundRecord, UpdateTrace};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Partition};
use crate::error::{Error, Result};
use crate::model::{self, LabeledSample, ModelSpec, ParamVector, Target};
use crate::numstat::{self, tag, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per communication round.
    pub lr_decay: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub defense: DefenseConfig,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::config("federation.clients", "must be at least 2"));
        }
        if self.rounds == 0 {
            return Err(Error::config("federation.rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("federation.local_epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("federation.lr", "must be finite and > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("federation.lr_decay", "must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("federation.batch_size", "must be at least 1"));
        }
        self.defense.validate()
    }

    /// Learning rate shared by clients and server in round `t` (0-based).
    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr * self.lr_decay.powi(round as i32)
    }
}

/// Local training on one client from the current global model.
///
/// Data-level defenses (sampling, augmentation, mixup) are applied here;
/// update-level ones are applied afterwards by [`defend_update`].
#[allow(clippy::too_many_arguments)]
pub fn client_update<R: Rng + ?Sized>(
    spec: &ModelSpec,
    client_data: &[LabeledSample],
    geometry: Option<(usize, usize)>,
    global: &ParamVector,
    cfg: &FedConfig,
    round: usize,
    rng: &mut R,
) -> Result<ParamVector> {
    if client_data.is_empty() {
        return Err(Error::config("partition", "a client has no training samples"));
    }
    let lr = cfg.lr_at(round);
    model::check_sgd_params(lr, cfg.local_epochs, cfg.batch_size)?;
    let defense = &cfg.defense;
    let all: Vec<usize> = (0..client_data.len()).collect();
    let mut w = global.clone();
    let mut grad = vec![0.0; w.len()];

    for _ in 0..cfg.local_epochs {
        let epoch_indices = match defense.sample_portion() {
            Some(portion) => data::subsample(rng, &all, portion)?,
            None => all.clone(),
        };
        for batch in model::shuffled_batches(rng, epoch_indices, cfg.batch_size) {
            let augmented: Vec<LabeledSample>;
            let mut members: Vec<&LabeledSample> = batch.iter().map(|&i| &client_data[i]).collect();
            if let Some(ops) = defense.augment_ops() {
                augmented = members
                    .iter()
                    .map(|s| data::augment(rng, s, geometry, ops))
                    .collect::<Result<_>>()?;
                members = augmented.iter().collect();
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / members.len() as f64;
            match defense.mixup_alpha() {
                Some(alpha) if members.len() >= 2 => {
                    for m in data::mixup(rng, &members, alpha)? {
                        m.accumulate_grad(spec, &w, weight, &mut grad)?;
                    }
                }
                _ => {
                    for s in &members {
                        model::accumulate_grad(spec, &w, &s.x, Target::Hard(s.y), weight, &mut grad)?;
                    }
                }
            }
            numstat::axpy(-lr, &grad, &mut w)?;
        }
    }

    let mut update = global.clone();
    numstat::axpy(-1.0, &w, &mut update)?;
    numstat::scale(&mut update, 1.0 / lr);
    Ok(update)
}

/// Server step `w - lr * mean(updates)`, summed in client-index order.
pub fn aggregate(updates: &[ParamVector], global: &ParamVector, lr: f64) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::EmptySample("aggregation of no updates"));
    }
    let mut mean = vec![0.0; global.len()];
    for u in updates {
        numstat::axpy(1.0, u, &mut mean)?;
    }
    numstat::scale(&mut mean, 1.0 / updates.len() as f64);
    let mut next = global.clone();
    numstat::axpy(-lr, &mean, &mut next)?;
    Ok(next)
}

/// Runs the full federation and returns the server's observation trace.
///
/// Client randomness is drawn from per-(client, round) streams and updates are
/// combined in client order, so parallel execution is bit-identical to
/// sequential execution.
pub fn run_federation(
    dataset: &Dataset,
    partition: &Partition,
    spec: &ModelSpec,
    cfg: &FedConfig,
) -> Result<UpdateTrace> {
    cfg.validate()?;
    spec.validate()?;
    partition.validate(dataset.len())?;
    if partition.num_clients() != cfg.clients {
        return Err(Error::config(
            "partition.clients",
            format!(
                "partition has {} clients, federation expects {}",
                partition.num_clients(),
                cfg.clients
            ),
        ));
    }
    if dataset.input_dim() != spec.input_dim || dataset.num_classes != spec.num_classes {
        return Err(Error::config("model", "model dimensions do not match the dataset"));
    }
    if partition.holdout_indices.is_empty() {
        return Err(Error::config(
            "partition.holdout",
            "test accuracy needs a non-empty holdout",
        ));
    }
    if let Some(k) = partition.client_indices.iter().position(Vec::is_empty) {
        return Err(Error::config(
            "partition",
            format!("client {k} has no training samples"),
        ));
    }

    let root = RngStream::root(cfg.seed);
    let client_data: Vec<Vec<LabeledSample>> = partition.client_indices.iter().map(|idx| dataset.select(idx)).collect();
    let holdout = dataset.select(&partition.holdout_indices);

    let mut global = model::init_params(spec, &mut root.derive(tag::INIT).rng())?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let lr = cfg.lr_at(t);
        let updates = (0..cfg.clients)
            .into_par_iter()
            .map(|k| {
                let mut rng = root.derive2(tag::CLIENT, k as u64).derive2(tag::ROUND, t as u64).rng();
                let raw = client_update(spec, &client_data[k], dataset.geometry, &global, cfg, t, &mut rng)?;
                if cfg.defense.is_update_level() {
                    defend_update(&raw, &cfg.defense, &mut rng)
                } else {
                    Ok(raw)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let next = aggregate(&updates, &global, lr)?;
        let test_accuracy = model::accuracy(spec, &next, &holdout)?;
        log::debug!("round {t}: lr {lr:.5} test accuracy {test_accuracy:.4}");
        rounds.push(RoundRecord {
            round: t,
            lr,
            global_before: std::mem::replace(&mut global, next),
            updates,
            test_accuracy,
        });
    }

    Ok(UpdateTrace {
        spec: *spec,
        defense: cfg.defense.clone(),
        seed: cfg.seed,
        num_clients: cfg.clients,
        rounds,
        final_model: global,
    })
}
