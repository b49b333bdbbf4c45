//! Membership-inference audit of federated learning: a FedAvg simulator that
//! records every client update, the FedMIA likelihood-ratio attack and its
//! baselines, update- and data-level defenses, and the metrics and experiment
//! harness around them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numstat;

pub use error::{Error, Result};
