//! Experiment configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackMethod, LrtConfig};
use crate::data::NonmemberSource;
use crate::error::{Error, Result};
use crate::fedsim::{DefenseConfig, FedConfig};
use crate::model::{ModelKind, ModelSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Name of the run directory under the output root.
    #[serde(default = "default_name")]
    pub name: String,
    pub seeds: Vec<u64>,
    /// Persist each job's update trace for later replay.
    #[serde(default = "yes")]
    pub save_traces: bool,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_name() -> String {
    "experiment".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs, `per_class` samples for each class.
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        per_class: usize,
        class_sep: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        geometry: Option<(usize, usize)>,
    },
    /// `label,f1,...,fd` rows; relative paths resolve against the config file.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        geometry: Option<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub scheme: PartitionScheme,
    /// Dirichlet concentration; required for the dirichlet scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub clients: usize,
    pub per_client: usize,
    pub holdout: usize,
    #[serde(default)]
    pub nonmember_source: NonmemberSource,
    #[serde(default = "tenth")]
    pub holdout_fraction: f64,
    #[serde(default = "tenth")]
    pub others_fraction: f64,
}

fn tenth() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_hidden() -> usize {
    32
}

fn default_init_std() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    #[serde(default = "one")]
    pub lr_decay: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub defense: DefenseConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "all_methods")]
    pub methods: Vec<AttackMethod>,
    /// Decision thresholds for the FedMIA member sets.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_fpr_cap")]
    pub fpr_cap: f64,
    #[serde(default)]
    pub target_client: usize,
    /// Members and non-members scored, each.
    #[serde(default = "default_targets")]
    pub targets_per_class: usize,
    #[serde(default = "default_sigma_floor_scale")]
    pub sigma_floor_scale: f64,
    #[serde(default)]
    pub leave_one_out_filter: bool,
}

fn all_methods() -> Vec<AttackMethod> {
    AttackMethod::ALL.to_vec()
}

fn default_deltas() -> Vec<f64> {
    vec![0.5, 0.9, 0.99]
}

fn default_fpr_cap() -> f64 {
    0.01
}

fn default_targets() -> usize {
    200
}

fn default_sigma_floor_scale() -> f64 {
    LrtConfig::default().sigma_floor_scale
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            methods: all_methods(),
            deltas: default_deltas(),
            fpr_cap: default_fpr_cap(),
            target_client: 0,
            targets_per_class: default_targets(),
            sigma_floor_scale: default_sigma_floor_scale(),
            leave_one_out_filter: false,
        }
    }
}

impl AttackConfig {
    pub fn lrt(&self) -> LrtConfig {
        LrtConfig {
            sigma_floor_scale: self.sigma_floor_scale,
            leave_one_out_filter: self.leave_one_out_filter,
        }
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("attack.methods", "must list at least one method"));
        }
        let unique: BTreeSet<_> = self.methods.iter().collect();
        if unique.len() != self.methods.len() {
            return Err(Error::config("attack.methods", "lists a method twice"));
        }
        if self.deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::config("attack.deltas", "must be finite"));
        }
        if !(0.0..1.0).contains(&self.fpr_cap) {
            return Err(Error::config("attack.fpr_cap", "must be in [0, 1)"));
        }
        if self.target_client >= clients {
            return Err(Error::config(
                "attack.target_client",
                format!("must be below the client count {clients}"),
            ));
        }
        if self.targets_per_class == 0 {
            return Err(Error::config("attack.targets_per_class", "must be at least 1"));
        }
        if !(self.sigma_floor_scale > 0.0) || !self.sigma_floor_scale.is_finite() {
            return Err(Error::config("attack.sigma_floor_scale", "must be finite and > 0"));
        }
        if clients < 3 && self.methods.iter().any(|m| m.variant().is_some()) {
            return Err(Error::config("partition.clients", "FedMIA needs at least 3 clients"));
        }
        Ok(())
    }
}

/// One defense parameter swept over a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: String,
    pub values: Vec<f64>,
    /// Base defense whose `param` is replaced by each value.
    pub defense: DefenseConfig,
}

/// Stand-alone attack settings for replaying a stored trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub attack: AttackConfig,
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::config(
            "schema_version",
            format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
        ));
    }
    Ok(())
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))
}

fn toml_error(path: &Path, e: toml::de::Error) -> Error {
    Error::config(path.display().to_string(), e.message().to_string() + &span_suffix(&e))
}

fn span_suffix(e: &toml::de::Error) -> String {
    e.span().map_or_else(String::new, |s| format!(" (at byte {})", s.start))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| toml_error(Path::new("<config>"), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving a relative CSV path
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_config_text(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| toml_error(path, e))?;
        if let DatasetConfig::Csv { path: csv, .. } = &mut cfg.dataset {
            if csv.is_relative() {
                *csv = path.parent().unwrap_or(Path::new(".")).join(&*csv);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::config("name", "must be a plain directory name"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::config("seeds", "lists a seed twice"));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                input_dim,
                per_class,
                class_sep,
                geometry,
            } => {
                if *num_classes < 2 {
                    return Err(Error::config("dataset.num_classes", "must be at least 2"));
                }
                if *input_dim == 0 || *per_class == 0 {
                    return Err(Error::config("dataset", "input_dim and per_class must be positive"));
                }
                if !(*class_sep >= 0.0) || !class_sep.is_finite() {
                    return Err(Error::config("dataset.class_sep", "must be finite and >= 0"));
                }
                if let Some((r, c)) = geometry {
                    if r * c != *input_dim {
                        return Err(Error::config("dataset.geometry", "rows * cols must equal input_dim"));
                    }
                }
            }
            DatasetConfig::Csv { num_classes, .. } => {
                if num_classes.is_some_and(|c| c < 2) {
                    return Err(Error::config("dataset.num_classes", "must be at least 2"));
                }
            }
        }
        let p = &self.partition;
        if p.clients < 2 {
            return Err(Error::config("partition.clients", "must be at least 2"));
        }
        if p.per_client == 0 {
            return Err(Error::config("partition.per_client", "must be at least 1"));
        }
        if p.holdout == 0 {
            return Err(Error::config("partition.holdout", "must be at least 1"));
        }
        match (p.scheme, p.beta) {
            (PartitionScheme::Dirichlet, None) => {
                return Err(Error::config("partition.beta", "required for the dirichlet scheme"))
            }
            (PartitionScheme::Dirichlet, Some(b)) if !(b > 0.0) => {
                return Err(Error::config("partition.beta", "must be > 0"))
            }
            (PartitionScheme::Iid, Some(_)) => {
                return Err(Error::config("partition.beta", "only valid for the dirichlet scheme"))
            }
            _ => {}
        }
        for (name, f) in [
            ("holdout_fraction", p.holdout_fraction),
            ("others_fraction", p.others_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("partition.{name}"), "must be in [0, 1]"));
            }
        }
        if self.model.hidden_dim == 0 && self.model.kind == ModelKind::Mlp {
            return Err(Error::config("model.hidden_dim", "must be at least 1"));
        }
        if !(self.model.init_std >= 0.0) || !self.model.init_std.is_finite() {
            return Err(Error::config("model.init_std", "must be finite and >= 0"));
        }
        for d in self.defenses()? {
            self.fed_config(0, d).validate()?;
        }
        self.attack.validate(p.clients)
    }

    /// Defense of every sweep point, in sweep order.
    pub fn defenses(&self) -> Result<Vec<DefenseConfig>> {
        match &self.sweep {
            None => Ok(vec![self.federation.defense.clone()]),
            Some(s) => {
                if s.values.is_empty() {
                    return Err(Error::config("sweep.values", "must list at least one value"));
                }
                s.values
                    .iter()
                    .map(|&v| {
                        let d = s.defense.with_param(&s.param, v)?;
                        d.validate()?;
                        Ok(d)
                    })
                    .collect()
            }
        }
    }

    /// Swept parameter value of each point, or the defense's own strength.
    pub fn point_param(&self, defense: &DefenseConfig) -> Option<f64> {
        match &self.sweep {
            Some(s) => defense_param(defense, &s.param),
            None => defense.primary_param().map(|(_, v)| v),
        }
    }

    pub fn fed_config(&self, seed: u64, defense: DefenseConfig) -> FedConfig {
        let f = &self.federation;
        FedConfig {
            clients: self.partition.clients,
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            lr: f.lr,
            lr_decay: f.lr_decay,
            batch_size: f.batch_size,
            defense,
            seed,
        }
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model.kind {
            ModelKind::LinearSoftmax => ModelSpec::linear(input_dim, num_classes, self.model.init_std),
            ModelKind::Mlp => ModelSpec::mlp(input_dim, self.model.hidden_dim, num_classes, self.model.init_std),
        }
    }
}

fn defense_param(defense: &DefenseConfig, name: &str) -> Option<f64> {
    match (defense, name) {
        (DefenseConfig::Perturb { clip_norm, .. }, "clip_norm") => Some(*clip_norm),
        (DefenseConfig::Quantize { bits }, "bits") => Some(f64::from(*bits)),
        _ => defense.primary_param().filter(|(n, _)| *n == name).map(|(_, v)| v),
    }
}

impl ReplayConfig {
    /// Reads the attack settings from a replay file or from a full
    /// experiment config.
    pub fn load(path: &Path, clients: usize) -> Result<AttackConfig> {
        let text = read_config_text(path)?;
        let attack = match toml::from_str::<ReplayConfig>(&text) {
            Ok(r) => {
                check_schema(r.schema_version)?;
                r.attack
            }
            Err(replay_err) => match toml::from_str::<ExperimentConfig>(&text) {
                Ok(full) => {
                    check_schema(full.schema_version)?;
                    full.attack
                }
                Err(_) => return Err(toml_error(path, replay_err)),
            },
        };
        attack.validate(clients)?;
        Ok(attack)
    }
}
