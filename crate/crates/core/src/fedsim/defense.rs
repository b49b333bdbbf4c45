use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::AugmentOps;
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::numstat;

/// Client-side defense applied before upload.
///
/// `perturb`, `quantize` and `sparsify` act on the update vector; the others
/// change local training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseConfig {
    #[default]
    None,
    Perturb {
        clip_norm: f64,
        noise_std: f64,
    },
    Quantize {
        bits: u32,
    },
    Sparsify {
        rate: f64,
    },
    Mixup {
        alpha: f64,
    },
    Augment {
        ops: AugmentOps,
    },
    Sample {
        portion: f64,
    },
    AugmentAndSample {
        ops: AugmentOps,
        portion: f64,
    },
}

fn range_err(field: &str, msg: &str) -> Error {
    Error::config(format!("defense.{field}"), msg)
}

fn check_augment(ops: &AugmentOps) -> Result<()> {
    if !(ops.noise_std >= 0.0) || !ops.noise_std.is_finite() {
        return Err(range_err("ops.noise_std", "must be finite and >= 0"));
    }
    Ok(())
}

fn check_portion(portion: f64) -> Result<()> {
    if !(portion > 0.0 && portion <= 1.0) {
        return Err(range_err("portion", "must be in (0, 1]"));
    }
    Ok(())
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DefenseConfig::None => Ok(()),
            DefenseConfig::Perturb { clip_norm, noise_std } => {
                if !(*clip_norm > 0.0) {
                    return Err(range_err("clip_norm", "must be > 0"));
                }
                if !(*noise_std >= 0.0) || !noise_std.is_finite() {
                    return Err(range_err("noise_std", "must be finite and >= 0"));
                }
                Ok(())
            }
            DefenseConfig::Quantize { bits } => {
                if !(1..=10).contains(bits) {
                    return Err(range_err("bits", "must be in [1, 10]"));
                }
                Ok(())
            }
            DefenseConfig::Sparsify { rate } => {
                if !(0.0..=0.99).contains(rate) {
                    return Err(range_err("rate", "must be in [0, 0.99]"));
                }
                Ok(())
            }
            DefenseConfig::Mixup { alpha } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(range_err("alpha", "must be finite and > 0"));
                }
                Ok(())
            }
            DefenseConfig::Augment { ops } => check_augment(ops),
            DefenseConfig::Sample { portion } => check_portion(*portion),
            DefenseConfig::AugmentAndSample { ops, portion } => {
                check_augment(ops)?;
                check_portion(*portion)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::None => "none",
            DefenseConfig::Perturb { .. } => "perturb",
            DefenseConfig::Quantize { .. } => "quantize",
            DefenseConfig::Sparsify { .. } => "sparsify",
            DefenseConfig::Mixup { .. } => "mixup",
            DefenseConfig::Augment { .. } => "augment",
            DefenseConfig::Sample { .. } => "sample",
            DefenseConfig::AugmentAndSample { .. } => "augment_and_sample",
        }
    }

    /// The defense's strength knob, as swept in experiments.
    pub fn primary_param(&self) -> Option<(&'static str, f64)> {
        match self {
            DefenseConfig::None => None,
            DefenseConfig::Perturb { noise_std, .. } => Some(("noise_std", *noise_std)),
            DefenseConfig::Quantize { bits } => Some(("bits", f64::from(*bits))),
            DefenseConfig::Sparsify { rate } => Some(("rate", *rate)),
            DefenseConfig::Mixup { alpha } => Some(("alpha", *alpha)),
            DefenseConfig::Augment { ops } => Some(("noise_std", ops.noise_std)),
            DefenseConfig::Sample { portion } | DefenseConfig::AugmentAndSample { portion, .. } => {
                Some(("portion", *portion))
            }
        }
    }

    /// Copy with the named parameter replaced.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let slot: &mut f64 = match (&mut out, name) {
            (DefenseConfig::Perturb { noise_std, .. }, "noise_std") => noise_std,
            (DefenseConfig::Perturb { clip_norm, .. }, "clip_norm") => clip_norm,
            (DefenseConfig::Sparsify { rate }, "rate") => rate,
            (DefenseConfig::Mixup { alpha }, "alpha") => alpha,
            (DefenseConfig::Augment { ops }, "noise_std") => &mut ops.noise_std,
            (DefenseConfig::AugmentAndSample { ops, .. }, "noise_std") => &mut ops.noise_std,
            (DefenseConfig::Sample { portion }, "portion") => portion,
            (DefenseConfig::AugmentAndSample { portion, .. }, "portion") => portion,
            (DefenseConfig::Quantize { bits }, "bits") => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(range_err("bits", "must be an integer"));
                }
                *bits = value as u32;
                out.validate()?;
                return Ok(out);
            }
            _ => {
                return Err(Error::config(
                    "sweep.param",
                    format!("`{name}` is not a parameter of defense `{}`", self.name()),
                ))
            }
        };
        *slot = value;
        out.validate()?;
        Ok(out)
    }

    pub fn is_update_level(&self) -> bool {
        matches!(
            self,
            DefenseConfig::None
                | DefenseConfig::Perturb { .. }
                | DefenseConfig::Quantize { .. }
                | DefenseConfig::Sparsify { .. }
        )
    }

    pub fn mixup_alpha(&self) -> Option<f64> {
        match self {
            DefenseConfig::Mixup { alpha } => Some(*alpha),
            _ => None,
        }
    }

    pub fn augment_ops(&self) -> Option<&AugmentOps> {
        match self {
            DefenseConfig::Augment { ops } | DefenseConfig::AugmentAndSample { ops, .. } => Some(ops),
            _ => None,
        }
    }

    pub fn sample_portion(&self) -> Option<f64> {
        match self {
            DefenseConfig::Sample { portion } | DefenseConfig::AugmentAndSample { portion, .. } => Some(*portion),
            _ => None,
        }
    }
}

/// Scales `v` onto the ball of radius `clip_norm`, then adds `N(0, noise_std^2 I)`.
pub fn perturb<R: Rng + ?Sized>(v: &mut [f64], clip_norm: f64, noise_std: f64, rng: &mut R) -> Result<()> {
    let n = numstat::norm(v);
    if n > clip_norm {
        numstat::scale(v, clip_norm / n);
    }
    if noise_std > 0.0 {
        let noise = numstat::sample_gaussian(rng, 0.0, noise_std, v.len())?;
        numstat::axpy(1.0, &noise, v)?;
    }
    Ok(())
}

/// Deterministic symmetric quantization onto `2^bits` evenly spaced levels in
/// `[-max|v|, max|v|]`. One bit keeps only signs, scaled by the mean magnitude.
pub fn quantize(v: &mut [f64], bits: u32) {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 {
        return;
    }
    if bits == 1 {
        let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let mean = numstat::summary(&mags).map_or(0.0, |s| s.mean);
        for x in v.iter_mut() {
            *x = if *x > 0.0 {
                mean
            } else if *x < 0.0 {
                -mean
            } else {
                0.0
            };
        }
        return;
    }
    let top = (1u64 << bits) - 1;
    let step = 2.0 * m / top as f64;
    for x in v.iter_mut() {
        let level = ((*x + m) / step).round().clamp(0.0, top as f64) as u64;
        // Endpoints pinned so max|q| == max|v| and requantizing is a fixed point.
        *x = match level {
            0 => -m,
            l if l == top => m,
            l => -m + l as f64 * step,
        };
    }
}

/// Zeroes the `floor(rate * d)` smallest-magnitude entries; ties are taken in
/// index order.
pub fn sparsify(v: &mut [f64], rate: f64) {
    let k = ((rate * v.len() as f64) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(a.cmp(&b)));
    for &i in order.iter().take(k) {
        v[i] = 0.0;
    }
}

/// Applies an update-level defense to one client's upload.
pub fn defend_update<R: Rng + ?Sized>(
    update: &ParamVector,
    defense: &DefenseConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    defense.validate()?;
    let mut v = update.clone();
    match *defense {
        DefenseConfig::None => {}
        DefenseConfig::Perturb { clip_norm, noise_std } => perturb(&mut v, clip_norm, noise_std, rng)?,
        DefenseConfig::Quantize { bits } => quantize(&mut v, bits),
        DefenseConfig::Sparsify { rate } => sparsify(&mut v, rate),
        _ => {
            return Err(Error::config(
                "defense.kind",
                format!("`{}` acts on local training, not on updates", defense.name()),
            ))
        }
    }
    Ok(v)
}
