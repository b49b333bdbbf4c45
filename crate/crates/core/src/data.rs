//! Datasets, client partitioning, membership evaluation splits, and the
//! data-level defenses (mixup, augmentation, sampling).

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, LabeledSample, ModelSpec, Target};
use crate::numstat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    /// `(rows, cols)` for grid-structured features.
    pub geometry: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize, geometry: Option<(usize, usize)>) -> Result<Self> {
        let ds = Self {
            samples,
            num_classes,
            geometry,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.input_dim();
        for (i, s) in self.samples.iter().enumerate() {
            if s.y >= self.num_classes {
                return Err(Error::param(format!("sample {i}: label {} out of range", s.y)));
            }
            if s.x.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(format!("sample {i}: non-finite feature")));
            }
        }
        if let Some((r, c)) = self.geometry {
            if r * c != dim {
                return Err(Error::config(
                    "dataset.geometry",
                    format!("{r}x{c} does not match input dimension {dim}"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn select(&self, indices: &[usize]) -> Vec<LabeledSample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn class_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.samples[i].y] += 1;
        }
        h
    }
}

/// Gaussian blobs with unit covariance.
///
/// Class means are orthogonal with pairwise distance `class_sep` when
/// `num_classes <= input_dim`; otherwise they are random points on the sphere
/// of radius `class_sep / sqrt(2)`.
pub fn synth_blobs<R: Rng + ?Sized>(
    rng: &mut R,
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    class_sep: f64,
) -> Result<Dataset> {
    if num_classes < 2 || input_dim == 0 || per_class == 0 {
        return Err(Error::param("synth_blobs needs >= 2 classes and positive sizes"));
    }
    if !(class_sep >= 0.0) || !class_sep.is_finite() {
        return Err(Error::param("class_sep must be finite and >= 0"));
    }
    let radius = class_sep / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            if num_classes <= input_dim {
                let mut m = vec![0.0; input_dim];
                m[c] = radius;
                Ok(m)
            } else {
                let mut m = numstat::sample_gaussian(rng, 0.0, 1.0, input_dim)?;
                let n = numstat::norm(&m).max(f64::MIN_POSITIVE);
                numstat::scale(&mut m, radius / n);
                Ok(m)
            }
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let mut x = numstat::sample_gaussian(rng, 0.0, 1.0, input_dim)?;
            numstat::axpy(1.0, mean, &mut x)?;
            samples.push(LabeledSample::new(x, c));
        }
    }
    Dataset::new(samples, num_classes, None)
}

/// Reads `label,f1,...,fd` rows (UTF-8, no header).
///
/// The feature dimension is taken from the first row. When `num_classes` is
/// `None` it is inferred as `max(label) + 1` (at least 2).
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or_default();
        let y: usize = label_field
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid label `{label_field}`")))?;
        let x: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line_no, format!("invalid feature `{f}`")))
            })
            .collect::<Result<_>>()?;
        if x.is_empty() {
            return Err(parse_err(line_no, "row has no features".into()));
        }
        match dim {
            None => dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(parse_err(line_no, format!("expected {d} features, found {}", x.len())))
            }
            _ => {}
        }
        if let Some(c) = num_classes {
            if y >= c {
                return Err(parse_err(line_no, format!("label {y} out of range for {c} classes")));
            }
        }
        samples.push(LabeledSample::new(x, y));
    }
    if samples.is_empty() {
        return Err(Error::EmptySample("CSV dataset has no rows"));
    }
    let classes = num_classes
        .unwrap_or_else(|| samples.iter().map(|s| s.y).max().unwrap_or(0) + 1)
        .max(2);
    Dataset::new(samples, classes, None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub holdout_indices: Vec<usize>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    /// Checks index validity and global disjointness.
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        let all = self.client_indices.iter().flatten().chain(self.holdout_indices.iter());
        for &i in all {
            if i >= dataset_len {
                return Err(Error::Contract(format!("partition index {i} out of range")));
            }
            if !seen.insert(i) {
                return Err(Error::Contract(format!("partition index {i} assigned twice")));
            }
        }
        Ok(())
    }
}

/// Indices ordered so that consecutive runs cycle through the classes, each
/// class visited in a random order.
fn stratified_order<R: Rng + ?Sized>(rng: &mut R, dataset: &Dataset) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.y].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(dataset.len());
    for j in 0..longest {
        for c in &by_class {
            if let Some(&i) = c.get(j) {
                out.push(i);
            }
        }
    }
    out
}

fn check_partition_sizes(dataset: &Dataset, clients: usize, per_client: usize, holdout: usize) -> Result<()> {
    if clients == 0 || per_client == 0 {
        return Err(Error::param("partition needs at least one client and one sample each"));
    }
    let needed = clients * per_client + holdout;
    if needed > dataset.len() {
        return Err(Error::InsufficientData {
            needed,
            available: dataset.len(),
        });
    }
    Ok(())
}

/// Class-stratified uniform split into `clients` shards of `per_client`
/// samples plus a holdout set.
pub fn partition_iid<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &Dataset,
    clients: usize,
    per_client: usize,
    holdout: usize,
) -> Result<Partition> {
    check_partition_sizes(dataset, clients, per_client, holdout)?;
    let order = stratified_order(rng, dataset);
    let holdout_indices = order[..holdout].to_vec();
    // Contiguous runs of the stratified order are class-balanced.
    let client_indices = order[holdout..holdout + clients * per_client]
        .chunks(per_client)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(Partition {
        client_indices,
        holdout_indices,
    })
}

/// Splits `total` into integer counts proportional to `shares` using the
/// largest-remainder rule (ties broken by lower index).
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Label-skewed split: for each class, the class's pool samples are divided
/// among clients by proportions drawn from `Dirichlet(beta * 1_K)`.
///
/// The pool holds `clients * per_client` samples (class-stratified); client
/// sizes vary. `beta = inf` is the IID split.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &Dataset,
    clients: usize,
    per_client: usize,
    beta: f64,
    holdout: usize,
) -> Result<Partition> {
    if beta == f64::INFINITY {
        return partition_iid(rng, dataset, clients, per_client, holdout);
    }
    if !(beta > 0.0) {
        return Err(Error::param(format!("dirichlet beta must be > 0, got {beta}")));
    }
    check_partition_sizes(dataset, clients, per_client, holdout)?;
    let order = stratified_order(rng, dataset);
    let holdout_indices = order[..holdout].to_vec();
    let pool = &order[holdout..holdout + clients * per_client];

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for &i in pool {
        by_class[dataset.samples[i].y].push(i);
    }
    let mut client_indices = vec![Vec::new(); clients];
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        let shares = numstat::sample_dirichlet(rng, beta, clients)?;
        let counts = apportion(members.len(), &shares);
        let mut rest = members.as_slice();
        for (k, n) in counts.into_iter().enumerate() {
            let (take, tail) = rest.split_at(n);
            client_indices[k].extend_from_slice(take);
            rest = tail;
        }
    }
    for c in &mut client_indices {
        c.sort_unstable();
    }
    Ok(Partition {
        client_indices,
        holdout_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NonmemberSource {
    #[default]
    #[serde(rename = "holdout")]
    Holdout,
    #[serde(rename = "holdout+others")]
    HoldoutPlusOthers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSplitConfig {
    pub target_client: usize,
    /// Size of each of the member and non-member sets (capped by availability).
    pub per_side: usize,
    pub source: NonmemberSource,
    /// Fraction of the holdout entering the mixed non-member pool.
    pub holdout_fraction: f64,
    /// Fraction of each other client's data entering the mixed pool.
    pub others_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub member_indices: Vec<usize>,
    pub nonmember_indices: Vec<usize>,
}

fn choose<R: Rng + ?Sized>(rng: &mut R, from: &[usize], n: usize) -> Vec<usize> {
    let n = n.min(from.len());
    let mut picked: Vec<usize> = index::sample(rng, from.len(), n).into_iter().map(|j| from[j]).collect();
    picked.sort_unstable();
    picked
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Member / non-member target sets for auditing one client.
pub fn eval_split<R: Rng + ?Sized>(rng: &mut R, partition: &Partition, cfg: &EvalSplitConfig) -> Result<EvalSplit> {
    let target = partition
        .client_indices
        .get(cfg.target_client)
        .ok_or_else(|| Error::config("attack.target_client", "no such client"))?;
    let pool: Vec<usize> = match cfg.source {
        NonmemberSource::Holdout => partition.holdout_indices.clone(),
        NonmemberSource::HoldoutPlusOthers => {
            for (name, f) in [
                ("holdout_fraction", cfg.holdout_fraction),
                ("others_fraction", cfg.others_fraction),
            ] {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::config(format!("partition.{name}"), "must be in [0, 1]"));
                }
            }
            let h = &partition.holdout_indices;
            let mut pool = choose(rng, h, fraction_count(cfg.holdout_fraction, h.len()));
            for (k, other) in partition.client_indices.iter().enumerate() {
                if k != cfg.target_client {
                    pool.extend(choose(rng, other, fraction_count(cfg.others_fraction, other.len())));
                }
            }
            pool.sort_unstable();
            pool
        }
    };
    let n = cfg.per_side.min(target.len()).min(pool.len());
    if n == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    Ok(EvalSplit {
        member_indices: choose(rng, target, n),
        nonmember_indices: choose(rng, &pool, n),
    })
}

/// A mixup training example: `x = lambda * x1 + (1 - lambda) * x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub x: Vec<f64>,
    pub y1: usize,
    pub y2: usize,
    pub lambda: f64,
}

impl MixedSample {
    pub fn soft_target(&self, num_classes: usize) -> Vec<f64> {
        let mut q = vec![0.0; num_classes];
        q[self.y1] += self.lambda;
        q[self.y2] += 1.0 - self.lambda;
        q
    }

    /// `lambda * loss(x, y1) + (1 - lambda) * loss(x, y2)`
    pub fn loss(&self, spec: &ModelSpec, params: &[f64]) -> Result<f64> {
        let a = model::loss(spec, params, &LabeledSample::new(self.x.clone(), self.y1))?;
        let b = model::loss(spec, params, &LabeledSample::new(self.x.clone(), self.y2))?;
        Ok(self.lambda * a + (1.0 - self.lambda) * b)
    }

    /// Gradient of [`MixedSample::loss`], which is linear in the target.
    pub fn accumulate_grad(&self, spec: &ModelSpec, params: &[f64], weight: f64, out: &mut [f64]) -> Result<()> {
        let q = self.soft_target(spec.num_classes);
        model::accumulate_grad(spec, params, &self.x, Target::Soft(&q), weight, out)
    }
}

/// Mixes `batch[i]` with `batch[partners[i]]` at a fixed `lambda`.
pub fn mixup_with(batch: &[&LabeledSample], partners: &[usize], lambda: f64) -> Result<Vec<MixedSample>> {
    if partners.len() != batch.len() || partners.iter().any(|&p| p >= batch.len()) {
        return Err(Error::param("mixup partner list does not match the batch"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    Ok(batch
        .iter()
        .zip(partners)
        .map(|(a, &p)| {
            let b = batch[p];
            MixedSample {
                x: a.x
                    .iter()
                    .zip(&b.x)
                    .map(|(u, v)| lambda * u + (1.0 - lambda) * v)
                    .collect(),
                y1: a.y,
                y2: b.y,
                lambda,
            }
        })
        .collect())
}

/// Mixup with one `lambda ~ Beta(alpha, alpha)` per batch and partners given
/// by a random permutation of the batch.
pub fn mixup<R: Rng + ?Sized>(rng: &mut R, batch: &[&LabeledSample], alpha: f64) -> Result<Vec<MixedSample>> {
    if batch.len() < 2 {
        return Err(Error::param("mixup needs a batch of at least 2 samples"));
    }
    let lambda = numstat::sample_beta(rng, alpha)?;
    let mut partners: Vec<usize> = (0..batch.len()).collect();
    partners.shuffle(rng);
    mixup_with(batch, &partners, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentOps {
    #[serde(default)]
    pub flip_h: bool,
    #[serde(default)]
    pub shift: bool,
    #[serde(default)]
    pub noise_std: f64,
}

impl AugmentOps {
    pub fn needs_geometry(&self) -> bool {
        self.flip_h || self.shift
    }
}

fn require_geometry(geometry: Option<(usize, usize)>, len: usize) -> Result<(usize, usize)> {
    match geometry {
        Some((r, c)) if r * c == len => Ok((r, c)),
        Some((r, c)) => Err(Error::config(
            "dataset.geometry",
            format!("{r}x{c} does not match feature length {len}"),
        )),
        None => Err(Error::config(
            "dataset.geometry",
            "flip and shift augmentation need grid geometry",
        )),
    }
}

/// Mirrors each row of the grid.
pub fn flip_h(x: &[f64], geometry: Option<(usize, usize)>) -> Result<Vec<f64>> {
    let (_, cols) = require_geometry(geometry, x.len())?;
    Ok(x.chunks(cols).flat_map(|row| row.iter().rev().copied()).collect())
}

/// Translates the grid by `(dr, dc)` cells, filling vacated cells with zero.
pub fn shift(x: &[f64], geometry: Option<(usize, usize)>, dr: isize, dc: isize) -> Result<Vec<f64>> {
    let (rows, cols) = require_geometry(geometry, x.len())?;
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            let (sr, sc) = (r as isize - dr, c as isize - dc);
            if (0..rows as isize).contains(&sr) && (0..cols as isize).contains(&sc) {
                out[r * cols + c] = x[sr as usize * cols + sc as usize];
            }
        }
    }
    Ok(out)
}

/// Random augmentation: a coin-flip mirror, a shift of up to one cell in each
/// direction, and additive Gaussian noise, each when enabled in `ops`.
pub fn augment<R: Rng + ?Sized>(
    rng: &mut R,
    sample: &LabeledSample,
    geometry: Option<(usize, usize)>,
    ops: &AugmentOps,
) -> Result<LabeledSample> {
    if ops.needs_geometry() {
        require_geometry(geometry, sample.x.len())?;
    }
    let mut x = sample.x.clone();
    if ops.flip_h && rng.random::<bool>() {
        x = flip_h(&x, geometry)?;
    }
    if ops.shift {
        let dr = rng.random_range(-1i32..=1) as isize;
        let dc = rng.random_range(-1i32..=1) as isize;
        x = shift(&x, geometry, dr, dc)?;
    }
    if ops.noise_std != 0.0 {
        let noise = numstat::sample_gaussian(rng, 0.0, ops.noise_std, x.len())?;
        numstat::axpy(1.0, &noise, &mut x)?;
    }
    Ok(LabeledSample::new(x, sample.y))
}

/// `ceil(portion * n)` distinct indices drawn without replacement.
pub fn subsample<R: Rng + ?Sized>(rng: &mut R, indices: &[usize], portion: f64) -> Result<Vec<usize>> {
    if !(portion > 0.0 && portion <= 1.0) {
        return Err(Error::param(format!(
            "sampling portion must be in (0, 1], got {portion}"
        )));
    }
    let n = fraction_count(portion, indices.len()).min(indices.len());
    Ok(index::sample(rng, indices.len(), n)
        .into_iter()
        .map(|j| indices[j])
        .collect())
}
