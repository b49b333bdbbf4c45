//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use fedaudit::metrics::ParetoPoint;
use fedaudit::model::{self, LabeledSample, ModelSpec};
use rand::Rng;

/// Mann-Whitney statistic over every (member, non-member) pair, ties count half.
pub fn pairwise_auc(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &m in members {
        for &n in nonmembers {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    wins / (members.len() * nonmembers.len()) as f64
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF by composite Simpson integration of the density over
/// `[0, |z|]`, with step at most 1e-3.
pub fn normal_cdf_quadrature(z: f64) -> f64 {
    let a = z.abs().min(40.0);
    if a == 0.0 {
        return 0.5;
    }
    let n = ((a / 1e-3).ceil() as usize).max(2).next_multiple_of(2);
    let h = a / n as f64;
    let mut s = normal_pdf(0.0) + normal_pdf(a);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * normal_pdf(i as f64 * h);
    }
    let half = s * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Monte Carlo estimate of the area dominated by `points` inside the box
/// `[0, rx] x [0, ry]`, with its standard error.
pub fn hypervolume_mc<R: Rng>(
    points: &[ParetoPoint],
    reference: (f64, f64),
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let (rx, ry) = reference;
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = rng.random::<f64>() * rx;
        let y = rng.random::<f64>() * ry;
        if points.iter().any(|p| p.utility_loss <= x && p.privacy_leakage <= y) {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    let area = rx * ry;
    (p * area, area * (p * (1.0 - p) / samples as f64).sqrt())
}

/// Area of the union of the boxes `[p, reference]` by inclusion-exclusion
/// over every subset. Exponential; meant for a handful of points.
pub fn hypervolume_inclusion_exclusion(points: &[ParetoPoint], reference: (f64, f64)) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for mask in 1u32..(1 << n) {
        let (mut x, mut y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            if mask & (1 << i) != 0 {
                x = x.max(p.utility_loss);
                y = y.max(p.privacy_leakage);
            }
        }
        let box_area = (reference.0 - x).max(0.0) * (reference.1 - y).max(0.0);
        if mask.count_ones() % 2 == 1 {
            total += box_area;
        } else {
            total -= box_area;
        }
    }
    total
}

/// Central finite-difference gradient of the sample loss.
pub fn fd_gradient(spec: &ModelSpec, params: &[f64], sample: &LabeledSample, h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = model::loss(spec, &p, sample).unwrap();
            p[i] = orig - h;
            let down = model::loss(spec, &p, sample).unwrap();
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
