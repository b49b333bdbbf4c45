//! Deterministic numeric primitives: random streams, vector arithmetic,
//! summary statistics, and the normal CDF used by the tail test.

mod rng;
pub mod vector;

pub use rng::{tag, RngStream};
pub use vector::{axpy, cosine, dot, norm, scale};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and population variance of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Divide-by-n variance.
    pub variance: f64,
    pub count: usize,
}

impl SummaryStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

pub fn summary(values: &[f64]) -> Result<SummaryStats> {
    let first = *values.first().ok_or(Error::EmptySample("summary of no values"))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("summary of non-finite values"));
    }
    let count = values.len();
    // Exact zero for constant input; floating summation of a repeated value
    // does not always reproduce it.
    if values.iter().all(|&v| v == first) {
        return Ok(SummaryStats {
            mean: first,
            variance: 0.0,
            count,
        });
    }
    let n = count as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(SummaryStats { mean, variance, count })
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `P[X <= x]` for `X ~ N(mean, variance)`.
pub fn gaussian_cdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(x.is_finite() && mean.is_finite() && variance.is_finite()) {
        return Err(Error::param("gaussian_cdf requires finite inputs"));
    }
    if variance <= 0.0 {
        return Err(Error::Degenerate(format!(
            "normal distribution with variance {variance}"
        )));
    }
    Ok(std_normal_cdf((x - mean) / variance.sqrt()))
}

pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64, dim: usize) -> Result<Vec<f64>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::param(format!("gaussian std must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(vec![mean; dim]);
    }
    Ok((0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + std * z
        })
        .collect())
}

/// Log of a `Gamma(shape, 1)` draw.
///
/// Shapes below one use `G(a) = G(a + 1) * U^(1/a)` in log space, which stays
/// finite for shapes as small as 1e-5 where the direct draw underflows to 0.
fn ln_gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape validated by caller");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape validated by caller");
        let u: f64 = 1.0 - rng.random::<f64>();
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// Symmetric `Beta(alpha, alpha)` draw.
pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("beta alpha must be > 0, got {alpha}")));
    }
    let a = ln_gamma_draw(rng, alpha);
    let b = ln_gamma_draw(rng, alpha);
    // a / (a + b) computed as a logistic of the log ratio.
    Ok((1.0 / (1.0 + (b - a).exp())).clamp(0.0, 1.0))
}

/// Symmetric `Dirichlet(beta * 1_dim)` draw.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, beta: f64, dim: usize) -> Result<Vec<f64>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::param(format!("dirichlet beta must be > 0, got {beta}")));
    }
    if dim == 0 {
        return Err(Error::param("dirichlet dimension must be >= 1"));
    }
    if dim == 1 {
        return Ok(vec![1.0]);
    }
    let logs: Vec<f64> = (0..dim).map(|_| ln_gamma_draw(rng, beta)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_fixtures() {
        assert_eq!(gaussian_cdf(0.0, 0.0, 1.0).unwrap(), 0.5);
        assert!((gaussian_cdf(1.0, 0.0, 1.0).unwrap() - 0.841_345).abs() < 1e-6);
        assert!((gaussian_cdf(-3.0, 0.0, 1.0).unwrap() - 0.001_350).abs() < 1e-6);
    }

    #[test]
    fn cdf_rejects_degenerate() {
        assert!(matches!(gaussian_cdf(0.0, 0.0, 0.0), Err(Error::Degenerate(_))));
        assert!(gaussian_cdf(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn summary_fixtures() {
        let s = summary(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.variance), (2.0, 0.0));
        let mut v = vec![0.0; 8];
        v.push(1.0);
        let s = summary(&v).unwrap();
        assert!((s.mean - 1.0 / 9.0).abs() < 1e-15);
        assert!((s.variance - 8.0 / 81.0).abs() < 1e-15);
        let s = summary(&[1.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.count), (1.0, 0.0, 1));
        assert!(matches!(summary(&[]), Err(Error::EmptySample(_))));
    }

    #[test]
    fn gaussian_samples() {
        let mut rng = RngStream::new(3, 0).rng();
        assert_eq!(sample_gaussian(&mut rng, 0.0, 0.0, 3).unwrap(), vec![0.0; 3]);
        assert!(sample_gaussian(&mut rng, 0.0, -1.0, 3).is_err());

        let n = 100_000;
        let xs = sample_gaussian(&mut rng, 0.0, 1.0, n).unwrap();
        let s = summary(&xs).unwrap();
        assert!(s.mean.abs() < 0.02);
        let xs = sample_gaussian(&mut rng, 0.0, 0.5, n).unwrap();
        let s = summary(&xs).unwrap();
        assert!((s.variance - 0.25).abs() < 0.01);
    }

    #[test]
    fn beta_samples() {
        let mut rng = RngStream::new(5, 1).rng();
        assert!(sample_beta(&mut rng, 0.0).is_err());
        assert!(sample_beta(&mut rng, -1.0).is_err());

        let n = 100_000;
        let uni: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, 1.0).unwrap()).collect();
        assert!(uni.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!((summary(&uni).unwrap().mean - 0.5).abs() < 0.01);

        let tight: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, 1e5).unwrap()).collect();
        assert!(summary(&tight).unwrap().std_dev() < 0.01);

        let spread: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, 1e-5).unwrap()).collect();
        let inner = spread.iter().filter(|&&x| x > 0.1 && x < 0.9).count();
        assert!((inner as f64 / n as f64) < 0.01);
        // Symmetric: both ends populated.
        let low = spread.iter().filter(|&&x| x < 0.5).count() as f64 / n as f64;
        assert!((low - 0.5).abs() < 0.02);
    }

    #[test]
    fn dirichlet_samples() {
        let mut rng = RngStream::new(9, 2).rng();
        assert_eq!(sample_dirichlet(&mut rng, 0.5, 1).unwrap(), vec![1.0]);
        assert!(sample_dirichlet(&mut rng, 0.0, 3).is_err());
        let p = sample_dirichlet(&mut rng, 1e6, 4).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 0.01));
        for beta in [1e-3, 0.1, 1.0, 10.0] {
            let p = sample_dirichlet(&mut rng, beta, 10).unwrap();
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn cdf_symmetry(x in -50.0f64..50.0, mean in -5.0f64..5.0, var in 1e-3f64..10.0) {
            let a = gaussian_cdf(x, mean, var).unwrap();
            let b = gaussian_cdf(2.0 * mean - x, mean, var).unwrap();
            prop_assert!((a + b - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn cdf_monotone(x1 in -20.0f64..20.0, dx in 0.0f64..5.0) {
            prop_assert!(gaussian_cdf(x1, 0.0, 1.0).unwrap() <= gaussian_cdf(x1 + dx, 0.0, 1.0).unwrap());
        }

        #[test]
        fn constant_summary_has_zero_variance(v in -1e6f64..1e6, n in 1usize..50) {
            prop_assert_eq!(summary(&vec![v; n]).unwrap().variance, 0.0);
        }
    }
}
