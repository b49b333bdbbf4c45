mod common;

use fedaudit::metrics::{hypervolume, ParetoPoint};
use fedaudit::model::{self, LabeledSample, ModelSpec};
use fedaudit::numstat::{gaussian_cdf, std_normal_cdf, RngStream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn normal_cdf_matches_quadrature() {
    let mut worst = 0.0f64;
    for i in -800..=800 {
        let z = i as f64 / 100.0;
        worst = worst.max((std_normal_cdf(z) - common::normal_cdf_quadrature(z)).abs());
    }
    assert!(worst <= 1e-9, "max abs error {worst:e}");
}

#[test]
fn gaussian_cdf_standardizes() {
    let mut rng = RngStream::new(11, 1).rng();
    for _ in 0..500 {
        let mean: f64 = rng.random_range(-50.0..50.0);
        let var: f64 = 10f64.powf(rng.random_range(-6.0..4.0));
        let x = mean + rng.random_range(-6.0..6.0) * var.sqrt();
        let want = common::normal_cdf_quadrature((x - mean) / var.sqrt());
        let got = gaussian_cdf(x, mean, var).unwrap();
        assert!(
            (got - want).abs() <= 1e-9,
            "x={x} mean={mean} var={var}: {got} vs {want}"
        );
    }
}

#[test]
fn gaussian_cdf_fixture_values() {
    assert_eq!(gaussian_cdf(0.0, 0.0, 1.0).unwrap(), 0.5);
    assert!((gaussian_cdf(1.0, 0.0, 1.0).unwrap() - 0.841345).abs() < 1e-6);
    assert!((gaussian_cdf(-3.0, 0.0, 1.0).unwrap() - 0.001350).abs() < 1e-6);
    assert!(gaussian_cdf(0.0, 0.0, 0.0).is_err());
}

fn random_case<R: Rng>(rng: &mut R, mlp: bool) -> (ModelSpec, Vec<f64>, LabeledSample) {
    let input_dim = rng.random_range(1..=6);
    let classes = rng.random_range(2..=5);
    let spec = if mlp {
        ModelSpec::mlp(input_dim, rng.random_range(1..=6), classes, 0.5)
    } else {
        ModelSpec::linear(input_dim, classes, 0.5)
    };
    let params = model::init_params(&spec, rng).unwrap().into_inner();
    let x: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(rng)).collect();
    (spec, params, LabeledSample::new(x, rng.random_range(0..classes)))
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = RngStream::new(5, 2).rng();
    for case in 0..100 {
        let (spec, params, sample) = random_case(&mut rng, case % 2 == 1);
        let g = model::grad_sample(&spec, &params, &sample).unwrap().into_inner();
        let fd = common::fd_gradient(&spec, &params, &sample, 1e-5);
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fedaudit::numstat::vector::norm(&g)
            .max(fedaudit::numstat::vector::norm(&fd))
            .max(1e-12);
        assert!(
            diff / scale < 1e-4,
            "case {case} ({:?}): relative error {:e}",
            spec.kind,
            diff / scale
        );
    }
}

#[test]
fn hypervolume_matches_inclusion_exclusion() {
    let fixtures: Vec<Vec<(f64, f64)>> = vec![
        vec![(0.5, 0.5)],
        vec![(1.0, 1.0)],
        vec![(0.2, 0.8), (0.8, 0.2)],
        vec![(0.2, 0.8), (0.8, 0.2), (0.9, 0.9)],
        vec![(0.1, 0.9), (0.4, 0.4), (0.7, 0.3), (0.95, 0.05)],
        vec![(0.0, 1.0), (1.0, 0.0)],
        vec![(0.3, 0.3), (0.3, 0.3), (0.6, 0.1)],
    ];
    for f in fixtures {
        let pts: Vec<ParetoPoint> = f.iter().map(|&(u, l)| ParetoPoint::new(u, l)).collect();
        let want = common::hypervolume_inclusion_exclusion(&pts, (1.0, 1.0));
        let got = hypervolume(&pts, (1.0, 1.0)).unwrap();
        assert!((got - want).abs() < 1e-15, "{f:?}: {got} vs {want}");
    }
    let pts = [ParetoPoint::new(0.2, 0.8), ParetoPoint::new(0.8, 0.2)];
    assert!((hypervolume(&pts, (1.0, 1.0)).unwrap() - 0.28).abs() < 1e-15);
}

#[test]
fn hypervolume_matches_monte_carlo() {
    let mut rng = RngStream::new(9, 3).rng();
    for _ in 0..3 {
        let n = rng.random_range(1..=8);
        let pts: Vec<ParetoPoint> = (0..n)
            .map(|_| ParetoPoint::new(rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let exact = hypervolume(&pts, (1.0, 1.0)).unwrap();
        let (est, se) = common::hypervolume_mc(&pts, (1.0, 1.0), 1_000_000, &mut rng);
        assert!((exact - est).abs() <= 3.0 * se, "exact {exact} mc {est} se {se}");
    }
}
