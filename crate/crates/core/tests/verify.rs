use steinbench::bounds::{bound_sum_kernel, bound_sum_normalized, FormulaId, Metric};
use steinbench::chaos::{CellProfile, ChaosTensor};
use steinbench::distributions::Distribution;
use steinbench::special::{normal_cdf, normal_pdf};
use steinbench::verify::*;

type P = CellProfile<f64>;

/// Midpoint rule for `∫ |F - Φ|` with a step-function `F`, independent of the
/// antiderivative used by the estimator.
fn w1_midpoint(atoms: &[f64]) -> f64 {
    let n = 4_000_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    let m = atoms.len() as f64;
    (0..n)
        .map(|i| {
            let x = lo + (i as f64 + 0.5) * h;
            let f = atoms.iter().filter(|&&a| a <= x).count() as f64 / m;
            (f - normal_cdf(x)).abs() * h
        })
        .sum()
}

#[test]
fn w1_of_point_masses_matches_quadrature() {
    for atoms in [vec![0.0], vec![-1.0, 1.0], vec![-0.3, 0.1, 0.1, 2.5]] {
        let est = wasserstein_to_normal(&atoms).unwrap();
        assert!((est.value - w1_midpoint(&atoms)).abs() < 1e-6, "{atoms:?}: {}", est.value);
        assert_eq!(est.std_error, 0.0);
    }
    let two = wasserstein_to_normal(&[-1.0, 1.0]).unwrap().value;
    assert!((two - 0.535_377_3).abs() < 1e-6, "{two}");
    let zero = wasserstein_to_normal(&[0.0]).unwrap().value;
    assert!((zero - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
}

#[test]
fn w1_rejects_bad_input() {
    assert!(wasserstein_to_normal(&[]).is_err());
    assert!(wasserstein_to_normal(&[1.0, f64::NAN]).is_err());
}

#[test]
fn sampling_is_deterministic_and_seeded() {
    let spec = SampleSpec::Sum(vec![Distribution::uniform(1.0).unwrap(); 3]);
    let a = sample_functional(&spec, 1001, 7).unwrap();
    let b = sample_functional(&spec, 1001, 7).unwrap();
    let c = sample_functional(&spec, 1001, 8).unwrap();
    assert_eq!(a.len(), 1001);
    assert_eq!(a, b);
    assert_ne!(a, c);
    // the first batch only depends on (seed, replicate), not on m
    let longer = sample_functional(&spec, 2001, 7).unwrap();
    assert_eq!(a[..10], longer[..10]);
}

#[test]
fn gaussian_sum_is_close_to_normal() {
    let g = Distribution::gaussian(0.5).unwrap();
    let spec = SampleSpec::Sum(vec![g; 4]);
    let est = estimate_wasserstein(&spec, 40_000, 3).unwrap();
    assert!(est.value < est.value.max(3.0 * est.std_error) + 1e-12);
    assert!(est.value < 0.02, "{est:?}");
    assert_eq!(est.seed, 3);
    assert!(est.std_error > 0.0);
}

#[test]
fn empirical_moments_of_sampled_sums() {
    let u = Distribution::uniform(3f64.sqrt()).unwrap();
    let spec = SampleSpec::Sum(vec![u; 2]);
    let xs = sample_functional(&spec, 100_000, 11).unwrap();
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| x * x).sum::<f64>() / m;
    assert!(mean.abs() < 0.02);
    assert!((var - 2.0).abs() < 0.04);
}

#[test]
fn quadratic_form_has_unit_variance() {
    let pairs = 10;
    let a = 1.0 / (2.0 * (pairs as f64).sqrt());
    let mut matrix = vec![vec![0.0; 2 * pairs]; 2 * pairs];
    for p in 0..pairs {
        matrix[2 * p][2 * p + 1] = a;
        matrix[2 * p + 1][2 * p] = a;
    }
    let spec = SampleSpec::Quadratic { matrix, dist: Distribution::centered_gamma(2.0).unwrap() };
    let xs = sample_functional(&spec, 100_000, 5).unwrap();
    let m = xs.len() as f64;
    let var = xs.iter().map(|x| x * x).sum::<f64>() / m;
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

/// `½ ∫ |f - φ|` for the normalized uniform, by the midpoint rule.
fn tv_uniform_oracle() -> f64 {
    let r3 = 3f64.sqrt();
    let n = 2_000_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    0.5 * (0..n)
        .map(|i| {
            let x = lo + (i as f64 + 0.5) * h;
            let f = if x.abs() < r3 { 0.5 / r3 } else { 0.0 };
            (f - normal_pdf(x)).abs() * h
        })
        .sum::<f64>()
}

#[test]
fn tv_convolution_against_oracles() {
    let g = Distribution::gaussian(2.0).unwrap();
    assert!(tv_to_normal_convolution(&g, 3).unwrap() < 1e-3);
    let u = Distribution::uniform(1.0).unwrap();
    let one = tv_to_normal_convolution(&u, 1).unwrap();
    assert!((one - tv_uniform_oracle()).abs() < 2e-3, "{one}");
    // convolution smooths towards the normal
    let four = tv_to_normal_convolution(&u, 4).unwrap();
    assert!(four < one && four > 0.0);
    assert!(tv_to_normal_convolution(&Distribution::normalized_bernoulli(0.3).unwrap(), 2).is_err());
}

#[test]
fn check_bound_for_both_metrics() {
    let u = Distribution::uniform((3.0f64 / 5.0).sqrt()).unwrap();
    let dists = vec![u; 5];
    let spec = SampleSpec::Sum(dists.clone());
    let dual = bound_sum_kernel(&dists).unwrap();
    let w = check_bound(&dual.w1, &spec, 20_000, 1).unwrap();
    assert!(w.holds && w.margin > 0.0, "{w:?}");
    let t = check_bound(&dual.tv, &spec, 20_000, 1).unwrap();
    assert_eq!(t.bound.metric, Metric::TV);
    assert!(t.holds, "{t:?}");
    let norm = bound_sum_normalized(&dists).unwrap();
    assert_eq!(norm.formula, FormulaId::NormalizedSum);
    assert!(check_bound(&norm, &spec, 20_000, 1).unwrap().holds);
}

#[test]
fn tv_check_needs_identical_summands() {
    let dists = vec![Distribution::uniform(1.0).unwrap(), Distribution::uniform(2.0).unwrap()];
    let dual = bound_sum_kernel(&dists).unwrap();
    assert!(check_bound(&dual.tv, &SampleSpec::Sum(dists), 1000, 1).is_err());
}

fn linear(coeffs: &[f64]) -> ChaosTensor<f64> {
    ChaosTensor::first_order(coeffs, P::unit_linear())
}

#[test]
fn multiplication_formula_pathwise() {
    let f = linear(&[0.5, -0.2, 0.7]);
    let g = ChaosTensor::quadratic(
        &[vec![0.0, 0.3, 0.1], vec![0.3, 0.0, -0.4], vec![0.1, -0.4, 0.0]],
        P::quantile(Distribution::centered_gamma(1.0).unwrap()),
    )
    .unwrap();
    let check = verify_multiplication(&f, &f, 5000, 2).unwrap();
    assert!(check.max_abs_path_error < 1e-10, "{check:?}");
    assert!(check.mc_zscore.abs() < 4.0);
    let mixed = verify_multiplication(&f, &g, 5000, 2).unwrap();
    assert!(mixed.max_abs_path_error < 1e-9, "{mixed:?}");
    assert!(mixed.mc_zscore.abs() < 4.0);
}

#[test]
fn isometry_and_orthogonality() {
    let f = linear(&[1.0, 0.5]);
    let iso = verify_isometry(&f, 20_000, 9).unwrap();
    assert!(iso.canonical && iso.holds, "{iso:?}");
    assert!((iso.exact - 1.25).abs() < 1e-12);
    let g = ChaosTensor::quadratic(&[vec![0.0, 1.0], vec![1.0, 0.0]], P::unit_linear()).unwrap();
    let iso2 = verify_isometry(&g, 20_000, 9).unwrap();
    assert!((iso2.exact - 4.0).abs() < 1e-12);
    assert!(iso2.holds, "{iso2:?}");
    let cov = verify_orthogonality(&f, &g, 20_000, 4).unwrap();
    assert!(cov.zscore.abs() < 4.0, "{cov:?}");
}

#[test]
fn non_canonical_profile_is_flagged() {
    // t is not centred on its cell
    let f = ChaosTensor::first_order(&[1.0], P::polynomial(vec![0.0, 1.0]));
    let iso = verify_isometry(&f, 2000, 1).unwrap();
    assert!(!iso.canonical);
}
