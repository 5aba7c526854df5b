use steinbench::distributions::Distribution;
use steinbench::special::normal_pdf;

type D = Distribution<f64>;

fn continuous() -> Vec<D> {
    vec![
        D::gaussian(1.3).unwrap(),
        D::centered_gamma(0.5).unwrap(),
        D::centered_gamma(2.0).unwrap(),
        D::centered_beta(0.5).unwrap(),
        D::centered_beta(3.0).unwrap(),
        D::uniform(2.0).unwrap(),
        D::tabulated(vec![-1.0, 0.0, 0.5, 2.0], vec![0.0, 0.3, 0.8, 1.0]).unwrap(),
    ]
}

fn interior_grid(d: &D, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|i| d.quantile(i as f64 / (count + 1) as f64).unwrap())
        .collect()
}

#[test]
fn means_vanish() {
    for d in continuous() {
        assert!(d.mean_by_quadrature().abs() < 1e-9, "{}", d.name());
    }
}

#[test]
fn quantile_inverts_cdf() {
    for d in continuous() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            let x = d.quantile(u).unwrap();
            assert!((d.cdf(x) - u).abs() <= 1e-12, "{} u={u}", d.name());
            let back = d.quantile(d.cdf(x)).unwrap();
            assert!((back - x).abs() <= 1e-10 * x.abs().max(1.0), "{} x={x}", d.name());
        }
    }
}

#[test]
fn quantile_endpoints() {
    let g = D::centered_gamma(3.0).unwrap();
    assert_eq!(g.quantile(0.0).unwrap(), -3.0);
    assert_eq!(g.quantile(1.0).unwrap(), f64::INFINITY);
    let bern = D::normalized_bernoulli(0.25).unwrap();
    let (lo, hi) = bern.support();
    assert_eq!(bern.quantile(0.0).unwrap(), lo);
    assert_eq!(bern.quantile(0.75).unwrap(), lo);
    assert_eq!(bern.quantile(0.7500001).unwrap(), hi);
}

#[test]
fn kernel_mean_is_variance() {
    for d in continuous() {
        let ek = d.expect(|x| d.stein_kernel(x).unwrap());
        assert!((ek - d.variance()).abs() < 1e-8, "{}", d.name());
    }
}

#[test]
fn kernel_is_nonnegative_inside() {
    for d in continuous() {
        for y in interior_grid(&d, 50) {
            assert!(d.stein_kernel(y).unwrap() >= 0.0);
        }
    }
}

#[test]
fn quadrature_kernel_agrees_with_closed_forms() {
    for d in continuous() {
        for y in interior_grid(&d, 40) {
            let a = d.stein_kernel(y).unwrap();
            let b = d.stein_kernel_quadrature(y).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1.0), "{} y={y}: {a} vs {b}", d.name());
        }
    }
}

#[test]
fn covariance_identity() {
    let tests: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
        (f64::sin, f64::cos),
        (f64::tanh, |x| 1.0 - x.tanh().powi(2)),
        (|x| x / (1.0 + x * x), |x| (1.0 - x * x) / (1.0 + x * x).powi(2)),
    ];
    for d in continuous() {
        for (g, dg) in tests {
            let lhs = d.expect(|x| x * g(x));
            let rhs = d.expect(|x| dg(x) * d.stein_kernel(x).unwrap());
            assert!((lhs - rhs).abs() < 1e-6, "{}", d.name());
        }
    }
}

#[test]
fn density_reconstruction() {
    for d in [
        D::gaussian(1.0).unwrap(),
        D::centered_gamma(2.0).unwrap(),
        D::centered_beta(1.0).unwrap(),
        D::centered_beta(2.0).unwrap(),
        D::uniform(0.7).unwrap(),
    ] {
        for i in 0..=60 {
            let u = 1e-6 + (1.0 - 2e-6) * i as f64 / 60.0;
            let z = d.quantile(u).unwrap();
            let got = d.density_from_kernel(z).unwrap();
            let want = d.density(z).unwrap();
            assert!((got - want).abs() < 1e-6, "{} z={z}: {got} vs {want}", d.name());
        }
    }
    let g = D::gaussian(1.0).unwrap();
    assert!((g.density_from_kernel(0.0).unwrap() - normal_pdf(0.0)).abs() < 1e-12);
    let gm = D::centered_gamma(2.0).unwrap();
    assert!((gm.density_from_kernel(0.0).unwrap() - 2.0 * (-2.0f64).exp()).abs() < 1e-10);
}

#[test]
fn tail_bound_dominates() {
    for d in [
        D::gaussian(0.8).unwrap(),
        D::centered_beta(0.5).unwrap(),
        D::centered_beta(4.0).unwrap(),
        D::uniform(1.5).unwrap(),
    ] {
        let (_, hi) = d.support();
        let top = if hi.is_finite() { hi } else { 6.0 };
        for i in 0..100 {
            let x = top * i as f64 / 99.0;
            assert!(d.sf(x) <= d.tail_bound(x).unwrap() + 1e-15, "{} x={x}", d.name());
        }
    }
    assert_eq!(D::centered_gamma(1.0).unwrap().kernel_sup().unwrap(), f64::INFINITY);
}

#[test]
fn abs_moments_against_quadrature() {
    for d in continuous() {
        for p in [1.0, 2.0, 3.0, 4.0] {
            let closed = d.abs_moment(p).unwrap();
            let oracle = d.expect(|x| x.abs().powf(p));
            assert!((closed - oracle).abs() < 1e-9 * oracle.max(1.0), "{} p={p}", d.name());
        }
    }
    let g = D::gaussian(1.0).unwrap();
    let want = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((g.abs_moment(3.0).unwrap() - want).abs() < 1e-13);
}

#[test]
fn single_precision_smoke() {
    let d = Distribution::<f32>::centered_beta(2.0).unwrap();
    assert!((d.cdf(0.0) - (2.0f32 / 3.0).powi(2)).abs() < 1e-6);
    assert!((d.stein_kernel(0.0).unwrap() - 2.0 / 27.0).abs() < 1e-6);
    let g = Distribution::<f32>::centered_gamma(1.5).unwrap();
    let x = g.quantile(0.3).unwrap();
    assert!((g.cdf(x) - 0.3).abs() < 1e-5);
}
