//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line before asserting.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steinbench::bounds::*;
use steinbench::chaos::{symmetrize, CellProfile, ChaosTensor};
use steinbench::distributions::Distribution;
use steinbench::io::{write_results, ResultRow};
use steinbench::verify::*;

type D = Distribution<f64>;
type P = CellProfile<f64>;

const SEED: u64 = 20_240_601;

fn verdict(n: u32, pass: bool, detail: String) {
    // straight to the stream so the line shows without --nocapture
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn interior(d: &D, count: usize) -> Vec<f64> {
    (1..=count).map(|i| d.quantile(i as f64 / (count + 1) as f64).unwrap()).collect()
}

#[test]
fn criterion_01_stein_kernels() {
    let mut worst_gamma = 0.0f64;
    for s in [0.5, 1.0, 2.0, 5.0] {
        let d = D::centered_gamma(s).unwrap();
        for y in interior(&d, 200) {
            worst_gamma = worst_gamma.max((d.stein_kernel(y).unwrap() - (y + s)).abs());
        }
    }
    let mut worst_gauss = 0.0f64;
    for sigma in [0.3, 1.0, 2.5] {
        let d = D::gaussian(sigma).unwrap();
        for y in interior(&d, 200) {
            worst_gauss = worst_gauss.max((d.stein_kernel(y).unwrap() - sigma * sigma).abs());
        }
    }
    let mut worst_beta = 0.0f64;
    for a in [0.5, 1.0, 2.0, 5.0] {
        let d = D::centered_beta(a).unwrap();
        for y in interior(&d, 200) {
            let closed = (a / (a + 1.0) + y) * (1.0 / (a + 1.0) - y) / (a + 1.0);
            worst_beta = worst_beta.max((d.stein_kernel(y).unwrap() - closed).abs());
        }
    }
    let pass = worst_gamma <= 1e-8 && worst_gauss <= 1e-10 && worst_beta <= 1e-8;
    verdict(1, pass, format!("gamma err {worst_gamma:.2e}, gaussian err {worst_gauss:.2e}, beta err {worst_beta:.2e}"));
}

#[test]
fn criterion_02_kernel_second_moments() {
    let mut worst = 0.0f64;
    for a in [0.5, 1.0, 2.0, 5.0] {
        let d = D::centered_beta(a).unwrap();
        let closed = 2.0 * a / ((a + 4.0) * (a + 3.0) * (a + 2.0) * (a + 1.0).powi(2));
        worst = worst.max((d.kernel_second_moment_quadrature().unwrap() - closed).abs());
        worst = worst.max((d.kernel_second_moment().unwrap() - closed).abs());
    }
    for s in [0.5, 1.0, 2.0, 5.0] {
        let d = D::centered_gamma(s).unwrap();
        worst = worst.max((d.kernel_second_moment_quadrature().unwrap() - s * (1.0 + s)).abs());
        worst = worst.max((d.kernel_second_moment().unwrap() - s * (1.0 + s)).abs());
    }
    verdict(2, worst <= 1e-8, format!("max err {worst:.2e}"));
}

#[test]
fn criterion_03_uniform_sums() {
    let unit = D::uniform(3f64.sqrt()).unwrap();
    let (mut worst_d, mut worst_nabla) = (0.0f64, 0.0f64);
    let mut faithful = Vec::new();
    for n in [1usize, 3, 5, 25] {
        let target = 1.0 / (5.0 * n as f64).sqrt();
        let f = ChaosTensor::first_order(&vec![1.0 / (n as f64).sqrt(); n], P::unit_linear());
        let via_d = bound_single_integral_d(&f).unwrap().w1.value;
        let x = unit.scaled(1.0 / (n as f64).sqrt()).unwrap();
        let via_sum = bound_sum_kernel(&vec![x; n]).unwrap().w1.value;
        worst_d = worst_d.max((via_d - target).abs()).max((via_sum - target).abs());
        let two = bound_single_integral_nabla(&f).unwrap().term("two_term").unwrap();
        worst_nabla = worst_nabla.max((two - 0.75 * (3.0 / n as f64).sqrt()).abs());
        faithful.push(format!("n={n}: {two:.6} = {:.3}*sqrt(3/n)", two / (3.0 / n as f64).sqrt()));
    }
    let pass = worst_d <= 1e-9 && worst_nabla <= 1e-9;
    verdict(
        3,
        pass,
        format!(
            "1/sqrt(5n) err {worst_d:.2e}; nabla two-term vs (3/4)sqrt(3/n) err {worst_nabla:.2e} ({})",
            faithful.join(", ")
        ),
    );
}

#[test]
fn criterion_04_beta_kernel_bound_and_ratio_curve() {
    let mut worst = 0.0f64;
    for a in [0.5, 1.0, 2.0, 5.0] {
        let x = D::centered_beta(a).unwrap().normalized();
        for n in [1usize, 4, 16, 64] {
            let xn = x.scaled(1.0 / (n as f64).sqrt()).unwrap();
            let got = bound_sum_kernel(&vec![xn; n]).unwrap().w1.value;
            let want = ((4.0 + a * (a * a + a - 2.0)) / (a * (a + 3.0) * (a + 4.0))).sqrt() / (n as f64).sqrt();
            worst = worst.max((got - want).abs());
        }
    }
    let grid: Vec<f64> = (0..100).map(|i| 0.1 + 9.9 * i as f64 / 99.0).collect();
    let rows = comparison_curves(CurveFamily::BetaRatio, &grid).unwrap();
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let pass = worst <= 1e-9 && rows.len() == 100 && min_ratio > 1.0;
    verdict(4, pass, format!("kernel bound err {worst:.2e}; min ratio over {} points {min_ratio:.4}", rows.len()));
}

#[test]
fn criterion_05_gamma_ratio_curve() {
    let rows = comparison_curves::<f64>(CurveFamily::GammaRatio, &[1e-3, 1.0, 10.0, 100.0]).unwrap();
    let near_zero = rows[0].ratio;
    let monotone = rows[1].ratio < rows[2].ratio && rows[2].ratio < rows[3].ratio;
    let pass = (near_zero - 2.0).abs() <= 0.05 * 2.0 && monotone;
    verdict(
        5,
        pass,
        format!(
            "ratio(1e-3) = {near_zero:.4}; ratio(1, 10, 100) = {:.4}, {:.4}, {:.4}",
            rows[1].ratio, rows[2].ratio, rows[3].ratio
        ),
    );
}

fn builtin_laws() -> Vec<(&'static str, D)> {
    vec![
        ("gaussian", D::gaussian(1.0).unwrap()),
        ("uniform", D::uniform(1.0).unwrap().normalized()),
        ("gamma-1", D::centered_gamma(1.0).unwrap().normalized()),
        ("beta-2", D::centered_beta(2.0).unwrap().normalized()),
    ]
}

/// The Monte Carlo sweep behind criteria 6 and 13. Writes the results CSV to
/// `out` and returns the rows.
fn bound_sweep(out: &Path) -> Vec<ResultRow> {
    let m = 200_000;
    let mut rows = Vec::new();
    for (name, x) in builtin_laws() {
        for n in [4usize, 16, 64] {
            let xn = x.scaled(1.0 / (n as f64).sqrt()).unwrap();
            let dists = vec![xn; n];
            let spec = SampleSpec::Sum(dists.clone());
            let est = estimate_wasserstein(&spec, m, SEED).unwrap();
            let bounds = [
                bound_sum_third_moment(&dists).unwrap(),
                bound_sum_normalized(&dists).unwrap(),
                bound_sum_kernel(&dists).unwrap().w1,
            ];
            for b in bounds {
                let check = CheckResult::from_estimate(b, est);
                rows.push(ResultRow::from_check("mc-sum", n, name, &check));
            }
        }
    }
    write_results(out, &rows).unwrap();
    rows
}

#[test]
fn criterion_06_monte_carlo_bound_checks() {
    let dir = tempfile::tempdir().unwrap();
    let rows = bound_sweep(&dir.path().join("c6.csv"));
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| !r.holds)
        .map(|r| format!("{} {} n={}: est {:.4} > bound {:.4}", r.formula_id, r.dist, r.n, r.estimate, r.bound))
        .collect();
    let tightest = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    verdict(
        6,
        failures.is_empty(),
        format!("{} checks, {} failures, smallest margin {tightest:.2e} {}", rows.len(), failures.len(), failures.join("; ")),
    );
}

fn random_tensor(rng: &mut ChaCha8Rng, order: usize, cells: usize) -> ChaosTensor<f64> {
    let pool = [
        P::unit_linear(),
        P::polynomial(vec![2.0 / 3.0, -2.0, 1.0]),
        P::quantile(D::centered_gamma(1.0).unwrap()),
        P::quantile(D::centered_beta(2.0).unwrap()),
    ];
    let mut t = ChaosTensor::zero(order, cells);
    let profiles: Vec<P> = (0..order).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
    let mut entries = Vec::new();
    for k in 0..cells {
        if order == 1 {
            entries.push((vec![k], rng.gen_range(-1.0..1.0)));
        } else {
            for l in 0..cells {
                if k != l {
                    entries.push((vec![k, l], rng.gen_range(-1.0..1.0)));
                }
            }
        }
    }
    t.add_term(entries, profiles).unwrap();
    symmetrize(&t).unwrap()
}

#[test]
fn criterion_07_multiplication_formula() {
    let f = ChaosTensor::first_order(&[0.8], P::unit_linear());
    let g = ChaosTensor::first_order(&[-1.3], P::quantile(D::centered_gamma(2.0).unwrap()));
    let single = verify_multiplication(&f, &g, 200, SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_z = 0.0f64;
    let mut worst_path = single.max_abs_path_error;
    for (n, m) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        let f = random_tensor(&mut rng, n, 4);
        let g = random_tensor(&mut rng, m, 4);
        let c = verify_multiplication(&f, &g, 100_000, SEED + n as u64 * 10 + m as u64).unwrap();
        worst_z = worst_z.max(c.mc_zscore.abs());
        worst_path = worst_path.max(c.max_abs_path_error);
    }
    let pass = single.max_abs_path_error <= 1e-9 && worst_z <= 4.0;
    verdict(
        7,
        pass,
        format!(
            "single-cell path err {:.2e}; max |z| {worst_z:.3} (max path err overall {worst_path:.2e})",
            single.max_abs_path_error
        ),
    );
}

#[test]
fn criterion_08_isometry_and_orthogonality() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let f1 = random_tensor(&mut rng, 1, 4);
    let f2 = random_tensor(&mut rng, 2, 4);
    let i1 = verify_isometry(&f1, 100_000, SEED).unwrap();
    let i2 = verify_isometry(&f2, 100_000, SEED + 1).unwrap();
    let cov = verify_orthogonality(&f1, &f2, 100_000, SEED + 2).unwrap();
    let pass = i1.canonical && i2.canonical && i1.zscore.abs() <= 3.0 && i2.zscore.abs() <= 3.0 && cov.zscore.abs() <= 3.0;
    verdict(
        8,
        pass,
        format!(
            "isometry z {:.3} (order 1), {:.3} (order 2); covariance {:.2e} z {:.3}",
            i1.zscore, i2.zscore, cov.covariance, cov.zscore
        ),
    );
}

fn pairwise_matrix(pairs: usize) -> Vec<Vec<f64>> {
    let w = 1.0 / (2.0 * (pairs as f64).sqrt());
    let mut a = vec![vec![0.0; 2 * pairs]; 2 * pairs];
    for k in 0..pairs {
        a[2 * k][2 * k + 1] = w;
        a[2 * k + 1][2 * k] = w;
    }
    a
}

#[test]
fn criterion_09_quadratic_forms() {
    let laws = [("uniform", D::uniform(1.0).unwrap()), ("gamma-1", D::centered_gamma(1.0).unwrap())];
    let mut notes = Vec::new();
    let mut rate_ok = true;
    for (name, d) in &laws {
        for pairs in [25usize, 100] {
            let r = bound_quadratic_nabla(&pairwise_matrix(pairs), d).unwrap();
            let cap = 8.0 * r.term("mu4").unwrap() / (pairs as f64).sqrt();
            rate_ok &= r.value <= cap;
            notes.push(format!("{name} n={pairs}: c01 {:.4} <= {cap:.4}", r.value));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let mut worst_gap = 0.0f64;
    for i in 0..20 {
        let d = [D::uniform(1.0).unwrap(), D::centered_gamma(2.0).unwrap(), D::gaussian(1.0).unwrap()][i % 3].clone();
        let mut a = vec![vec![0.0; 6]; 6];
        for k in 0..6 {
            for l in 0..k {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[k][l] = v;
                a[l][k] = v;
            }
        }
        let f = ChaosTensor::quadratic(&a, P::quantile(d.normalized())).unwrap();
        let generic = bound_multiple_nabla(&f).unwrap().value;
        let expanded = bound_quadratic_nabla(&a, &d).unwrap().term("nabla_n2_expanded").unwrap();
        worst_gap = worst_gap.max((generic - expanded).abs());
    }

    let mut mc_ok = true;
    for (name, d) in &laws {
        let a = pairwise_matrix(100);
        let c01 = bound_quadratic_nabla(&a, d).unwrap();
        let spec = SampleSpec::Quadratic { matrix: a, dist: d.clone() };
        let est = estimate_wasserstein(&spec, 200_000, SEED).unwrap();
        let check = CheckResult::from_estimate(c01, est);
        mc_ok &= check.holds;
        notes.push(format!("{name} MC W1 {:.4} +/- {:.4} vs c01 {:.4}", est.value, est.std_error, check.bound.value));
    }
    let pass = rate_ok && worst_gap <= 1e-9 && mc_ok;
    verdict(9, pass, format!("n=2 generic vs expanded max gap {worst_gap:.2e}; {}", notes.join("; ")));
}

#[test]
fn criterion_10_density_reconstruction() {
    let mut worst = 0.0f64;
    for d in [D::gaussian(1.0).unwrap(), D::centered_gamma(2.0).unwrap(), D::centered_beta(1.0).unwrap(), D::centered_beta(2.0).unwrap()] {
        for i in 0..=400 {
            let u = 1e-6 + (1.0 - 2e-6) * i as f64 / 400.0;
            let z = d.quantile(u).unwrap();
            worst = worst.max((d.density_from_kernel(z).unwrap() - d.density(z).unwrap()).abs());
        }
    }
    verdict(10, worst <= 1e-6, format!("sup err {worst:.2e}"));
}

#[test]
fn criterion_11_covariance_identity() {
    let tests: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
        (f64::sin, f64::cos),
        (f64::tanh, |x| 1.0 - x.tanh().powi(2)),
        (|x| x / (1.0 + x * x), |x| (1.0 - x * x) / (1.0 + x * x).powi(2)),
    ];
    let mut worst = 0.0f64;
    for d in [D::gaussian(1.5).unwrap(), D::centered_gamma(2.0).unwrap(), D::centered_beta(3.0).unwrap()] {
        for (g, dg) in tests {
            let lhs = d.expect(|x| x * g(x));
            let rhs = d.expect(|x| dg(x) * d.stein_kernel(x).unwrap());
            worst = worst.max((lhs - rhs).abs());
        }
    }
    verdict(11, worst <= 1e-6, format!("max err {worst:.2e}"));
}

/// Brute-force reading of the definitions on underlying sets.
fn comb_oracle(tuples: &[Vec<usize>], b: &[f64]) -> (f64, f64, f64) {
    let mass = |t: &[usize]| t.iter().map(|&i| b[i] * b[i]).product::<f64>();
    let set = |t: &[usize]| {
        let mut s = t.to_vec();
        s.sort();
        s
    };
    let sets: HashSet<Vec<usize>> = tuples.iter().map(|t| set(t)).collect();
    let mu: f64 = tuples.iter().map(|t| mass(t)).sum();
    let mut sharp = 0.0;
    for i in tuples {
        for j in tuples {
            if i.iter().any(|x| j.contains(x)) {
                continue;
            }
            let u: Vec<usize> = set(&[i.as_slice(), j.as_slice()].concat());
            let (si, sj) = (set(i), set(j));
            let ok = sets.iter().any(|sk| {
                if *sk == si || *sk == sj || !sk.iter().all(|x| u.contains(x)) {
                    return false;
                }
                let rest: Vec<usize> = u.iter().copied().filter(|x| !sk.contains(x)).collect();
                sets.contains(&rest)
            });
            if ok {
                sharp += mass(i) * mass(j);
            }
        }
    }
    let idx: HashSet<usize> = tuples.iter().flatten().copied().collect();
    let sup = idx
        .iter()
        .map(|j| tuples.iter().filter(|t| t.contains(j)).map(|t| mass(t)).sum::<f64>())
        .fold(0.0, f64::max);
    (mu, sharp, sup / mu)
}

#[test]
fn criterion_12_combinatorial_clt() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 12);
    let mut mismatches = 0;
    let mut largest = 0;
    for trial in 0..50 {
        let q = 2 + trial % 2;
        let universe = rng.gen_range(6..14);
        let max_base = if q == 2 { 100 } else { 33 };
        let b: Vec<f64> = (0..universe).map(|_| rng.gen_range(1..4) as f64).collect();
        let mut base = Vec::new();
        for _ in 0..rng.gen_range(2..=max_base) {
            let mut t: Vec<usize> = Vec::new();
            while t.len() < q {
                let x = rng.gen_range(0..universe);
                if !t.contains(&x) {
                    t.push(x);
                }
            }
            base.push(t);
        }
        let fam = IndexSetFamily::symmetric_closure(q, &base, b).unwrap();
        assert!(fam.tuples().len() <= 200);
        largest = largest.max(fam.tuples().len());
        let qs = comb_clt_quantities(&fam).unwrap();
        let (mu, sharp, sup) = comb_oracle(fam.tuples(), fam.weights());
        if (qs.mu_k, qs.mu_ksharp, qs.sup_ratio) != (mu, sharp, sup) {
            mismatches += 1;
        }
    }
    verdict(12, mismatches == 0, format!("50 families (largest |K| = {largest}), {mismatches} mismatches"));
}

#[test]
fn criterion_13_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("run1.csv"), dir.path().join("run2.csv"));
    bound_sweep(&a);
    bound_sweep(&b);
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    verdict(13, x == y && !x.is_empty(), format!("{} bytes per run, identical: {}", x.len(), x == y));
}
