use std::io::Write;

use anyhow::{bail, Context, Result};
use steinbench::bounds::*;
use steinbench::chaos::{CellProfile, ChaosTensor};
use steinbench::distributions::Distribution;
use steinbench::io::{
    bounds_table, curves_table, fmt_f64, format_table, load_family, load_matrix, load_tensor, load_weights, results_table,
    write_table, ResultRow,
};
use steinbench::verify::*;

use crate::options::{Command, Options};

type D = Distribution<f64>;
type Report = BoundReport<f64>;

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

pub fn run(command: Command, opts: &Options) -> Result<Outcome> {
    match command {
        Command::Kernel => kernel(opts),
        Command::Bound => bound(opts),
        Command::Verify => verify(opts),
        Command::Compare => compare(opts),
        Command::MultiplyCheck => multiply_check(opts),
    }
}

pub fn list_formulas(opts: &Options) -> Result<()> {
    let mut rows = vec![vec!["formula_id".to_string(), "reference".to_string()]];
    rows.extend(FormulaId::all().iter().map(|f| vec![f.as_str().to_string(), f.reference().to_string()]));
    emit(opts, &rows)
}

fn emit(opts: &Options, rows: &[Vec<String>]) -> Result<()> {
    match &opts.out {
        Some(path) => write_table(path, rows)?,
        None => std::io::stdout().lock().write_all(&format_table(rows)?)?,
    }
    log::info!("{} rows written", rows.len().saturating_sub(1));
    Ok(())
}

fn formulas(opts: &Options) -> Result<Vec<FormulaId>> {
    let spec = opts.formula.as_deref().context("--formula is required")?;
    if spec == "all" {
        return Ok(FormulaId::all().to_vec());
    }
    spec.split(',').map(|s| s.trim().parse::<FormulaId>().map_err(Into::into)).collect()
}

fn kernel(opts: &Options) -> Result<Outcome> {
    let d = opts.distribution()?;
    let ys = match opts.grid()? {
        Some(g) => g,
        None => (1..=21).map(|i| d.quantile(i as f64 / 22.0)).collect::<Result<_, _>>()?,
    };
    let mut rows = vec![vec!["dist".to_string(), "y".to_string(), "kernel".to_string()]];
    for y in ys {
        rows.push(vec![d.name().to_string(), fmt_f64(y), fmt_f64(d.stein_kernel(y)?)]);
    }
    emit(opts, &rows)?;
    Ok(Outcome::Success)
}

/// `n` copies of the law rescaled so that the sum has unit variance.
fn normalized_summands(opts: &Options) -> Result<Vec<D>> {
    let n = opts.n()?;
    let x = opts.distribution()?.normalized().scaled(1.0 / (n as f64).sqrt())?;
    Ok(vec![x; n])
}

/// The `--tensor` file, or the normalized first-order tensor on `--n` cells.
fn first_tensor(opts: &Options, profile: CellProfile<f64>) -> Result<ChaosTensor<f64>> {
    match opts.tensor.first() {
        Some(path) => Ok(load_tensor(path, profile)?),
        None => {
            let n = opts.n()?;
            Ok(ChaosTensor::first_order(&vec![1.0 / (n as f64).sqrt(); n], profile))
        }
    }
}

/// The `--matrix` file, or `--n` matched pairs normalized to unit variance.
fn quadratic_matrix(opts: &Options) -> Result<Vec<Vec<f64>>> {
    if let Some(path) = &opts.matrix {
        return Ok(load_matrix(path)?);
    }
    let pairs = opts.n()?;
    let w = 1.0 / (2.0 * (pairs as f64).sqrt());
    let mut a = vec![vec![0.0; 2 * pairs]; 2 * pairs];
    for k in 0..pairs {
        a[2 * k][2 * k + 1] = w;
        a[2 * k + 1][2 * k] = w;
    }
    Ok(a)
}

fn bernoulli_inputs(opts: &Options) -> Result<(Vec<f64>, f64)> {
    let p = opts.p.context("bernoulli-weighted needs --p")?;
    let alphas = match &opts.weights {
        Some(path) => {
            let alphas = load_weights(path)?;
            if alphas.is_empty() {
                bail!("{}: no weights", path.display());
            }
            alphas
        }
        None => {
            let n = opts.n()?;
            vec![1.0 / (n as f64).sqrt(); n]
        }
    };
    Ok((alphas, p))
}

fn reports_for(formula: FormulaId, opts: &Options) -> Result<Vec<Report>> {
    use FormulaId::*;
    let dual = |d: DualBound<f64>| vec![d.w1, d.tv];
    Ok(match formula {
        ThirdMoment => vec![bound_sum_third_moment(&normalized_summands(opts)?)?],
        NormalizedSum => vec![bound_sum_normalized(&normalized_summands(opts)?)?],
        KernelSum => dual(bound_sum_kernel(&normalized_summands(opts)?)?),
        GenericKernel => {
            let d = opts.distribution()?;
            dual(bound_generic_kernel(d.variance(), d.kernel_second_moment()?)?)
        }
        GammaTarget => {
            let d = opts.distribution()?;
            let nu = match (opts.nu, opts.shape) {
                (Some(nu), _) => nu,
                (None, Some(s)) if d.name() == "gamma" => s,
                _ => bail!("gamma-target needs --nu"),
            };
            vec![bound_gamma_target(&d, nu)?]
        }
        SingleNabla => vec![bound_single_integral_nabla(&first_tensor(opts, opts.profile()?)?)?],
        SingleD => dual(bound_single_integral_d(&first_tensor(opts, opts.profile()?)?)?),
        BernoulliWeighted => {
            let (alphas, p) = bernoulli_inputs(opts)?;
            vec![bound_bernoulli_weighted(&alphas, &vec![p; alphas.len()])?]
        }
        MultipleNabla => {
            let path = opts.tensor.first().context("multiple-nabla needs --tensor")?;
            vec![bound_multiple_nabla(&load_tensor(path, opts.profile()?)?)?]
        }
        QuadraticNabla => vec![bound_quadratic_nabla(&quadratic_matrix(opts)?, &opts.distribution()?)?],
        QuadraticD => dual(bound_quadratic_d(&quadratic_matrix(opts)?, &opts.distribution()?)?),
        CombClt => {
            let path = opts.sets.as_deref().context("comb-clt needs --sets")?;
            let fam = load_family(path, opts.weights.as_deref())?;
            vec![bound_comb_clt(&fam, &opts.distribution()?)?]
        }
    })
}

fn bound(opts: &Options) -> Result<Outcome> {
    let mut reports = Vec::new();
    for f in formulas(opts)? {
        reports.extend(reports_for(f, opts).with_context(|| format!("formula {f}"))?);
    }
    emit(opts, &bounds_table(&reports))?;
    Ok(Outcome::Success)
}

/// What to sample to check `formula`, and the `n` column of the results.
fn sample_spec(formula: FormulaId, opts: &Options) -> Result<(SampleSpec, usize)> {
    use FormulaId::*;
    Ok(match formula {
        ThirdMoment | NormalizedSum | KernelSum => {
            let dists = normalized_summands(opts)?;
            let n = dists.len();
            (SampleSpec::Sum(dists), n)
        }
        GenericKernel => (SampleSpec::Sum(vec![opts.distribution()?]), 1),
        SingleNabla | SingleD => {
            let f = first_tensor(opts, opts.profile()?)?;
            let n = f.cell_count();
            (SampleSpec::Chaos(f), n)
        }
        MultipleNabla => {
            let path = opts.tensor.first().context("multiple-nabla needs --tensor")?;
            let f = load_tensor(path, opts.profile()?)?;
            let n = f.cell_count();
            (SampleSpec::Chaos(f), n)
        }
        BernoulliWeighted => {
            let (alphas, p) = bernoulli_inputs(opts)?;
            let x = D::normalized_bernoulli(p)?;
            let dists = alphas.iter().map(|&a| x.scaled(a)).collect::<Result<Vec<_>, _>>()?;
            let n = dists.len();
            (SampleSpec::Sum(dists), n)
        }
        QuadraticNabla | QuadraticD => {
            let matrix = quadratic_matrix(opts)?;
            let n = matrix.len();
            (SampleSpec::Quadratic { matrix, dist: opts.distribution()? }, n)
        }
        GammaTarget | CombClt => bail!("formula {formula} has no sample-based check"),
    })
}

fn verify(opts: &Options) -> Result<Outcome> {
    let m = opts.m.unwrap_or(200_000);
    if m < 1000 {
        bail!("--m must be at least 1000 for verify");
    }
    let seed = opts.seed();
    let dist_name = opts.dist.clone().unwrap_or_else(|| "uniform".into());
    let mut rows = Vec::new();
    for f in formulas(opts)? {
        let (spec, n) = sample_spec(f, opts)?;
        let reports = reports_for(f, opts)?;
        let needs_w1 = reports.iter().any(|r| r.metric == Metric::W1);
        let estimate = if needs_w1 { Some(estimate_wasserstein(&spec, m, seed)?) } else { None };
        for r in reports {
            let metric = r.metric;
            let check = match (metric, estimate) {
                (Metric::W1, Some(est)) => CheckResult::from_estimate(r, est),
                (Metric::TV, _) if matches!(spec, SampleSpec::Sum(_)) => check_bound(&r, &spec, m, seed)?,
                (Metric::TV, _) => {
                    log::warn!("{f}: no TV estimator for this input, TV report skipped");
                    continue;
                }
                _ => bail!("{f}: no estimator for metric {}", r.metric),
            };
            rows.push(ResultRow::from_check(&format!("verify-{}", metric.as_str().to_lowercase()), n, &dist_name, &check));
        }
    }
    emit(opts, &results_table(&rows))?;
    Ok(if rows.iter().all(|r| r.holds) { Outcome::Success } else { Outcome::CheckFailed })
}

fn compare(opts: &Options) -> Result<Outcome> {
    let family: CurveFamily = opts.family.as_deref().context("--family is required")?.parse()?;
    let grid = opts.grid()?.unwrap_or_else(|| (0..100).map(|i| 0.1 + 9.9 * i as f64 / 99.0).collect());
    let rows = comparison_curves(family, &grid)?;
    if rows.iter().any(|r| !r.converged) {
        log::warn!("some curve points did not converge");
    }
    emit(opts, &curves_table(family, &rows))?;
    Ok(Outcome::Success)
}

fn multiply_check(opts: &Options) -> Result<Outcome> {
    let profile = opts.profile()?;
    let f = first_tensor(opts, profile.clone())?;
    let g = match opts.tensor.get(1) {
        Some(path) => load_tensor(path, profile)?,
        None => f.clone(),
    };
    let m = opts.m.unwrap_or(100_000);
    let seed = opts.seed();
    let mult = verify_multiplication(&f, &g, m, seed)?;
    let iso_f = verify_isometry(&f, m, seed)?;
    let iso_g = verify_isometry(&g, m, seed)?;
    let mut checks = vec![
        ("path_error", mult.max_abs_path_error, mult.max_abs_path_error <= 1e-9),
        ("multiplication_z", mult.mc_zscore, mult.mc_zscore.abs() <= 4.0),
        ("isometry_z_f", iso_f.zscore, iso_f.holds),
        ("isometry_z_g", iso_g.zscore, iso_g.holds),
    ];
    if f.order() != g.order() {
        let cov = verify_orthogonality(&f, &g, m, seed)?;
        checks.push(("orthogonality_z", cov.zscore, cov.zscore.abs() <= 3.0));
    }
    let mut rows = vec![vec!["check".to_string(), "value".to_string(), "holds".to_string(), "seed".to_string()]];
    rows.extend(checks.iter().map(|(name, v, ok)| vec![name.to_string(), fmt_f64(*v), ok.to_string(), seed.to_string()]));
    emit(opts, &rows)?;
    Ok(if checks.iter().all(|c| c.2) { Outcome::Success } else { Outcome::CheckFailed })
}
