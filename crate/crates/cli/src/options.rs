//! Command-line options and TOML experiment files.
//!
//! Every option can come from either source; flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Deserialize;
use steinbench::chaos::CellProfile;
use steinbench::distributions::Distribution;
use steinbench::io::load_tabulated;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tabulate the Stein kernel of a law.
    Kernel,
    /// Evaluate bound formulas.
    Bound,
    /// Check bounds against Monte Carlo or convolution estimates.
    Verify,
    /// Third-moment versus kernel bound curves.
    Compare,
    /// Check the multiplication formula and the isometry on sampled paths.
    MultiplyCheck,
}

impl Command {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "kernel" => Command::Kernel,
            "bound" => Command::Bound,
            "verify" => Command::Verify,
            "compare" => Command::Compare,
            "multiply-check" => Command::MultiplyCheck,
            _ => bail!("unknown command `{s}`"),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Options {
    /// Formula id(s), comma separated, or `all`.
    #[arg(long, global = true)]
    pub formula: Option<String>,
    /// gaussian, uniform, gamma, beta, bernoulli or tabulated.
    #[arg(long, global = true)]
    pub dist: Option<String>,
    /// Gamma shape s.
    #[arg(long, global = true)]
    pub shape: Option<f64>,
    /// Beta parameter α.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Gaussian standard deviation, or uniform half-width.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Bernoulli success probability.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Shift of the gamma target (defaults to the gamma shape).
    #[arg(long, global = true)]
    pub nu: Option<f64>,
    /// Number of summands, cells, or matched pairs.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// `x,cdf` table for the tabulated law.
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// `k,l,value` coefficient matrix (1-based).
    #[arg(long, global = true)]
    pub matrix: Option<PathBuf>,
    /// `k1,...,kn,value` tensor (1-based); give twice for two tensors.
    #[arg(long, global = true)]
    #[serde(default)]
    pub tensor: Vec<PathBuf>,
    /// `k,b` weights (1-based): cell weights or Bernoulli coefficients.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// `i1,...,iq` index tuples for the combinatorial CLT.
    #[arg(long, global = true)]
    pub sets: Option<PathBuf>,
    /// gamma-ratio or beta-ratio.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Grid `lo:hi:count`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Monte Carlo sample size.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output CSV (standard output when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// An experiment file: the options plus the command to run.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<String>,
    #[serde(flatten)]
    options: Options,
}

impl Options {
    /// Fills every unset option from `file`.
    fn or(self, file: Options) -> Options {
        Options {
            formula: self.formula.or(file.formula),
            dist: self.dist.or(file.dist),
            shape: self.shape.or(file.shape),
            alpha: self.alpha.or(file.alpha),
            sigma: self.sigma.or(file.sigma),
            p: self.p.or(file.p),
            nu: self.nu.or(file.nu),
            n: self.n.or(file.n),
            table: self.table.or(file.table),
            matrix: self.matrix.or(file.matrix),
            tensor: if self.tensor.is_empty() { file.tensor } else { self.tensor },
            weights: self.weights.or(file.weights),
            sets: self.sets.or(file.sets),
            family: self.family.or(file.family),
            grid: self.grid.or(file.grid),
            m: self.m.or(file.m),
            seed: self.seed.or(file.seed),
            out: self.out.or(file.out),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn n(&self) -> Result<usize> {
        match self.n {
            Some(0) => bail!("--n must be positive"),
            Some(n) => Ok(n),
            None => bail!("--n is required"),
        }
    }

    pub fn distribution(&self) -> Result<Distribution<f64>> {
        let name = self.dist.as_deref().unwrap_or("uniform");
        let need = |v: Option<f64>, flag: &str| v.with_context(|| format!("--dist {name} needs --{flag}"));
        let d = match name {
            "gaussian" | "normal" => Distribution::gaussian(self.sigma.unwrap_or(1.0)),
            "uniform" => Distribution::uniform(self.sigma.unwrap_or(1.0)),
            "gamma" => Distribution::centered_gamma(need(self.shape, "shape")?),
            "beta" => Distribution::centered_beta(need(self.alpha, "alpha")?),
            "bernoulli" => Distribution::normalized_bernoulli(need(self.p, "p")?),
            "tabulated" => {
                let path = self.table.as_deref().context("--dist tabulated needs --table")?;
                return Ok(load_tabulated(path)?);
            }
            other => bail!("unknown distribution `{other}`"),
        };
        Ok(d?)
    }

    /// Quantile profile of the law rescaled to unit variance.
    pub fn profile(&self) -> Result<CellProfile<f64>> {
        let d = self.distribution()?;
        if !d.is_continuous() {
            bail!("chaos profiles need a continuous law");
        }
        Ok(CellProfile::quantile(d.normalized()))
    }

    /// `lo:hi:count`, evenly spaced with both ends included.
    pub fn grid(&self) -> Result<Option<Vec<f64>>> {
        let Some(spec) = self.grid.as_deref() else { return Ok(None) };
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, hi, count] = parts[..] else { bail!("--grid expects lo:hi:count, got `{spec}`") };
        let lo: f64 = lo.parse().with_context(|| format!("bad grid start `{lo}`"))?;
        let hi: f64 = hi.parse().with_context(|| format!("bad grid end `{hi}`"))?;
        let count: usize = count.parse().with_context(|| format!("bad grid count `{count}`"))?;
        if count == 0 || !(lo.is_finite() && hi.is_finite()) || (count > 1 && hi < lo) {
            bail!("invalid grid `{spec}`");
        }
        Ok(Some(if count == 1 {
            vec![lo]
        } else {
            (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
        }))
    }
}

/// Merges flags with an optional experiment file and settles the command.
pub fn resolve(command: Option<Command>, flags: Options, config: Option<&Path>) -> Result<(Command, Options)> {
    let (file_command, file_opts) = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new(""));
            // file paths in an experiment file are relative to the file
            let mut o = cfg.options;
            for p in [&mut o.table, &mut o.matrix, &mut o.weights, &mut o.sets].into_iter().flatten() {
                *p = base.join(&*p);
            }
            for p in &mut o.tensor {
                *p = base.join(&*p);
            }
            (cfg.command.as_deref().map(Command::parse).transpose()?, o)
        }
        None => (None, Options::default()),
    };
    let command = command.or(file_command).context("no command given (use a subcommand or `command` in --config)")?;
    Ok((command, flags.or(file_opts)))
}
