//! Centered univariate laws with CDF, density, quantile, moments and the
//! Stein kernel `φ_X(y) = -(1/F'(y)) ∫_{-∞}^y x dF(x)`.

use std::sync::Arc;

use thiserror::Error;

use crate::quadrature::{integrate_with_points, QuadOptions};
use crate::scalar::{c, Real};
use crate::special::{
    binomial, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_pdf, normal_quantile, normal_sf,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid distribution table: {0}")]
    InvalidTable(String),
    #[error("argument {0} is outside the domain")]
    Domain(f64),
    #[error("{0} has no density, so the Stein kernel is undefined")]
    UnsupportedKernel(&'static str),
    #[error("{0} is discrete and has no density")]
    NoDensity(&'static str),
    #[error("Stein kernel vanishes at {0}")]
    SingularKernel(f64),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
}

/// Piecewise-linear CDF on a strictly increasing grid, recentered to mean 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<T> {
    xs: Vec<T>,
    cdf: Vec<T>,
    slopes: Vec<T>,
    shift: T,
}

impl<T: Real> Table<T> {
    /// Grid points after recentering.
    pub fn points(&self) -> &[T] {
        &self.xs
    }

    pub fn cdf_values(&self) -> &[T] {
        &self.cdf
    }

    /// Amount subtracted from the input grid to center the law.
    pub fn shift(&self) -> T {
        self.shift
    }

    fn segment(&self, x: T) -> Option<usize> {
        if x < self.xs[0] || x >= self.xs[self.xs.len() - 1] {
            return None;
        }
        // last i with xs[i] <= x
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        Some(i.min(self.slopes.len() - 1))
    }

    /// ∫_{x_i}^{b} x p(x) dx inside segment i.
    fn first_moment_piece(&self, i: usize, b: T) -> T {
        let a = self.xs[i];
        self.slopes[i] * (b * b - a * a) * c(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kind<T> {
    Gaussian { sigma: T },
    CenteredGamma { shape: T },
    CenteredBeta { alpha: T },
    UniformSym { half_width: T },
    NormalizedBernoulli { p: T },
    Tabulated(Arc<Table<T>>),
}

/// A centered law `scale · X_kind`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T> {
    kind: Kind<T>,
    scale: T,
}

fn positive<T: Real>(v: T, name: &str) -> Result<T, DistError> {
    if v > T::zero() && v.is_finite() {
        Ok(v)
    } else {
        Err(DistError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl<T: Real> Distribution<T> {
    pub fn gaussian(sigma: T) -> Result<Self, DistError> {
        Ok(Self::from_kind(Kind::Gaussian { sigma: positive(sigma, "sigma")? }))
    }

    /// `G - s` with `G ~ Gamma(s, 1)`.
    pub fn centered_gamma(shape: T) -> Result<Self, DistError> {
        Ok(Self::from_kind(Kind::CenteredGamma { shape: positive(shape, "shape")? }))
    }

    /// `V - α/(α+1)` with `V ~ Beta(α, 1)`, i.e. CDF `(α/(α+1) + x)^α`.
    pub fn centered_beta(alpha: T) -> Result<Self, DistError> {
        Ok(Self::from_kind(Kind::CenteredBeta { alpha: positive(alpha, "alpha")? }))
    }

    /// Uniform on `[-a, a]`.
    pub fn uniform(half_width: T) -> Result<Self, DistError> {
        Ok(Self::from_kind(Kind::UniformSym { half_width: positive(half_width, "half-width")? }))
    }

    /// `(B - p)/sqrt(p(1-p))` with `B ~ Bernoulli(p)`.
    pub fn normalized_bernoulli(p: T) -> Result<Self, DistError> {
        if !(p > T::zero() && p < T::one()) {
            return Err(DistError::InvalidParameter(format!("p must lie in (0,1), got {p}")));
        }
        Ok(Self::from_kind(Kind::NormalizedBernoulli { p }))
    }

    /// Piecewise-linear CDF through `(xs[i], cdf[i])`, shifted to mean zero.
    pub fn tabulated(xs: Vec<T>, cdf: Vec<T>) -> Result<Self, DistError> {
        if xs.len() != cdf.len() || xs.len() < 2 {
            return Err(DistError::InvalidTable("need at least two (x, cdf) rows".into()));
        }
        if xs.iter().chain(cdf.iter()).any(|v| !v.is_finite()) {
            return Err(DistError::InvalidTable("non-finite entry".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DistError::InvalidTable("x must be strictly increasing".into()));
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) {
            return Err(DistError::InvalidTable("cdf must be nondecreasing".into()));
        }
        let tol = c::<T>(1e-12).max(T::epsilon() * c(8.0));
        if cdf[0].abs() > tol || (cdf[cdf.len() - 1] - T::one()).abs() > tol {
            return Err(DistError::InvalidTable("cdf must run from 0 to 1".into()));
        }
        let mut cdf = cdf;
        let last = cdf.len() - 1;
        cdf[0] = T::zero();
        cdf[last] = T::one();
        let slopes: Vec<T> = xs
            .windows(2)
            .zip(cdf.windows(2))
            .map(|(x, f)| (f[1] - f[0]) / (x[1] - x[0]))
            .collect();
        let mean: T = xs
            .windows(2)
            .zip(&slopes)
            .map(|(x, &d)| d * (x[1] * x[1] - x[0] * x[0]) * c(0.5))
            .sum();
        let xs = xs.into_iter().map(|x| x - mean).collect();
        let table = Table { xs, cdf, slopes, shift: mean };
        Ok(Self::from_kind(Kind::Tabulated(Arc::new(table))))
    }

    fn from_kind(kind: Kind<T>) -> Self {
        Distribution { kind, scale: T::one() }
    }

    pub fn kind(&self) -> &Kind<T> {
        &self.kind
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// The law of `factor · X`.
    pub fn scaled(&self, factor: T) -> Result<Self, DistError> {
        let factor = positive(factor, "scale factor")?;
        Ok(Distribution { kind: self.kind.clone(), scale: self.scale * factor })
    }

    /// Rescaled to unit variance.
    pub fn normalized(&self) -> Self {
        let v = self.variance();
        Distribution { kind: self.kind.clone(), scale: self.scale / v.sqrt() }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Gaussian { .. } => "gaussian",
            Kind::CenteredGamma { .. } => "gamma",
            Kind::CenteredBeta { .. } => "beta",
            Kind::UniformSym { .. } => "uniform",
            Kind::NormalizedBernoulli { .. } => "bernoulli",
            Kind::Tabulated(_) => "tabulated",
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self.kind, Kind::NormalizedBernoulli { .. })
    }

    fn base_support(&self) -> (T, T) {
        match &self.kind {
            Kind::Gaussian { .. } => (T::neg_infinity(), T::infinity()),
            Kind::CenteredGamma { shape } => (-*shape, T::infinity()),
            Kind::CenteredBeta { alpha } => {
                let m = *alpha / (*alpha + T::one());
                (-m, T::one() - m)
            }
            Kind::UniformSym { half_width } => (-*half_width, *half_width),
            Kind::NormalizedBernoulli { p } => {
                let q = T::one() - *p;
                let sd = (*p * q).sqrt();
                (-*p / sd, q / sd)
            }
            Kind::Tabulated(t) => (t.xs[0], t.xs[t.xs.len() - 1]),
        }
    }

    /// `[lo, hi]`, possibly infinite.
    pub fn support(&self) -> (T, T) {
        let (lo, hi) = self.base_support();
        (lo * self.scale, hi * self.scale)
    }

    fn base_cdf(&self, x: T) -> T {
        let (lo, hi) = self.base_support();
        if x < lo {
            return T::zero();
        }
        if x >= hi {
            return T::one();
        }
        match &self.kind {
            Kind::Gaussian { sigma } => normal_cdf(x / *sigma),
            Kind::CenteredGamma { shape } => gamma_p(*shape, x + *shape),
            Kind::CenteredBeta { alpha } => (x - lo).powf(*alpha),
            Kind::UniformSym { half_width } => (x + *half_width) / (c::<T>(2.0) * *half_width),
            Kind::NormalizedBernoulli { p } => T::one() - *p,
            Kind::Tabulated(t) => {
                let i = t.segment(x).expect("inside support");
                t.cdf[i] + t.slopes[i] * (x - t.xs[i])
            }
        }
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: T) -> T {
        self.base_cdf(x / self.scale)
    }

    /// `P(X > x)`, accurate in the upper tail for the Gaussian and gamma kinds.
    pub fn sf(&self, x: T) -> T {
        let x = x / self.scale;
        match &self.kind {
            Kind::Gaussian { sigma } => normal_sf(x / *sigma),
            Kind::CenteredGamma { shape } if x > -*shape => gamma_q(*shape, x + *shape),
            _ => T::one() - self.base_cdf(x),
        }
    }

    fn base_pdf(&self, x: T) -> T {
        let (lo, hi) = self.base_support();
        if x < lo || x > hi {
            return T::zero();
        }
        match &self.kind {
            Kind::Gaussian { sigma } => normal_pdf(x / *sigma) / *sigma,
            Kind::CenteredGamma { shape } => {
                let g = x + *shape;
                if g <= T::zero() {
                    return if *shape < T::one() {
                        T::infinity()
                    } else if *shape == T::one() {
                        T::one()
                    } else {
                        T::zero()
                    };
                }
                ((*shape - T::one()) * g.ln() - g - ln_gamma(*shape)).exp()
            }
            Kind::CenteredBeta { alpha } => {
                let v = x - lo;
                if v <= T::zero() {
                    return if *alpha < T::one() {
                        T::infinity()
                    } else if *alpha == T::one() {
                        T::one()
                    } else {
                        T::zero()
                    };
                }
                *alpha * v.powf(*alpha - T::one())
            }
            Kind::UniformSym { half_width } => T::one() / (c::<T>(2.0) * *half_width),
            Kind::NormalizedBernoulli { .. } => T::zero(),
            Kind::Tabulated(t) => match t.segment(x) {
                Some(i) => t.slopes[i],
                None => t.slopes[t.slopes.len() - 1],
            },
        }
    }

    /// Lebesgue density `F'(x)`.
    pub fn density(&self, x: T) -> Result<T, DistError> {
        if !self.is_continuous() {
            return Err(DistError::NoDensity(self.name()));
        }
        Ok(self.pdf(x))
    }

    /// Density without the discreteness check (zero for discrete kinds).
    pub(crate) fn pdf(&self, x: T) -> T {
        self.base_pdf(x / self.scale) / self.scale
    }

    fn base_quantile(&self, u: T) -> T {
        let (lo, hi) = self.base_support();
        if u <= T::zero() {
            return lo;
        }
        if u >= T::one() {
            return hi;
        }
        match &self.kind {
            Kind::Gaussian { sigma } => *sigma * normal_quantile(u),
            Kind::CenteredGamma { shape } => gamma_quantile(*shape, u) - *shape,
            Kind::CenteredBeta { alpha } => u.powf(T::one() / *alpha) + lo,
            Kind::UniformSym { half_width } => *half_width * (c::<T>(2.0) * u - T::one()),
            Kind::NormalizedBernoulli { p } => {
                if u <= T::one() - *p {
                    lo
                } else {
                    hi
                }
            }
            Kind::Tabulated(t) => {
                // first segment whose upper cdf reaches u; flat pieces are skipped
                let j = t.cdf.partition_point(|&f| f < u).max(1);
                let i = j - 1;
                let d = t.slopes[i];
                if d > T::zero() {
                    (t.xs[i] + (u - t.cdf[i]) / d).min(t.xs[j])
                } else {
                    t.xs[j]
                }
            }
        }
    }

    /// Right-continuous inverse `inf{x : F(x) >= u}`.
    pub fn quantile(&self, u: T) -> Result<T, DistError> {
        if !(u >= T::zero() && u <= T::one()) {
            return Err(DistError::Domain(u.to_f64_lossy()));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: T) -> T {
        self.base_quantile(u) * self.scale
    }

    /// `E[X^k]`, exact for every kind.
    pub fn raw_moment(&self, k: u32) -> T {
        let m = match &self.kind {
            Kind::Gaussian { sigma } => {
                if k % 2 == 1 {
                    T::zero()
                } else {
                    // (k-1)!! σ^k
                    let mut acc = T::one();
                    let mut j = 1;
                    while j < k {
                        acc *= T::from_u32(j).unwrap();
                        j += 2;
                    }
                    acc * sigma.powi(k as i32)
                }
            }
            Kind::CenteredGamma { shape } => {
                let s = *shape;
                let mut total = T::zero();
                let mut rising = T::one();
                for j in 0..=k {
                    if j > 0 {
                        rising *= s + T::from_u32(j - 1).unwrap();
                    }
                    total += binomial::<T>(k as usize, j as usize)
                        * rising
                        * (-s).powi((k - j) as i32);
                }
                total
            }
            Kind::CenteredBeta { alpha } => {
                let a = *alpha;
                let m = a / (a + T::one());
                (0..=k)
                    .map(|j| {
                        binomial::<T>(k as usize, j as usize)
                            * (-m).powi((k - j) as i32)
                            * a
                            / (a + T::from_u32(j).unwrap())
                    })
                    .sum()
            }
            Kind::UniformSym { half_width } => {
                if k % 2 == 1 {
                    T::zero()
                } else {
                    half_width.powi(k as i32) / T::from_u32(k + 1).unwrap()
                }
            }
            Kind::NormalizedBernoulli { p } => {
                let (lo, hi) = self.base_support();
                *p * hi.powi(k as i32) + (T::one() - *p) * lo.powi(k as i32)
            }
            Kind::Tabulated(t) => {
                let kp = T::from_u32(k + 1).unwrap();
                t.xs
                    .windows(2)
                    .zip(&t.slopes)
                    .map(|(x, &d)| d * (x[1].powi(k as i32 + 1) - x[0].powi(k as i32 + 1)) / kp)
                    .sum()
            }
        };
        m * self.scale.powi(k as i32)
    }

    pub fn variance(&self) -> T {
        self.raw_moment(2)
    }

    /// `E|X|^p`. Closed forms for integer orders on every built-in kind,
    /// adaptive quadrature otherwise.
    pub fn abs_moment(&self, p: T) -> Result<T, DistError> {
        if !(p >= T::zero()) {
            return Err(DistError::Domain(p.to_f64_lossy()));
        }
        let integer = p.fract() == T::zero() && p <= c(64.0);
        let k = p.to_u32().unwrap_or(0);
        let m = match &self.kind {
            Kind::Gaussian { sigma } => {
                // σ^p 2^{p/2} Γ((p+1)/2) / sqrt(π)
                let two = c::<T>(2.0);
                (p * c::<T>(0.5) * two.ln() + ln_gamma((p + T::one()) * c(0.5))).exp()
                    / T::PI().sqrt()
                    * sigma.powf(p)
            }
            Kind::UniformSym { half_width } => half_width.powf(p) / (p + T::one()),
            Kind::NormalizedBernoulli { p: prob } => {
                let (lo, hi) = self.base_support();
                *prob * hi.abs().powf(p) + (T::one() - *prob) * lo.abs().powf(p)
            }
            Kind::Tabulated(t) => {
                let mut total = T::zero();
                let pp = p + T::one();
                for (x, &d) in t.xs.windows(2).zip(&t.slopes) {
                    let (a, b) = (x[0], x[1]);
                    let piece = |lo: T, hi: T| -> T {
                        // ∫_lo^hi |x|^p dx for lo, hi of one sign
                        if lo >= T::zero() {
                            (hi.powf(pp) - lo.powf(pp)) / pp
                        } else {
                            ((-lo).powf(pp) - (-hi).powf(pp)) / pp
                        }
                    };
                    let v = if a < T::zero() && b > T::zero() {
                        piece(a, T::zero()) + piece(T::zero(), b)
                    } else {
                        piece(a, b)
                    };
                    total += d * v;
                }
                total
            }
            Kind::CenteredGamma { shape } if integer => {
                let s = *shape;
                if k % 2 == 0 {
                    self.base_raw_moment(k)
                } else {
                    // E|X|^k = 2 E[X^k; X > 0] - E[X^k]
                    let mut upper = T::zero();
                    let mut rising = T::one();
                    for j in 0..=k {
                        if j > 0 {
                            rising *= s + T::from_u32(j - 1).unwrap();
                        }
                        let tail = gamma_q(s + T::from_u32(j).unwrap(), s);
                        upper += binomial::<T>(k as usize, j as usize)
                            * (-s).powi((k - j) as i32)
                            * rising
                            * tail;
                    }
                    c::<T>(2.0) * upper - self.base_raw_moment(k)
                }
            }
            Kind::CenteredBeta { alpha } if integer => {
                let a = *alpha;
                let m = a / (a + T::one());
                if k % 2 == 0 {
                    self.base_raw_moment(k)
                } else {
                    let mut upper = T::zero();
                    for j in 0..=k {
                        let aj = a + T::from_u32(j).unwrap();
                        // E[V^j; V > m] = α/(α+j) (1 - m^{α+j})
                        let tail = a / aj * (T::one() - m.powf(aj));
                        upper += binomial::<T>(k as usize, j as usize)
                            * (-m).powi((k - j) as i32)
                            * tail;
                    }
                    c::<T>(2.0) * upper - self.base_raw_moment(k)
                }
            }
            _ => {
                let unit = Distribution::from_kind(self.kind.clone());
                let r = unit.expect_with(|x| x.abs().powf(p), QuadOptions::tight());
                if !r.1 {
                    return Err(DistError::NoConvergence("absolute moment quadrature"));
                }
                r.0
            }
        };
        Ok(m * self.scale.powf(p))
    }

    fn base_raw_moment(&self, k: u32) -> T {
        Distribution::from_kind(self.kind.clone()).raw_moment(k)
    }

    /// `E[g(X)]` by quadrature (or a finite sum for discrete kinds).
    pub fn expect<F: FnMut(T) -> T>(&self, g: F) -> T {
        self.expect_with(g, QuadOptions::tight()).0
    }

    /// Like [`expect`](Self::expect) with explicit options; also reports convergence.
    pub fn expect_with<F: FnMut(T) -> T>(&self, mut g: F, opts: QuadOptions) -> (T, bool) {
        if let Kind::NormalizedBernoulli { p } = self.kind {
            let (lo, hi) = self.support();
            return ((T::one() - p) * g(lo) + p * g(hi), true);
        }
        let pts = self.breakpoints();
        self.integrate_density(g, &pts, opts)
    }

    /// Density at `lo + v`, computed from the offset so that singular lower
    /// endpoints keep full relative precision.
    fn pdf_offset(&self, v: T) -> T {
        let bv = v / self.scale;
        let d = match &self.kind {
            Kind::CenteredGamma { shape } => {
                if bv <= T::zero() {
                    return self.pdf(self.support().0);
                }
                ((*shape - T::one()) * bv.ln() - bv - ln_gamma(*shape)).exp()
            }
            Kind::CenteredBeta { alpha } => {
                if bv <= T::zero() || bv > T::one() {
                    return if bv <= T::zero() { self.pdf(self.support().0) } else { T::zero() };
                }
                *alpha * bv.powf(*alpha - T::one())
            }
            _ => return self.pdf(self.support().0 + v),
        };
        d / self.scale
    }

    /// `∫ h(x) p(x) dx` over `[pts[0], pts[last]]` with interior breakpoints.
    /// Ranges starting at a finite lower support end are integrated in offset
    /// coordinates.
    fn integrate_density<F: FnMut(T) -> T>(&self, mut h: F, pts: &[T], opts: QuadOptions) -> (T, bool) {
        let lo = self.support().0;
        let r = if lo.is_finite() && pts[0] == lo {
            let shifted: Vec<T> = pts.iter().map(|&p| p - lo).collect();
            integrate_with_points(
                |v| {
                    let d = self.pdf_offset(v);
                    // an infinite density only shows up at a singular endpoint
                    if d == T::zero() || !d.is_finite() {
                        T::zero()
                    } else {
                        h(lo + v) * d
                    }
                },
                &shifted,
                opts,
            )
        } else {
            integrate_with_points(
                |x| {
                    let d = self.pdf(x);
                    if d == T::zero() || !d.is_finite() {
                        T::zero()
                    } else {
                        h(x) * d
                    }
                },
                pts,
                opts,
            )
        };
        (r.value, r.converged)
    }

    /// Support endpoints with the natural interior breakpoints in between.
    pub(crate) fn breakpoints(&self) -> Vec<T> {
        let (lo, hi) = self.support();
        let mut pts = vec![lo];
        match &self.kind {
            Kind::Tabulated(t) => {
                for &x in &t.xs[1..t.xs.len() - 1] {
                    pts.push(x * self.scale);
                }
            }
            _ => {
                if lo < T::zero() && hi > T::zero() {
                    pts.push(T::zero());
                }
            }
        }
        pts.push(hi);
        pts
    }

    /// Stein kernel at `y`. Closed forms for the Gaussian, gamma, beta and
    /// uniform kinds, exact piecewise integration for tabulated laws. Returns
    /// `+∞` where the density vanishes.
    pub fn stein_kernel(&self, y: T) -> Result<T, DistError> {
        let s2 = self.scale * self.scale;
        let x = y / self.scale;
        let (lo, hi) = self.base_support();
        let v = match &self.kind {
            Kind::NormalizedBernoulli { .. } => {
                return Err(DistError::UnsupportedKernel(self.name()))
            }
            Kind::Gaussian { sigma } => *sigma * *sigma,
            _ if x <= lo || x >= hi => return Ok(T::infinity()),
            Kind::CenteredGamma { shape } => x + *shape,
            Kind::CenteredBeta { alpha } => (x - lo) * (hi - x) / (*alpha + T::one()),
            Kind::UniformSym { half_width } => (*half_width * *half_width - x * x) * c(0.5),
            Kind::Tabulated(t) => {
                let i = t.segment(x).expect("inside support");
                let d = t.slopes[i];
                if d <= T::min_positive_value() {
                    return Ok(T::infinity());
                }
                // use the side that avoids cancellation
                let tail = if x < T::zero() {
                    let full: T = (0..i).map(|j| t.first_moment_piece(j, t.xs[j + 1])).sum();
                    -(full + t.first_moment_piece(i, x))
                } else {
                    let rest: T = (i + 1..t.slopes.len())
                        .map(|j| t.first_moment_piece(j, t.xs[j + 1]))
                        .sum();
                    t.first_moment_piece(i, t.xs[i + 1]) - t.first_moment_piece(i, x) + rest
                };
                tail / d
            }
        };
        Ok(v * s2)
    }

    /// Stein kernel from its defining integral, evaluated by adaptive
    /// quadrature against the density. Independent of the closed forms.
    pub fn stein_kernel_quadrature(&self, y: T) -> Result<T, DistError> {
        if !self.is_continuous() {
            return Err(DistError::UnsupportedKernel(self.name()));
        }
        let d = self.pdf(y);
        if !(d > c::<T>(1e-300).max(T::min_positive_value())) || !d.is_finite() {
            return Ok(if d.is_infinite() { T::zero() } else { T::infinity() });
        }
        let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-13, max_intervals: 4000 };
        let (lo, hi) = self.support();
        let pts = self.breakpoints();
        let num = if y < T::zero() {
            let mut seg: Vec<T> = pts.iter().copied().filter(|&p| p > lo && p < y).collect();
            seg.insert(0, lo);
            seg.push(y);
            -self.integrate_density(|x| x, &seg, opts).0
        } else {
            let mut seg = vec![y];
            seg.extend(pts.iter().copied().filter(|&p| p > y && p < hi));
            seg.push(hi);
            self.integrate_density(|x| x, &seg, opts).0
        };
        Ok(num / d)
    }

    /// `E[φ_X(X)^2]`: closed forms for built-ins, quadrature otherwise.
    pub fn kernel_second_moment(&self) -> Result<T, DistError> {
        let s4 = self.scale.powi(4);
        let v = match &self.kind {
            Kind::NormalizedBernoulli { .. } => {
                return Err(DistError::UnsupportedKernel(self.name()))
            }
            Kind::Gaussian { sigma } => sigma.powi(4),
            Kind::CenteredGamma { shape } => *shape * (T::one() + *shape),
            Kind::CenteredBeta { alpha } => {
                let a = *alpha;
                let one = T::one();
                c::<T>(2.0) * a
                    / ((a + c(4.0)) * (a + c(3.0)) * (a + c(2.0)) * (a + one) * (a + one))
            }
            Kind::UniformSym { half_width } => c::<T>(2.0) * half_width.powi(4) / c(15.0),
            Kind::Tabulated(_) => {
                let unit = Distribution::from_kind(self.kind.clone());
                let (v, ok) = unit.expect_with(
                    |x| {
                        let k = unit.stein_kernel(x).unwrap_or(T::zero());
                        if k.is_finite() {
                            k * k
                        } else {
                            T::zero()
                        }
                    },
                    QuadOptions::tight(),
                );
                if !ok {
                    return Err(DistError::NoConvergence("kernel second moment"));
                }
                v
            }
        };
        Ok(v * s4)
    }

    /// `E[φ_X(X)^2]` by nested quadrature on the defining integral.
    pub fn kernel_second_moment_quadrature(&self) -> Result<T, DistError> {
        if !self.is_continuous() {
            return Err(DistError::UnsupportedKernel(self.name()));
        }
        let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-11, max_intervals: 4000 };
        let (v, ok) = self.expect_with(
            |x| {
                let k = self.stein_kernel_quadrature(x).unwrap_or(T::zero());
                if k.is_finite() {
                    k * k
                } else {
                    T::zero()
                }
            },
            opts,
        );
        if !ok {
            return Err(DistError::NoConvergence("kernel second moment"));
        }
        Ok(v)
    }

    /// `sup φ_X` over the support; infinite for the gamma kind.
    pub fn kernel_sup(&self) -> Result<T, DistError> {
        let s2 = self.scale * self.scale;
        let v = match &self.kind {
            Kind::NormalizedBernoulli { .. } => {
                return Err(DistError::UnsupportedKernel(self.name()))
            }
            Kind::Gaussian { sigma } => *sigma * *sigma,
            Kind::CenteredGamma { .. } => T::infinity(),
            Kind::CenteredBeta { alpha } => T::one() / (c::<T>(4.0) * (*alpha + T::one())),
            Kind::UniformSym { half_width } => *half_width * *half_width * c(0.5),
            Kind::Tabulated(t) => {
                // the kernel is a concave quadratic on each segment with positive slope
                let unit = Distribution::from_kind(self.kind.clone());
                let mut best = T::zero();
                for (i, x) in t.xs.windows(2).enumerate() {
                    if t.slopes[i] <= T::zero() {
                        return Ok(T::infinity());
                    }
                    for y in [x[0], (x[0] + x[1]) * c(0.5), x[1]] {
                        let y = y.max(t.xs[0]).min(t.xs[t.xs.len() - 1]);
                        let probe = if y <= t.xs[0] || y >= t.xs[t.xs.len() - 1] {
                            T::zero()
                        } else {
                            unit.stein_kernel(y).unwrap_or(T::zero())
                        };
                        best = best.max(probe);
                    }
                    // vertex of the quadratic when it lies inside
                    if x[0] < T::zero() && x[1] > T::zero() {
                        best = best.max(unit.stein_kernel(T::zero()).unwrap_or(T::zero()));
                    }
                }
                best
            }
        };
        Ok(v * s2)
    }

    /// Sub-Gaussian tail bound `P(X >= x) <= exp(-x^2 / (2 sup φ))` for `x >= 0`.
    pub fn tail_bound(&self, x: T) -> Result<T, DistError> {
        let cst = self.kernel_sup()?;
        if x <= T::zero() {
            return Ok(T::one());
        }
        Ok((-x * x / (c::<T>(2.0) * cst)).exp())
    }

    /// Mean by quadrature; zero up to rounding for every valid law.
    pub fn mean_by_quadrature(&self) -> T {
        self.expect(|x| x)
    }
}

/// Gamma(s, 1) quantile: Newton iteration safeguarded by a bisection bracket.
fn gamma_quantile<T: Real>(s: T, u: T) -> T {
    let upper = u > c(0.5);
    let resid = |g: T| -> T {
        if upper {
            (T::one() - u) - gamma_q(s, g)
        } else {
            gamma_p(s, g) - u
        }
    };
    let pdf = |g: T| ((s - T::one()) * g.ln() - g - ln_gamma(s)).exp();
    // initial guess
    let z = normal_quantile(u);
    let mut g = if s >= T::one() {
        let t = T::one() - T::one() / (c::<T>(9.0) * s) + z / (c::<T>(3.0) * s.sqrt());
        s * t * t * t
    } else {
        T::zero()
    };
    if !(g > T::zero()) {
        g = ((u.ln() + ln_gamma(s + T::one())) / s).exp();
    }
    if !(g > T::zero()) || !g.is_finite() {
        g = s;
    }
    let mut lo = T::zero();
    let mut hi = g.max(T::one());
    while resid(hi) < T::zero() {
        lo = hi;
        hi = hi * c(2.0);
        if !hi.is_finite() {
            return hi;
        }
    }
    if g <= lo || g >= hi {
        g = (lo + hi) * c(0.5);
    }
    let tol = T::epsilon() * c(4.0);
    for _ in 0..300 {
        let r = resid(g);
        if r == T::zero() {
            return g;
        }
        if r < T::zero() {
            lo = g;
        } else {
            hi = g;
        }
        let d = pdf(g);
        let mut next = if d > T::zero() && d.is_finite() { g - r / d } else { T::nan() };
        if !(next > lo && next < hi) {
            next = (lo + hi) * c(0.5);
        }
        let step = (next - g).abs();
        g = next;
        if step <= tol * g.abs() || hi - lo <= tol * hi {
            break;
        }
    }
    g
}

/// Density reconstructed from a Stein kernel:
/// `p(z) = E|X| / (2 φ(z)) · exp(-∫_0^z u/φ(u) du)`.
pub fn density_from_kernel<T, K>(kernel: K, abs_mean: T, z: T) -> Result<T, DistError>
where
    T: Real,
    K: Fn(T) -> T,
{
    let kz = kernel(z);
    if !(kz > T::zero()) || !kz.is_finite() {
        return Err(DistError::SingularKernel(z.to_f64_lossy()));
    }
    let mut bad = None;
    let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_intervals: 2000 };
    let r = integrate_with_points(
        |u: T| {
            let k = kernel(u);
            if !(k > T::zero()) || !k.is_finite() {
                bad = Some(u);
                return T::zero();
            }
            u / k
        },
        &[T::zero(), z],
        opts,
    );
    if let Some(u) = bad {
        return Err(DistError::SingularKernel(u.to_f64_lossy()));
    }
    Ok(abs_mean / (c::<T>(2.0) * kz) * (-r.value).exp())
}

impl<T: Real> Distribution<T> {
    /// [`density_from_kernel`] with this law's kernel and `E|X|`.
    pub fn density_from_kernel(&self, z: T) -> Result<T, DistError> {
        let abs_mean = self.abs_moment(T::one())?;
        self.stein_kernel(z)?;
        density_from_kernel(|u| self.stein_kernel(u).unwrap_or(T::nan()), abs_mean, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D = Distribution<f64>;

    #[test]
    fn spec_point_values() {
        let g = D::gaussian(1.0).unwrap();
        assert_eq!(g.cdf(0.0), 0.5);
        assert!(g.quantile(0.5).unwrap().abs() < 1e-15);
        let b = D::centered_beta(1.0).unwrap();
        assert!((b.cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((b.quantile(0.25).unwrap() + 0.25).abs() < 1e-15);
        let u = D::uniform(1.0).unwrap();
        assert_eq!(u.cdf(0.5), 0.75);
        assert_eq!(u.quantile(0.75).unwrap(), 0.5);
        assert!(u.quantile(1.5).is_err());
    }

    #[test]
    fn kernels_and_moments() {
        let gm = D::centered_gamma(2.0).unwrap();
        assert_eq!(gm.stein_kernel(0.0).unwrap(), 2.0);
        let b = D::centered_beta(1.0).unwrap();
        assert!((b.stein_kernel(0.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((b.kernel_second_moment().unwrap() - 1.0 / 120.0).abs() < 1e-15);
        let u = D::uniform(1.0).unwrap();
        assert!((u.abs_moment(3.0).unwrap() - 0.25).abs() < 1e-15);
        let bern = D::normalized_bernoulli(0.3).unwrap();
        let want = (1.0 - 2.0 * 0.3 * 0.7) / (0.3f64 * 0.7).sqrt();
        assert!((bern.abs_moment(3.0).unwrap() - want).abs() < 1e-14);
        assert!(matches!(bern.stein_kernel(0.0), Err(DistError::UnsupportedKernel(_))));
        assert!(bern.density(0.0).is_err());
    }

    #[test]
    fn gamma_abs_first_moment() {
        for &s in &[0.5f64, 1.0, 2.0, 3.7] {
            let d = D::centered_gamma(s).unwrap();
            let want = 2.0 * (s * s.ln() - s - ln_gamma(s)).exp();
            assert!((d.abs_moment(1.0).unwrap() - want).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn tabulated_uniform_matches_builtin() {
        let t = D::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0]).unwrap();
        let u = D::uniform(1.0).unwrap();
        for &y in &[-0.9, -0.3, 0.0, 0.4, 0.8] {
            assert!((t.stein_kernel(y).unwrap() - u.stein_kernel(y).unwrap()).abs() < 1e-14);
            assert!((t.cdf(y) - u.cdf(y)).abs() < 1e-15);
        }
        assert!((t.kernel_second_moment().unwrap() - 2.0 / 15.0).abs() < 1e-13);
        assert!(D::tabulated(vec![0.0, 1.0], vec![0.0, 0.9]).is_err());
        assert!(D::tabulated(vec![1.0, 0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn scaling_rules() {
        let b = D::centered_beta(2.0).unwrap();
        let n = b.normalized();
        assert!((n.variance() - 1.0).abs() < 1e-14);
        let c = n.scale();
        let y = 0.1;
        let direct = n.stein_kernel(y).unwrap();
        let via = c * c * b.stein_kernel(y / c).unwrap();
        assert!((direct - via).abs() < 1e-14);
        assert!((n.kernel_second_moment().unwrap()
            - b.kernel_second_moment().unwrap() / b.variance().powi(2))
        .abs()
            < 1e-12);
    }
}
