//! Chaos integrands as sums of separable terms, multiple stochastic
//! integrals over uniform sequences, contractions and the multiplication
//! formula.
//!
//! Cell `k` is the interval `[2k, 2k+2)`. A term is a sparse coefficient
//! tensor `a(k_1, ..., k_n)` together with one [`CellProfile`] per axis, and
//! stands for the function `Σ a(k) Π_j p_j(x_j - 2k_j)` with `x_j` in cell `k_j`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::distributions::{Distribution, Kind};
use crate::quadrature::{integrate_with_points, QuadOptions};
use crate::scalar::{c, Real};
use crate::special::{binomial, factorial};

/// Largest order accepted by [`symmetrize`].
pub const MAX_SYMMETRIZE_ORDER: usize = 6;
/// Largest input order accepted by [`multiply`].
pub const MAX_MULTIPLY_ORDER: usize = 3;

const CANONICAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChaosError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("order {order} exceeds the supported maximum {max}")]
    Capacity { order: usize, max: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub enum ProfileNode<T> {
    /// `t ↦ F^{-1}(t/2)`.
    Quantile(Distribution<T>),
    /// `t ↦ Σ c_i t^i`.
    Polynomial(Vec<T>),
    Product(CellProfile<T>, CellProfile<T>),
}

struct ProfileInner<T> {
    node: ProfileNode<T>,
    id: u64,
    average: T,
    inner_products: RwLock<HashMap<u64, T>>,
}

/// A function on one cell, in the local coordinate `t ∈ [0, 2)`.
#[derive(Clone)]
pub struct CellProfile<T> {
    inner: Arc<ProfileInner<T>>,
}

impl<T: fmt::Debug> fmt::Debug for CellProfile<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.inner.node.fmt(f)
    }
}

impl<T: Real> PartialEq for CellProfile<T> {
    fn eq(&self, other: &Self) -> bool {
        if Arc::ptr_eq(&self.inner, &other.inner) {
            return true;
        }
        match (&self.inner.node, &other.inner.node) {
            (ProfileNode::Quantile(a), ProfileNode::Quantile(b)) => a == b,
            (ProfileNode::Polynomial(a), ProfileNode::Polynomial(b)) => a == b,
            (ProfileNode::Product(a1, b1), ProfileNode::Product(a2, b2)) => a1 == a2 && b1 == b2,
            _ => false,
        }
    }
}

/// Product form of a profile: polynomial in `t` times powers of quantiles of
/// unit-scale laws.
struct Flat<T> {
    poly: Vec<T>,
    factors: Vec<(Distribution<T>, i32)>,
}

fn poly_mul<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval<T: Real>(cs: &[T], t: T) -> T {
    cs.iter().rev().fold(T::zero(), |acc, &ci| acc * t + ci)
}

impl<T: Real> CellProfile<T> {
    fn build(node: ProfileNode<T>) -> Self {
        let average = average_of(&node);
        CellProfile {
            inner: Arc::new(ProfileInner {
                node,
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                average,
                inner_products: RwLock::new(HashMap::new()),
            }),
        }
    }

    /// Quantile profile `t ↦ F^{-1}(t/2)` of a centered law; canonical.
    pub fn quantile(dist: Distribution<T>) -> Self {
        Self::build(ProfileNode::Quantile(dist))
    }

    /// Polynomial `Σ coeffs[i] t^i` in the local coordinate.
    pub fn polynomial(coeffs: Vec<T>) -> Self {
        Self::build(ProfileNode::Polynomial(coeffs))
    }

    /// `√3 (t - 1)`: the normalized uniform profile, with `½∫ p² = 1`.
    pub fn unit_linear() -> Self {
        let r3 = c::<T>(3.0).sqrt();
        Self::polynomial(vec![-r3, r3])
    }

    /// Pointwise product.
    pub fn product(a: &CellProfile<T>, b: &CellProfile<T>) -> Self {
        Self::build(ProfileNode::Product(a.clone(), b.clone()))
    }

    pub fn node(&self) -> &ProfileNode<T> {
        &self.inner.node
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    /// Value at local coordinate `t ∈ [0, 2]`.
    pub fn value(&self, t: T) -> T {
        match &self.inner.node {
            ProfileNode::Quantile(d) => d.quantile_unchecked(t * c(0.5)),
            ProfileNode::Polynomial(cs) => poly_eval(cs, t),
            ProfileNode::Product(a, b) => a.value(t) * b.value(t),
        }
    }

    /// Cell average `½∫_0^2 p(t) dt`.
    pub fn average(&self) -> T {
        self.inner.average
    }

    /// Whether the cell average vanishes (within 1e-10).
    pub fn is_canonical(&self) -> bool {
        self.inner.average.abs() < c(CANONICAL_TOL)
    }

    /// `½∫_0^2 p q dt`, cached per profile pair.
    pub fn inner_product(&self, other: &CellProfile<T>) -> T {
        let (a, b) = if self.id() <= other.id() { (self, other) } else { (other, self) };
        if let Some(&v) = a.inner.inner_products.read().expect("cache lock").get(&b.id()) {
            return v;
        }
        let v = CellProfile::product(a, b).average();
        a.inner.inner_products.write().expect("cache lock").insert(b.id(), v);
        v
    }

    /// `½∫_0^2 p(t)^2 dt`.
    pub fn norm_sq(&self) -> T {
        self.inner_product(self)
    }

    /// `½∫_0^2 h(p(t)) dt`.
    pub fn cell_mean_of<F: Fn(T) -> T>(&self, h: F) -> T {
        match &self.inner.node {
            ProfileNode::Quantile(d) => d.expect(h),
            _ => {
                let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-11, max_intervals: 4000 };
                let mut pts = vec![T::zero()];
                if let ProfileNode::Polynomial(cs) = &self.inner.node {
                    pts.extend(real_roots_in(cs, T::zero(), c(2.0)));
                }
                pts.push(c(2.0));
                pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                pts.dedup();
                integrate_with_points(|t| h(self.value(t)), &pts, opts).value * c(0.5)
            }
        }
    }

    /// Polynomial coefficients if the profile is a polynomial (possibly a
    /// product of polynomials).
    pub fn as_polynomial(&self) -> Option<Vec<T>> {
        match &self.inner.node {
            ProfileNode::Polynomial(cs) => Some(cs.clone()),
            ProfileNode::Product(a, b) => Some(poly_mul(&a.as_polynomial()?, &b.as_polynomial()?)),
            ProfileNode::Quantile(_) => None,
        }
    }
}

fn flatten<T: Real>(node: &ProfileNode<T>) -> Flat<T> {
    match node {
        ProfileNode::Polynomial(cs) => Flat { poly: cs.clone(), factors: Vec::new() },
        ProfileNode::Quantile(d) => {
            let unit = d.scaled(T::one() / d.scale()).expect("positive scale");
            Flat { poly: vec![d.scale()], factors: vec![(unit, 1)] }
        }
        ProfileNode::Product(a, b) => {
            let fa = flatten(a.node());
            let fb = flatten(b.node());
            let poly = poly_mul(&fa.poly, &fb.poly);
            let mut factors = fa.factors;
            for (d, k) in fb.factors {
                match factors.iter_mut().find(|(e, _)| *e == d) {
                    Some(slot) => slot.1 += k,
                    None => factors.push((d, k)),
                }
            }
            Flat { poly, factors }
        }
    }
}

fn average_of<T: Real>(node: &ProfileNode<T>) -> T {
    let flat = flatten(node);
    let poly = &flat.poly;
    if poly.iter().all(|&x| x == T::zero()) {
        return T::zero();
    }
    // ∫_0^1 (2u)^i du = 2^i / (i+1)
    let poly_mean = |cs: &[T]| -> T {
        cs.iter()
            .enumerate()
            .map(|(i, &ci)| ci * c::<T>(2.0).powi(i as i32) / T::from_usize_lossy(i + 1))
            .sum()
    };
    match flat.factors.as_slice() {
        [] => poly_mean(poly),
        [(d, k)] if poly.len() == 1 => poly[0] * d.raw_moment(*k as u32),
        [(d, k)] => {
            if let Kind::NormalizedBernoulli { p } = d.kind() {
                // quantile is constant on (0, 1-p] and (1-p, 1)
                let (lo, hi) = d.support();
                let cut = T::one() - *p;
                let anti = |u: T| -> T {
                    poly.iter()
                        .enumerate()
                        .map(|(i, &ci)| {
                            ci * c::<T>(2.0).powi(i as i32) * u.powi(i as i32 + 1)
                                / T::from_usize_lossy(i + 1)
                        })
                        .sum()
                };
                lo.powi(*k) * anti(cut) + hi.powi(*k) * (anti(T::one()) - anti(cut))
            } else {
                let k = *k;
                d.expect(|x| x.powi(k) * poly_eval(poly, c::<T>(2.0) * d.cdf(x)))
            }
        }
        _ => {
            let mut pts = vec![T::zero()];
            for (d, _) in &flat.factors {
                if let Kind::NormalizedBernoulli { p } = d.kind() {
                    pts.push(T::one() - *p);
                }
            }
            pts.push(T::one());
            pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            pts.dedup();
            let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-11, max_intervals: 4000 };
            integrate_with_points(
                |u: T| {
                    let mut v = poly_eval(poly, c::<T>(2.0) * u);
                    for (d, k) in &flat.factors {
                        v *= d.quantile_unchecked(u).powi(*k);
                    }
                    v
                },
                &pts,
                opts,
            )
            .value
        }
    }
}

/// Sign changes of a polynomial on `[a, b]`, located by bisection on a grid.
fn real_roots_in<T: Real>(cs: &[T], a: T, b: T) -> Vec<T> {
    let steps = 64;
    let mut roots = Vec::new();
    let h = (b - a) / T::from_usize_lossy(steps);
    let mut x0 = a;
    let mut f0 = poly_eval(cs, x0);
    for i in 1..=steps {
        let x1 = a + h * T::from_usize_lossy(i);
        let f1 = poly_eval(cs, x1);
        if f0 == T::zero() {
            roots.push(x0);
        } else if f0 * f1 < T::zero() {
            let (mut lo, mut hi) = (x0, x1);
            for _ in 0..80 {
                let mid = (lo + hi) * c(0.5);
                if poly_eval(cs, lo) * poly_eval(cs, mid) <= T::zero() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push((lo + hi) * c(0.5));
        }
        x0 = x1;
        f0 = f1;
    }
    roots
}

/// Coefficient map of one term, keyed by cell-index tuples.
pub type Coefficients<T> = BTreeMap<Vec<usize>, T>;

#[derive(Debug, Clone)]
pub struct Term<T> {
    pub coeffs: Coefficients<T>,
    pub profiles: Vec<CellProfile<T>>,
}

/// An order-`n` integrand on `cells` cells. Order 0 is a scalar.
#[derive(Debug, Clone)]
pub struct ChaosTensor<T> {
    order: usize,
    cells: usize,
    terms: Vec<Term<T>>,
}

/// One uniform variate `U_k ∈ [-1, 1]` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosSample<T> {
    u: Vec<T>,
}

impl<T: Real> ChaosSample<T> {
    pub fn new(u: Vec<T>) -> Result<Self, ChaosError> {
        if let Some(bad) = u.iter().find(|&&x| !(x >= -T::one() && x <= T::one())) {
            return Err(ChaosError::InvalidSample(format!("entry {bad} outside [-1, 1]")));
        }
        Ok(ChaosSample { u })
    }

    pub fn values(&self) -> &[T] {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

fn has_repeat(key: &[usize]) -> bool {
    key.iter().enumerate().any(|(i, k)| key[i + 1..].contains(k))
}

impl<T: Real> ChaosTensor<T> {
    /// The zero tensor of the given order.
    pub fn zero(order: usize, cells: usize) -> Self {
        ChaosTensor { order, cells, terms: Vec::new() }
    }

    /// An order-0 tensor holding a constant.
    pub fn scalar(value: T, cells: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(Vec::new(), value);
        ChaosTensor { order: 0, cells, terms: vec![Term { coeffs, profiles: Vec::new() }] }
    }

    /// Order-1 tensor `Σ_k a_k p(x - 2k)` with one profile on every cell.
    pub fn first_order(coeffs: &[T], profile: CellProfile<T>) -> Self {
        let mut t = Self::zero(1, coeffs.len());
        let map = coeffs
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != T::zero())
            .map(|(k, &a)| (vec![k], a))
            .collect();
        t.terms.push(Term { coeffs: map, profiles: vec![profile] });
        t
    }

    /// Order-1 tensor with a different profile on each cell.
    pub fn first_order_profiles(coeffs: &[T], profiles: &[CellProfile<T>]) -> Result<Self, ChaosError> {
        if coeffs.len() != profiles.len() {
            return Err(ChaosError::Domain("one profile per coefficient required".into()));
        }
        let mut t = Self::zero(1, coeffs.len());
        for (k, (&a, p)) in coeffs.iter().zip(profiles).enumerate() {
            t.add_term([(vec![k], a)], vec![p.clone()])?;
        }
        Ok(t)
    }

    /// Order-2 tensor `Σ_{k≠l} a_{kl} p(x - 2k) p(y - 2l)` from a square matrix
    /// with zero diagonal.
    pub fn quadratic(matrix: &[Vec<T>], profile: CellProfile<T>) -> Result<Self, ChaosError> {
        let n = matrix.len();
        let mut entries = Vec::new();
        for (k, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(ChaosError::Domain("coefficient matrix must be square".into()));
            }
            for (l, &a) in row.iter().enumerate() {
                if a != T::zero() {
                    entries.push((vec![k, l], a));
                }
            }
        }
        let mut t = Self::zero(2, n);
        t.add_term(entries, vec![profile.clone(), profile])?;
        Ok(t)
    }

    /// Appends a term. Indices must be below the cell count and pairwise
    /// distinct within each tuple.
    pub fn add_term<I>(&mut self, coeffs: I, profiles: Vec<CellProfile<T>>) -> Result<(), ChaosError>
    where
        I: IntoIterator<Item = (Vec<usize>, T)>,
    {
        if profiles.len() != self.order {
            return Err(ChaosError::Domain(format!(
                "term has {} profiles for an order-{} tensor",
                profiles.len(),
                self.order
            )));
        }
        let mut map = BTreeMap::new();
        for (key, v) in coeffs {
            if key.len() != self.order {
                return Err(ChaosError::Domain(format!("index tuple {key:?} has wrong length")));
            }
            if let Some(k) = key.iter().find(|&&k| k >= self.cells) {
                return Err(ChaosError::Domain(format!("cell index {k} out of range")));
            }
            if has_repeat(&key) {
                return Err(ChaosError::Domain(format!("index tuple {key:?} lies on a diagonal")));
            }
            if v != T::zero() {
                *map.entry(key).or_insert(T::zero()) += v;
            }
        }
        self.terms.push(Term { coeffs: map, profiles });
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn terms(&self) -> &[Term<T>] {
        &self.terms
    }

    /// Whether every profile has vanishing cell average.
    pub fn is_canonical(&self) -> bool {
        self.terms.iter().all(|t| t.coeffs.is_empty() || t.profiles.iter().all(|p| p.is_canonical()))
    }

    /// Whether all coefficients vanish.
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeffs.values().all(|&v| v == T::zero()))
    }

    /// Value of an order-0 tensor.
    pub fn scalar_value(&self) -> T {
        self.terms.iter().filter_map(|t| t.coeffs.get(&Vec::new())).copied().sum()
    }

    /// Coefficient at a tuple, summed over terms whose profiles match `profiles`
    /// (or over all terms when `profiles` is `None`).
    pub fn coefficient(&self, key: &[usize], profiles: Option<&[CellProfile<T>]>) -> T {
        self.terms
            .iter()
            .filter(|t| profiles.map_or(true, |p| t.profiles.as_slice() == p))
            .filter_map(|t| t.coeffs.get(key))
            .copied()
            .sum()
    }

    /// Multiplies every coefficient by `factor`.
    pub fn scale(&self, factor: T) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            for v in t.coeffs.values_mut() {
                *v *= factor;
            }
        }
        out.prune();
        out
    }

    /// Sum of two tensors of equal order.
    pub fn add(&self, other: &Self) -> Result<Self, ChaosError> {
        if self.order != other.order {
            return Err(ChaosError::Domain("cannot add tensors of different order".into()));
        }
        let mut out = ChaosTensor {
            order: self.order,
            cells: self.cells.max(other.cells),
            terms: self.terms.clone(),
        };
        out.terms.extend(other.terms.iter().cloned());
        out.merge();
        Ok(out)
    }

    fn prune(&mut self) {
        for t in &mut self.terms {
            t.coeffs.retain(|_, v| *v != T::zero());
        }
        self.terms.retain(|t| !t.coeffs.is_empty());
    }

    /// Merges terms with identical profile lists, keeping first-occurrence order.
    fn merge(&mut self) {
        let mut merged: Vec<Term<T>> = Vec::new();
        for term in self.terms.drain(..) {
            match merged.iter_mut().find(|m| m.profiles == term.profiles) {
                Some(m) => {
                    for (k, v) in term.coeffs {
                        *m.coeffs.entry(k).or_insert(T::zero()) += v;
                    }
                }
                None => merged.push(term),
            }
        }
        self.terms = merged;
        self.prune();
    }

    /// Distinct profiles appearing in the tensor.
    pub fn profiles(&self) -> Vec<CellProfile<T>> {
        let mut out: Vec<CellProfile<T>> = Vec::new();
        for t in &self.terms {
            for p in &t.profiles {
                if !out.iter().any(|q| q.id() == p.id()) {
                    out.push(p.clone());
                }
            }
        }
        out
    }

    /// The cell functions `f(2k + t) = Σ_terms a_k p(t)` of an order-1 tensor:
    /// for each cell, the list of (coefficient, profile) pairs.
    pub fn cell_functions(&self) -> Vec<Vec<(T, CellProfile<T>)>> {
        let mut cells: Vec<Vec<(T, CellProfile<T>)>> = vec![Vec::new(); self.cells];
        if self.order != 1 {
            return cells;
        }
        for t in &self.terms {
            for (key, &a) in &t.coeffs {
                let slot = &mut cells[key[0]];
                match slot.iter_mut().find(|(_, p)| *p == t.profiles[0]) {
                    Some(entry) => entry.0 += a,
                    None => slot.push((a, t.profiles[0].clone())),
                }
            }
        }
        cells
    }
}

/// `I_n(f)` at one sample: `Σ_{k distinct} a(k) Π_j (p_j(1+U_{k_j}) - avg p_j)`.
/// For canonical profiles the averages vanish and this is the plain
/// U-statistic; otherwise each axis is compensated by its cell average.
pub fn evaluate_integral<T: Real>(f: &ChaosTensor<T>, s: &ChaosSample<T>) -> Result<T, ChaosError> {
    if f.order == 0 {
        return Ok(f.scalar_value());
    }
    if f.cells > s.len() {
        return Err(ChaosError::InvalidSample(format!(
            "tensor needs {} cells, sample has {}",
            f.cells,
            s.len()
        )));
    }
    let mut cache: HashMap<u64, Vec<T>> = HashMap::new();
    let mut total = T::zero();
    for term in &f.terms {
        for p in &term.profiles {
            cache.entry(p.id()).or_insert_with(|| {
                let avg = p.average();
                s.u[..f.cells].iter().map(|&u| p.value(T::one() + u) - avg).collect()
            });
        }
        let cols: Vec<&Vec<T>> = term.profiles.iter().map(|p| &cache[&p.id()]).collect();
        for (key, &a) in &term.coeffs {
            if has_repeat(key) {
                continue;
            }
            let mut v = a;
            for (j, &k) in key.iter().enumerate() {
                v *= cols[j][k];
            }
            total += v;
        }
    }
    Ok(total)
}

/// Raw contraction `f ⋆_k^i g`: axes `0..i` of both tensors are integrated
/// (measure dx/2), axes `i..k` are identified and multiplied pointwise, the
/// remaining axes are concatenated. Output axes: `[shared, f rest, g rest]`.
/// Diagonal entries are kept.
pub fn contract_unrestricted<T: Real>(
    f: &ChaosTensor<T>,
    g: &ChaosTensor<T>,
    k: usize,
    i: usize,
) -> Result<ChaosTensor<T>, ChaosError> {
    let (n, m) = (f.order, g.order);
    if i > k || k > n.min(m) {
        return Err(ChaosError::Domain(format!(
            "contraction indices need 0 <= i <= k <= min(n, m); got k={k}, i={i}, n={n}, m={m}"
        )));
    }
    let order = n + m - k - i;
    let cells = f.cells.max(g.cells);
    let mut out = ChaosTensor::zero(order, cells);
    for tf in &f.terms {
        for tg in &g.terms {
            let weight: T = (0..i).map(|j| tf.profiles[j].inner_product(&tg.profiles[j])).product();
            if weight == T::zero() {
                continue;
            }
            let mut profiles: Vec<CellProfile<T>> = (i..k)
                .map(|j| CellProfile::product(&tf.profiles[j], &tg.profiles[j]))
                .collect();
            profiles.extend(tf.profiles[k..].iter().cloned());
            profiles.extend(tg.profiles[k..].iter().cloned());
            // index g's entries by their identified prefix
            let mut by_prefix: HashMap<&[usize], Vec<(&[usize], T)>> = HashMap::new();
            for (key, &b) in &tg.coeffs {
                by_prefix.entry(&key[..k]).or_default().push((&key[k..], b));
            }
            let mut coeffs: Coefficients<T> = BTreeMap::new();
            for (key, &a) in &tf.coeffs {
                if let Some(list) = by_prefix.get(&key[..k]) {
                    for &(rest, b) in list {
                        let mut idx = Vec::with_capacity(order);
                        idx.extend_from_slice(&key[i..k]);
                        idx.extend_from_slice(&key[k..]);
                        idx.extend_from_slice(rest);
                        *coeffs.entry(idx).or_insert(T::zero()) += a * b * weight;
                    }
                }
            }
            out.terms.push(Term { coeffs, profiles });
        }
    }
    out.merge();
    Ok(out)
}

/// `f ⋆_k^i g` restricted to the off-diagonal set.
pub fn contract<T: Real>(
    f: &ChaosTensor<T>,
    g: &ChaosTensor<T>,
    k: usize,
    i: usize,
) -> Result<ChaosTensor<T>, ChaosError> {
    Ok(restrict_to_delta(&contract_unrestricted(f, g, k, i)?))
}

/// Zeroes every coefficient whose index tuple has a repeated cell.
pub fn restrict_to_delta<T: Real>(f: &ChaosTensor<T>) -> ChaosTensor<T> {
    let mut out = f.clone();
    for t in &mut out.terms {
        t.coeffs.retain(|key, _| !has_repeat(key));
    }
    out.prune();
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    fn heap(k: usize, perm: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(perm.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, perm, out);
            let j = if k % 2 == 0 { i } else { 0 };
            perm.swap(j, k - 1);
        }
    }
    heap(n, &mut perm, &mut out);
    out.sort();
    out
}

/// Averages each term over the permutations of the given axes.
fn symmetrize_axes<T: Real>(f: &ChaosTensor<T>, axes: &[usize]) -> Result<ChaosTensor<T>, ChaosError> {
    if axes.len() > MAX_SYMMETRIZE_ORDER {
        return Err(ChaosError::Capacity { order: axes.len(), max: MAX_SYMMETRIZE_ORDER });
    }
    if axes.len() <= 1 {
        let mut out = f.clone();
        out.merge();
        return Ok(out);
    }
    let perms = permutations(axes.len());
    let w = T::one() / T::from_usize_lossy(perms.len());
    let mut out = ChaosTensor::zero(f.order, f.cells);
    for term in &f.terms {
        for perm in &perms {
            // axis axes[a] of the new term takes axis axes[perm[a]] of the old one
            let mut profiles = term.profiles.clone();
            for (a, &pa) in perm.iter().enumerate() {
                profiles[axes[a]] = term.profiles[axes[pa]].clone();
            }
            let coeffs = term
                .coeffs
                .iter()
                .map(|(key, &v)| {
                    let mut nk = key.clone();
                    for (a, &pa) in perm.iter().enumerate() {
                        nk[axes[a]] = key[axes[pa]];
                    }
                    (nk, v * w)
                })
                .collect();
            out.terms.push(Term { coeffs, profiles });
        }
    }
    out.merge();
    Ok(out)
}

/// Symmetrization over all axis permutations (order at most 6).
pub fn symmetrize<T: Real>(f: &ChaosTensor<T>) -> Result<ChaosTensor<T>, ChaosError> {
    let axes: Vec<usize> = (0..f.order).collect();
    symmetrize_axes(f, &axes)
}

/// Symmetrization over the axes `1..n`, leaving axis 0 in place.
pub fn symmetrize_tail<T: Real>(f: &ChaosTensor<T>) -> Result<ChaosTensor<T>, ChaosError> {
    let axes: Vec<usize> = (1..f.order).collect();
    symmetrize_axes(f, &axes)
}

/// `h_k` for `k = 0..=n+m` with `I_n(f) I_m(g) = Σ_k I_k(h_k)`, where
/// `h_k = Σ_{n+m-r-l=k} r! C(n,r) C(m,r) C(r,l) 1_Δ sym(f ⋆_r^l g)`.
pub fn multiply<T: Real>(f: &ChaosTensor<T>, g: &ChaosTensor<T>) -> Result<Vec<ChaosTensor<T>>, ChaosError> {
    for t in [f, g] {
        if t.order > MAX_MULTIPLY_ORDER {
            return Err(ChaosError::Capacity { order: t.order, max: MAX_MULTIPLY_ORDER });
        }
        if !t.is_canonical() {
            return Err(ChaosError::Precondition("multiply needs canonical profiles".into()));
        }
    }
    product_expansion(f, g)
}

fn product_expansion<T: Real>(f: &ChaosTensor<T>, g: &ChaosTensor<T>) -> Result<Vec<ChaosTensor<T>>, ChaosError> {
    let (n, m) = (f.order, g.order);
    let cells = f.cells.max(g.cells);
    let mut out: Vec<ChaosTensor<T>> = (0..=n + m).map(|k| ChaosTensor::zero(k, cells)).collect();
    for r in 0..=n.min(m) {
        for l in 0..=r {
            let w = factorial::<T>(r) * binomial::<T>(n, r) * binomial::<T>(m, r) * binomial::<T>(r, l);
            let h = symmetrize(&contract_unrestricted(f, g, r, l)?)?;
            let h = restrict_to_delta(&h).scale(w);
            let k = n + m - r - l;
            out[k] = out[k].add(&h)?;
        }
    }
    Ok(out)
}

/// `G^n_k f = 1_{Δ_k} Σ_{2n-r-l=k} r! C(n,r)^2 C(r,l) sym(f ⋆_r^l f)`.
pub fn g_operator<T: Real>(f: &ChaosTensor<T>, k: usize) -> Result<ChaosTensor<T>, ChaosError> {
    let n = f.order;
    if k > 2 * n {
        return Err(ChaosError::Domain(format!("k={k} exceeds 2n={}", 2 * n)));
    }
    let mut out = ChaosTensor::zero(k, f.cells);
    for r in 0..=n {
        for l in 0..=r {
            if 2 * n - r - l != k {
                continue;
            }
            let w = factorial::<T>(r) * binomial::<T>(n, r).powi(2) * binomial::<T>(r, l);
            let h = symmetrize(&contract_unrestricted(f, f, r, l)?)?;
            out = out.add(&restrict_to_delta(&h).scale(w))?;
        }
    }
    Ok(out)
}

/// `‖f‖²` in `L²((dx/2)^{⊗n})`.
pub fn l2_norm_sq<T: Real>(f: &ChaosTensor<T>) -> T {
    let mut total = T::zero();
    for (a, ta) in f.terms.iter().enumerate() {
        for tb in &f.terms[a..] {
            let w: T = ta
                .profiles
                .iter()
                .zip(&tb.profiles)
                .map(|(p, q)| p.inner_product(q))
                .product();
            if w == T::zero() {
                continue;
            }
            let (small, large) = if ta.coeffs.len() <= tb.coeffs.len() { (ta, tb) } else { (tb, ta) };
            let dot: T = small
                .coeffs
                .iter()
                .filter_map(|(k, &x)| large.coeffs.get(k).map(|&y| x * y))
                .sum();
            let factor = if std::ptr::eq(ta, tb) { T::one() } else { c(2.0) };
            total += factor * w * dot;
        }
    }
    total
}

/// `L^{-1}` on the `n`-th chaos: multiplies by `-1/n`.
pub fn apply_l_inverse<T: Real>(f: &ChaosTensor<T>) -> Result<ChaosTensor<T>, ChaosError> {
    if f.order == 0 {
        return Err(ChaosError::Domain("L^{-1} is undefined on constants".into()));
    }
    Ok(f.scale(-T::one() / T::from_usize_lossy(f.order)))
}
