//! Globally adaptive Gauss-Kronrod (7/15) quadrature with support for
//! breakpoints and infinite endpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::{c, Real};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances and work limit for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { abs_tol: 1e-12, rel_tol: 1e-8, max_intervals: 4000 }
    }
}

impl QuadOptions {
    pub fn tight() -> Self {
        QuadOptions { abs_tol: 1e-15, rel_tol: 1e-12, max_intervals: 8000 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: T,
    pub evaluations: usize,
    pub converged: bool,
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Real> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T: Real> Eq for Segment<T> {}
impl<T: Real> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

fn kronrod<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> (T, T) {
    let half = (b - a) * c(0.5);
    let mid = (a + b) * c(0.5);
    let fc = f(mid);
    let mut k = fc * c(WGK[7]);
    let mut g = fc * c(WG[3]);
    for j in 0..7 {
        let dx = half * c(XGK[j]);
        let s = f(mid - dx) + f(mid + dx);
        k += s * c(WGK[j]);
        if j % 2 == 1 {
            g += s * c(WG[j / 2]);
        }
    }
    (k * half, ((k - g) * half).abs())
}

/// Integrates `f` over `[a, b]`. Either endpoint may be infinite.
pub fn integrate<T, F>(f: F, a: T, b: T, opts: QuadOptions) -> QuadResult<T>
where
    T: Real,
    F: FnMut(T) -> T,
{
    integrate_with_points(f, &[a, b], opts)
}

/// Integrates `f` over `[points[0], points[last]]`, splitting at every
/// interior point. Useful for kinks and integrable singularities.
pub fn integrate_with_points<T, F>(mut f: F, points: &[T], opts: QuadOptions) -> QuadResult<T>
where
    T: Real,
    F: FnMut(T) -> T,
{
    assert!(points.len() >= 2, "need at least two points");
    let (lo, hi) = (points[0], points[points.len() - 1]);
    if lo == hi {
        return QuadResult { value: T::zero(), error: T::zero(), evaluations: 0, converged: true };
    }
    if lo > hi {
        let rev: Vec<T> = points.iter().rev().copied().collect();
        let mut r = integrate_with_points(f, &rev, opts);
        r.value = -r.value;
        return r;
    }
    if lo.is_infinite() || hi.is_infinite() {
        // map to a finite parameter interval; interior points are mapped too
        if lo.is_infinite() && hi.is_infinite() {
            let g = move |t: T| {
                let d = T::one() - t * t;
                let x = t / d;
                let w = (T::one() + t * t) / (d * d);
                let v = f(x);
                if v == T::zero() { v } else { v * w }
            };
            let mut pts: Vec<T> = vec![-T::one()];
            for &p in &points[1..points.len() - 1] {
                pts.push(to_unit_both(p));
            }
            pts.push(T::one());
            return adaptive(g, &pts, opts);
        }
        if hi.is_infinite() {
            let g = move |t: T| {
                let d = T::one() - t;
                let v = f(lo + t / d);
                if v == T::zero() { v } else { v / (d * d) }
            };
            let mut pts: Vec<T> = vec![T::zero()];
            for &p in &points[1..points.len() - 1] {
                let s = p - lo;
                pts.push(s / (T::one() + s));
            }
            pts.push(T::one());
            return adaptive(g, &pts, opts);
        }
        let g = move |t: T| {
            let d = T::one() - t;
            let v = f(hi - t / d);
            if v == T::zero() { v } else { v / (d * d) }
        };
        let mut pts: Vec<T> = Vec::new();
        for &p in points[1..points.len() - 1].iter().rev() {
            let s = hi - p;
            pts.push(s / (T::one() + s));
        }
        let mut all = vec![T::zero()];
        all.extend(pts);
        all.push(T::one());
        return adaptive(g, &all, opts);
    }
    adaptive(f, points, opts)
}

fn to_unit_both<T: Real>(x: T) -> T {
    // inverse of t / (1 - t^2)
    if x == T::zero() {
        return T::zero();
    }
    (-T::one() + (T::one() + c::<T>(4.0) * x * x).sqrt()) / (c::<T>(2.0) * x)
}

fn adaptive<T: Real, F: FnMut(T) -> T>(mut f: F, points: &[T], opts: QuadOptions) -> QuadResult<T> {
    let abs_tol = T::tol(opts.abs_tol, 0.0);
    let rel_tol = T::tol(opts.rel_tol, 50.0);
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in points.windows(2) {
        if w[1] > w[0] {
            let (v, e) = kronrod(&mut f, w[0], w[1]);
            evaluations += 15;
            heap.push(Segment { a: w[0], b: w[1], value: v, error: e });
        }
    }
    let total = |h: &BinaryHeap<Segment<T>>| -> (T, T) {
        h.iter().fold((T::zero(), T::zero()), |(v, e), s| (v + s.value, e + s.error))
    };
    let mut converged = false;
    loop {
        let (value, error) = total(&heap);
        if !value.is_finite() {
            break;
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            converged = true;
            break;
        }
        if heap.len() >= opts.max_intervals {
            break;
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let mid = (worst.a + worst.b) * c(0.5);
        let scale = worst.a.abs().max(worst.b.abs()).max(T::min_positive_value());
        if worst.b - worst.a <= scale * T::epsilon() * c(64.0) {
            // cannot subdivide further; accept what we have
            let (value, error) = total(&heap);
            let value = value + worst.value;
            let error = error + worst.error;
            return QuadResult {
                value,
                error,
                evaluations,
                converged: error <= abs_tol.max(rel_tol * value.abs()),
            };
        }
        let (v1, e1) = kronrod(&mut f, worst.a, mid);
        let (v2, e2) = kronrod(&mut f, mid, worst.b);
        evaluations += 30;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    let (value, error) = total(&heap);
    QuadResult { value, error, evaluations, converged }
}
