//! Special functions: log-gamma, regularized incomplete gamma, error function
//! and the standard normal distribution.

use crate::scalar::{c, Real};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const MAX_ITER: usize = 100_000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7). Negative non-integers use reflection.
pub fn ln_gamma<T: Real>(x: T) -> T {
    if x < c(0.5) {
        // Γ(x)Γ(1-x) = π / sin(πx)
        let s = (T::PI() * x).sin().abs();
        return T::PI().ln() - s.ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut a = c::<T>(LANCZOS[0]);
    for (i, &p) in LANCZOS.iter().enumerate().skip(1) {
        a += c::<T>(p) / (x + T::from_usize_lossy(i));
    }
    let t = x + c(LANCZOS_G + 0.5);
    c::<T>(0.5) * (T::TAU()).ln() + (x + c(0.5)) * t.ln() - t + a.ln()
}

pub fn gamma<T: Real>(x: T) -> T {
    if x > T::zero() {
        ln_gamma(x).exp()
    } else {
        let s = (T::PI() * x).sin();
        T::PI() / (s * ln_gamma(T::one() - x).exp())
    }
}

/// `ln B(a, b)`.
pub fn ln_beta<T: Real>(a: T, b: T) -> T {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Power series for P(a, x), good for `x < a + 1`.
fn lower_series<T: Real>(a: T, x: T) -> T {
    let eps = T::epsilon();
    let mut ap = a;
    let mut del = T::one() / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += T::one();
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * eps {
            return sum * (-x + a * x.ln() - ln_gamma(a)).exp();
        }
    }
    T::nan()
}

/// Continued fraction for Q(a, x) (modified Lentz), good for `x >= a + 1`.
fn upper_fraction<T: Real>(a: T, x: T) -> T {
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let mut b = x + T::one() - a;
    let mut cc = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let fi = T::from_usize_lossy(i);
        let an = -fi * (fi - a);
        b += c(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        cc = b + an / cc;
        if cc.abs() < tiny {
            cc = tiny;
        }
        d = T::one() / d;
        let del = d * cc;
        h *= del;
        if (del - T::one()).abs() < eps {
            return (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        }
    }
    T::nan()
}

/// Regularized lower incomplete gamma `P(a, x)`. Returns NaN when the
/// expansion fails to converge or the arguments are out of domain.
pub fn gamma_p<T: Real>(a: T, x: T) -> T {
    if !(a > T::zero()) || x < T::zero() || x.is_nan() {
        return T::nan();
    }
    if x == T::zero() {
        return T::zero();
    }
    if x.is_infinite() {
        return T::one();
    }
    if x < a + T::one() {
        lower_series(a, x)
    } else {
        T::one() - upper_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`, computed
/// without cancellation in the upper tail.
pub fn gamma_q<T: Real>(a: T, x: T) -> T {
    if !(a > T::zero()) || x < T::zero() || x.is_nan() {
        return T::nan();
    }
    if x == T::zero() {
        return T::one();
    }
    if x.is_infinite() {
        return T::zero();
    }
    if x < a + T::one() {
        T::one() - lower_series(a, x)
    } else {
        upper_fraction(a, x)
    }
}

/// Unregularized upper incomplete gamma `Γ(a, x)`.
pub fn upper_gamma<T: Real>(a: T, x: T) -> T {
    gamma_q(a, x) * gamma(a)
}

pub fn erf<T: Real>(x: T) -> T {
    let p = gamma_p(c(0.5), x * x);
    if x < T::zero() {
        -p
    } else {
        p
    }
}

pub fn erfc<T: Real>(x: T) -> T {
    if x < T::zero() {
        c::<T>(2.0) - gamma_q(c(0.5), x * x)
    } else {
        gamma_q(c(0.5), x * x)
    }
}

pub fn normal_pdf<T: Real>(x: T) -> T {
    (-x * x * c(0.5)).exp() / T::TAU().sqrt()
}

/// Standard normal CDF, accurate in relative terms in the lower tail.
pub fn normal_cdf<T: Real>(x: T) -> T {
    c::<T>(0.5) * erfc(-x / T::SQRT_2())
}

/// Standard normal survival function `1 - Φ(x)`.
pub fn normal_sf<T: Real>(x: T) -> T {
    c::<T>(0.5) * erfc(x / T::SQRT_2())
}

/// Standard normal quantile: Acklam's rational approximation polished by
/// one Halley step.
pub fn normal_quantile<T: Real>(p: T) -> T {
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let pf = p.to_f64_lossy();
    let plow = 0.02425;
    let x0 = if pf < plow {
        let q = (-2.0 * pf.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if pf <= 1.0 - plow {
        let q = pf - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - pf).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = c::<T>(x0);
    for _ in 0..2 {
        // residual measured on the tail closer to p for relative accuracy
        let e = if x < T::zero() {
            normal_cdf(x) - p
        } else {
            (T::one() - p) - normal_sf(x)
        };
        let u = e * T::TAU().sqrt() * (x * x * c(0.5)).exp();
        if !u.is_finite() {
            break;
        }
        x = x - u / (T::one() + x * u * c(0.5));
    }
    x
}

/// `n!` as a float.
pub fn factorial<T: Real>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * T::from_usize_lossy(k))
}

/// Binomial coefficient `C(n, k)` as a float; zero when `k > n`.
pub fn binomial<T: Real>(n: usize, k: usize) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = T::one();
    for i in 0..k {
        acc = acc * T::from_usize_lossy(n - i) / T::from_usize_lossy(i + 1);
    }
    acc.round()
}
