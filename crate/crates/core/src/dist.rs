//! Small sampling helpers not covered by `rand_distr`: truncated normals by
//! inverse CDF and numerically careful normal interval masses.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `log(Phi(b) - Phi(a))` for standardized bounds `a < b`.
pub fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if b - a < 1e-3 {
        // Simpson's rule; the CDF difference cancels on narrow intervals
        let m = 0.5 * (a + b);
        let logs = [-0.5 * a * a, 4f64.ln() - 0.5 * m * m, -0.5 * b * b];
        return log_sum_exp(&logs) + ((b - a) / 6.0).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    // work in the lower tail where Phi is accurate
    let (a, b) = if a > 0.0 { (-b, -a) } else { (a, b) };
    let mass = norm_cdf(b) - norm_cdf(a);
    if mass > 0.0 {
        mass.ln()
    } else {
        // both bounds deep in the lower tail: Mills-ratio approximation at b
        -0.5 * b * b - (-b).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Draws from `N(0, 1)` restricted to `(a, b)`, where either bound may be infinite.
pub fn std_truncated_normal<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a > 0.0 {
        return -std_truncated_normal(rng, -b, -a);
    }
    // uniform proposals when the density varies little over the interval,
    // which also covers intervals too narrow for the inverse CDF
    let top = (a * a).max(b * b);
    let bottom = if b < 0.0 { b * b } else { 0.0 };
    if top - bottom < 2.0 {
        loop {
            let x = a + (b - a) * rng.random::<f64>();
            let u: f64 = rng.random();
            if u.ln() <= -0.5 * (x * x - bottom) {
                return x;
            }
        }
    }
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    if pb - pa > 1e-280 {
        let u: f64 = rng.random();
        let p = pa + u * (pb - pa);
        let x = norm_quantile(p);
        if x.is_finite() {
            return x.clamp(a, b);
        }
    }
    // Here a <= 0 and the mass underflowed, so b is far in the lower tail:
    // reflect and use the exponential proposal of Robert (1995).
    let lo = -b;
    let hi = -a;
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = lo + e / rate;
        if z >= hi {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - rate).powi(2) {
            return -z;
        }
    }
}

/// Draws from `N(mean, sd^2)` restricted to `(lo, hi)`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    (mean + sd * std_truncated_normal(rng, a, b)).clamp(lo, hi)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw parameterized by shape and rate.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma shape and rate must be positive and finite")
        .sample(rng)
}

/// `log(sum(exp(x)))` ignoring `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
