//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the closed-form updates under test. Posterior laws are
//! derived in data space (an `n x n` covariance) or by brute-force grids.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use regclust::dist::norm_cdf;
use regclust::{Curve, CurveParams, Hyperparams, KnotVector, Mode, Model, ModelConfig, Priors};
use statrs::distribution::{ContinuousCDF, Gamma};

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Normalized CDF of an unnormalized density tabulated with the trapezoid rule
/// on `[lo, hi]`, linearly interpolated.
pub struct GridCdf {
    lo: f64,
    h: f64,
    cum: Vec<f64>,
}

impl GridCdf {
    pub fn new(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / n as f64;
        let logs: Vec<f64> = (0..=n).map(|j| log_density(lo + h * j as f64)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mut cum = vec![0.0; n + 1];
        for j in 1..=n {
            cum[j] = cum[j - 1] + 0.5 * h * (dens[j - 1] + dens[j]);
        }
        let total = cum[n];
        cum.iter_mut().for_each(|c| *c /= total);
        Self { lo, h, cum }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let u = (x - self.lo) / self.h;
        if u <= 0.0 {
            return 0.0;
        }
        let j = u.floor() as usize;
        if j + 1 >= self.cum.len() {
            return 1.0;
        }
        let w = u - j as f64;
        self.cum[j] * (1.0 - w) + self.cum[j + 1] * w
    }

    /// Mean and variance by the same trapezoid rule.
    pub fn moments(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
        let h = (hi - lo) / n as f64;
        let xs: Vec<f64> = (0..=n).map(|j| lo + h * j as f64).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs
            .iter()
            .enumerate()
            .map(|(j, l)| (l - top).exp() * if j == 0 || j == n { 0.5 } else { 1.0 })
            .collect();
        let z: f64 = w.iter().sum();
        let m = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
        let v = xs
            .iter()
            .zip(&w)
            .map(|(x, w)| (x - m).powi(2) * w)
            .sum::<f64>()
            / z;
        (m, v)
    }
}

/// Three observations, linear shape basis (two coefficients) and a linear
/// identity warp: the smallest configuration with every model block present.
pub struct Toy {
    pub model: Model,
    pub curve: Curve,
    pub params: CurveParams,
    pub hypers: Hyperparams,
}

pub fn toy() -> Toy {
    let priors = Priors {
        a: 3.0,
        b: 2.0,
        ..Priors::default()
    };
    let model = Model::new(ModelConfig {
        shape: KnotVector::new(-0.5, 2.5, vec![], 1).unwrap(),
        warp: KnotVector::new(0.0, 2.0, vec![], 1).unwrap(),
        delta: 0.5,
        positive_amplitude: true,
        mode: Mode::Joint,
        priors,
    })
    .unwrap();
    let curve = Curve::new("toy", vec![0.0, 1.0, 2.0], vec![0.9, 0.2, 1.4]).unwrap();
    let params = CurveParams {
        phi: vec![0.1, 1.8],
        c: 0.3,
        a: 1.2,
        label: 0,
    };
    let hypers = Hyperparams {
        alpha: 0.7,
        tau_theta: 0.8,
        ..Hyperparams::default()
    };
    Toy {
        model,
        curve,
        params,
        hypers,
    }
}

impl Toy {
    /// Shape basis at the warped times, built from scratch: linear B-splines
    /// on `[-0.5, 2.5]` evaluated at the linear warp through `phi`.
    pub fn design(&self) -> DMatrix<f64> {
        let (p0, p1) = (self.params.phi[0], self.params.phi[1]);
        DMatrix::from_fn(3, 2, |r, k| {
            let t = self.curve.times[r];
            let mu = p0 + (p1 - p0) * t / 2.0;
            let u = (mu + 0.5) / 3.0;
            if k == 0 {
                1.0 - u
            } else {
                u
            }
        })
    }

    /// Shape prior precision per unit `tau_theta * tau`, from the anchored
    /// second differences written out by hand.
    pub fn sigma(&self) -> DMatrix<f64> {
        // rows: theta_0, theta_1 - 2 theta_0
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -2.0, 1.0]);
        d.transpose() * d
    }

    fn resid(&self) -> DVector<f64> {
        DVector::from_iterator(3, self.curve.values.iter().map(|y| y - self.params.c))
    }

    /// `M` with `y - c | tau ~ N(0, M / tau)` after integrating out `theta`.
    fn m(&self) -> DMatrix<f64> {
        let b = self.design() * self.params.a;
        let sinv = self.sigma().try_inverse().unwrap();
        &b * sinv * b.transpose() / self.hypers.tau_theta + DMatrix::identity(3, 3)
    }

    /// Gamma posterior of the noise precision in data space.
    pub fn tau_posterior(&self) -> Gamma {
        let p = self.model.priors();
        let r = self.resid();
        let q = r.dot(&(self.m().try_inverse().unwrap() * &r));
        Gamma::new(p.a + 1.5, p.b + 0.5 * q).unwrap()
    }

    /// Mean and variance of `theta_k` given `tau` by Gaussian conditioning in
    /// data space.
    pub fn theta_given_tau(&self, tau: f64, k: usize) -> (f64, f64) {
        let b = self.design() * self.params.a;
        let s0 = self.sigma().try_inverse().unwrap() / (self.hypers.tau_theta * tau);
        let cov_y = &b * &s0 * b.transpose() + DMatrix::identity(3, 3) / tau;
        let gain = &s0 * b.transpose() * cov_y.try_inverse().unwrap();
        let mean = &gain * self.resid();
        let cov = &s0 - &gain * &b * &s0;
        (mean[k], cov[(k, k)])
    }

    /// Marginal CDF of `theta_k`: the normal CDF averaged over `tau` at
    /// `nodes` quantile midpoints of its posterior.
    pub fn theta_cdf(&self, k: usize, nodes: usize) -> impl Fn(f64) -> f64 {
        let g = self.tau_posterior();
        let parts: Vec<(f64, f64)> = (0..nodes)
            .map(|j| {
                let tau = g.inverse_cdf((j as f64 + 0.5) / nodes as f64);
                let (m, v) = self.theta_given_tau(tau, k);
                (m, v.sqrt())
            })
            .collect();
        move |x| {
            parts
                .iter()
                .map(|(m, s)| norm_cdf((x - m) / s))
                .sum::<f64>()
                / parts.len() as f64
        }
    }

    /// Monte Carlo estimate of the prior predictive density of the curve and
    /// its relative standard error.
    pub fn marginal_monte_carlo(&self, draws: usize, seed: u64) -> (f64, f64) {
        let p = self.model.priors();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = GammaDist::new(p.a, 1.0 / p.b).unwrap();
        let b = self.design() * self.params.a;
        let l = self.sigma().cholesky().unwrap().l();
        let r = self.resid();
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let tau: f64 = gamma.sample(&mut rng);
            let z = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let theta = l.transpose().solve_upper_triangular(&z).unwrap()
                / (self.hypers.tau_theta * tau).sqrt();
            let e = &r - &b * theta;
            let lik = (tau / (2.0 * std::f64::consts::PI)).powf(1.5)
                * (-0.5 * tau * e.norm_squared()).exp();
            s1 += lik;
            s2 += lik * lik;
        }
        let n = draws as f64;
        let mean = s1 / n;
        let se = ((s2 / n - mean * mean) / n).sqrt();
        (mean, se / mean)
    }
}

/// A curve with a fixed shape fit for the level and amplitude updates:
/// `(curve, fit, hypers, tau)`.
pub fn scalar_case() -> (Curve, Vec<f64>, Hyperparams, f64) {
    let curve = Curve::new("s", vec![0.0, 1.0, 2.0, 3.0], vec![0.4, -0.3, 0.1, 0.2]).unwrap();
    let fit = vec![0.5, -0.8, 0.3, 0.9];
    let h = Hyperparams {
        c0: 0.2,
        a0: 0.1,
        tau_c: 2.0,
        tau_a: 3.0,
        ..Hyperparams::default()
    };
    (curve, fit, h, 1.5)
}

pub fn log_lik(curve: &Curve, fit: &[f64], c: f64, a: f64, tau: f64) -> f64 {
    curve
        .values
        .iter()
        .zip(fit)
        .map(|(y, f)| -0.5 * tau * (y - c - a * f).powi(2))
        .sum()
}

/// B-spline `N_{i,p}(x)` by the Cox-de Boor recursion applied directly to
/// each function, with `0/0 = 0`. Valid for `x` strictly inside the domain.
pub fn bspline_by_recursion(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
    }
    let left = t[i + p] - t[i];
    let right = t[i + p + 1] - t[i + 1];
    let mut v = 0.0;
    if left > 0.0 {
        v += (x - t[i]) / left * bspline_by_recursion(t, i, p - 1, x);
    }
    if right > 0.0 {
        v += (t[i + p + 1] - x) / right * bspline_by_recursion(t, i + 1, p - 1, x);
    }
    v
}

/// `sum_p xi_p^2` with `xi_p = theta_p - 2 theta_{p-1} + theta_{p-2}` and
/// `theta_{-1} = theta_{-2} = 0`.
pub fn second_difference_sum(theta: &[f64]) -> f64 {
    let at = |j: isize| if j < 0 { 0.0 } else { theta[j as usize] };
    (0..theta.len() as isize)
        .map(|p| (at(p) - 2.0 * at(p - 1) + at(p - 2)).powi(2))
        .sum()
}

/// `sum_q nu_q^2` with `nu_q = d_q - d_{q-1}`, `d = phi - phi0` and `d_{-1} = 0`.
pub fn first_difference_sum(phi: &[f64], phi0: &[f64]) -> f64 {
    let d: Vec<f64> = phi.iter().zip(phi0).map(|(a, b)| a - b).collect();
    (0..d.len())
        .map(|q| (d[q] - if q == 0 { 0.0 } else { d[q - 1] }).powi(2))
        .sum()
}
