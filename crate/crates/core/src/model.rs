//! Sampling model, priors and the closed-form normal-gamma quantities used by
//! the sampler.
//!
//! Curve `i` is modelled as `y_i(t) = c_i + a_i B_m(mu_i(t))^T theta_i + eps`,
//! `eps ~ N(0, 1/tau_i)`, with `mu_i(t) = B_mu(t)^T phi_i` a monotone warp.
//! The pairs `(theta_i, tau_i)` follow a Dirichlet process mixture with base
//! measure `theta | tau ~ N(0, (tau_theta tau Sigma)^-1)`, `tau ~ Ga(a, b)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dist;
use crate::splines::{
    anchored_difference, eval_basis, BasisMatrix, KnotVector, OutOfDomain, SplineError, WarpBasis,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("curve {id}: {reason}")]
    InvalidCurve { id: String, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("precision must be positive, got {0}")]
    NonPositivePrecision(f64),
    #[error("posterior precision matrix is numerically singular")]
    Singular,
    #[error("cluster has no members")]
    EmptyCluster,
}

/// One observed function on its own time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(
        id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let bad = |reason: &str| ModelError::InvalidCurve {
            id: id.clone(),
            reason: reason.into(),
        };
        if times.len() != values.len() {
            return Err(bad("times and values differ in length"));
        }
        if times.is_empty() {
            return Err(bad("no observations"));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(bad("non-finite time or value"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("times must be strictly increasing"));
        }
        Ok(Self { id, times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub curves: Vec<Curve>,
}

impl Dataset {
    pub fn new(curves: Vec<Curve>) -> Result<Self, ModelError> {
        if curves.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Self { curves })
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Common sampling window `[t_1, t_n]` spanning all curves.
    pub fn window(&self) -> (f64, f64) {
        let lo = self
            .curves
            .iter()
            .map(|c| c.times[0])
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .curves
            .iter()
            .map(|c| c.times[c.len() - 1])
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.curves.iter().position(|c| c.id == id)
    }
}

/// A unique cluster parameter `(theta*, tau*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeAtom {
    pub theta: Vec<f64>,
    pub tau: f64,
}

/// Per-curve parameters: warp coefficients, level, amplitude and cluster label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub phi: Vec<f64>,
    pub c: f64,
    pub a: f64,
    pub label: usize,
}

/// Sampled hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub c0: f64,
    pub a0: f64,
    pub tau_c: f64,
    pub tau_a: f64,
    pub tau_theta: f64,
    pub tau_phi: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            c0: 0.0,
            a0: 1.0,
            tau_c: 1.0,
            tau_a: 1.0,
            tau_theta: 1.0,
            tau_phi: 1.0,
        }
    }
}

/// Fixed prior constants. Gamma priors use shape/rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// `tau_i ~ Ga(a, b)` inside the base measure.
    pub a: f64,
    pub b: f64,
    pub a_c: f64,
    pub b_c: f64,
    pub a_a: f64,
    pub b_a: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    /// Precision of `c_0 ~ N(0, 1/tau_c0)`.
    pub tau_c0: f64,
    /// Precision of `a_0 ~ N(1, 1/tau_a0)`.
    pub tau_a0: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            a: 0.01,
            b: 0.01,
            a_c: 0.01,
            b_c: 0.01,
            a_a: 0.01,
            b_a: 0.01,
            a_theta: 0.01,
            b_theta: 0.01,
            a_phi: 0.01,
            b_phi: 0.01,
            a_alpha: 0.01,
            b_alpha: 0.01,
            tau_c0: 0.01,
            tau_a0: 1.0,
        }
    }
}

impl Priors {
    fn validate(&self) -> Result<(), ModelError> {
        let all = [
            ("a", self.a),
            ("b", self.b),
            ("a_c", self.a_c),
            ("b_c", self.b_c),
            ("a_a", self.a_a),
            ("b_a", self.b_a),
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("tau_c0", self.tau_c0),
            ("tau_a0", self.tau_a0),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidConfig(format!(
                    "prior constant {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which parts of the joint model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Clustering and registration.
    #[default]
    Joint,
    /// Warps pinned to the identity.
    ClusteringOnly,
    /// A single shape cluster shared by all curves.
    RegistrationOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub shape: KnotVector,
    pub warp: KnotVector,
    pub delta: f64,
    pub positive_amplitude: bool,
    pub mode: Mode,
    pub priors: Priors,
}

/// Log-space normal-gamma posterior summaries for a set of curves sharing one
/// atom: precision `E`, `mu`, and the gamma shape/rate of `tau`.
#[derive(Debug, Clone)]
pub struct Conjugate {
    pub precision: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// `E^{-1} mu`.
    pub mean: DVector<f64>,
    pub shape: f64,
    pub rate: f64,
    pub n_obs: usize,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Conjugate {
    pub fn log_det_precision(&self) -> f64 {
        self.log_det
    }

    /// Draws `tau ~ Ga(shape, rate)` then `theta | tau ~ N(mean, (tau E)^-1)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ShapeAtom {
        let tau = dist::gamma(rng, self.shape, self.rate);
        let z = DVector::from_fn(self.mean.len(), |_, _| dist::std_normal(rng) / tau.sqrt());
        let l_t = self.chol.l().transpose();
        let dev = l_t
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        let theta = (&self.mean + dev).iter().copied().collect();
        ShapeAtom { theta, tau }
    }

    /// Covariance of `theta` given `tau`: `(tau E)^{-1}`.
    pub fn theta_covariance(&self, tau: f64) -> DMatrix<f64> {
        self.chol.inverse() / tau
    }
}

/// Model constants derived from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    warp: WarpBasis,
    sigma: DMatrix<f64>,
    log_det_sigma: f64,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        if !(config.delta >= 0.0 && config.delta.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "delta must be >= 0, got {}",
                config.delta
            )));
        }
        config.priors.validate()?;
        let warp = WarpBasis::new(config.warp.clone(), config.delta)?;
        let (lo, hi) = warp.bounds();
        let (slo, shi) = config.shape.domain();
        if slo > lo + 1e-12 || shi < hi - 1e-12 {
            return Err(ModelError::InvalidConfig(format!(
                "shape domain [{slo}, {shi}] must cover the warp image [{lo}, {hi}]"
            )));
        }
        let p = config.shape.num_basis();
        let d = anchored_difference(p, 2)?;
        let sigma = d.transpose() * d;
        let log_det_sigma = 2.0
            * Cholesky::new(sigma.clone())
                .ok_or(ModelError::Singular)?
                .l()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        Ok(Self {
            config,
            warp,
            sigma,
            log_det_sigma,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn priors(&self) -> &Priors {
        &self.config.priors
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn warp(&self) -> &WarpBasis {
        &self.warp
    }

    pub fn shape_knots(&self) -> &KnotVector {
        &self.config.shape
    }

    /// Second-order shrinkage penalty on shape coefficients.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn shape_dim(&self) -> usize {
        self.config.shape.num_basis()
    }

    pub fn warp_dim(&self) -> usize {
        self.warp.dim()
    }

    pub fn identity_phi(&self) -> &[f64] {
        self.warp.identity()
    }

    /// Checks that every curve lies in the warp domain.
    pub fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        let (lo, hi) = self.config.warp.domain();
        let tol = 1e-9 * (hi - lo);
        for c in &data.curves {
            if c.times[0] < lo - tol || c.times[c.len() - 1] > hi + tol {
                return Err(ModelError::InvalidCurve {
                    id: c.id.clone(),
                    reason: format!("times fall outside the sampling window [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }

    /// Warp basis evaluated at a curve's own times; fixed for the whole run.
    pub fn warp_rows(&self, curve: &Curve) -> Result<BasisMatrix, ModelError> {
        Ok(eval_basis(
            self.warp.knots(),
            &curve.times,
            OutOfDomain::Error,
        )?)
    }

    /// `B_i = B_m(B_mu(t)^T phi)`.
    pub fn design_matrix(&self, curve: &Curve, phi: &[f64]) -> Result<BasisMatrix, ModelError> {
        let warped = self.warp.eval(phi, &curve.times)?;
        Ok(eval_basis(&self.config.shape, &warped, OutOfDomain::Error)?)
    }

    /// Shape design matrix from precomputed warp rows. `phi` must already be valid.
    pub fn design_from_rows(
        &self,
        rows: &BasisMatrix,
        phi: &[f64],
    ) -> Result<BasisMatrix, ModelError> {
        let warped = rows.mul_vec(phi);
        Ok(eval_basis(&self.config.shape, &warped, OutOfDomain::Error)?)
    }

    /// Residual sum of squares `||y - c - a B theta||^2`, evaluated without
    /// materializing the design matrix.
    pub fn residual_ss(
        &self,
        curve: &Curve,
        rows: &BasisMatrix,
        phi: &[f64],
        c: f64,
        a: f64,
        theta: &[f64],
    ) -> f64 {
        let kv = &self.config.shape;
        let (lo, hi) = kv.domain();
        let mut buf = [0.0f64; 16];
        let w = kv.degree() + 1;
        let mut rss = 0.0;
        for (j, &y) in curve.values.iter().enumerate() {
            let (s, v) = rows.row(j);
            let mut mu = 0.0;
            for (k, &b) in v.iter().enumerate() {
                mu += b * phi[s + k];
            }
            let mu = mu.clamp(lo, hi);
            let first = kv.basis_into(mu, &mut buf[..w]);
            let mut fit = 0.0;
            for k in 0..w {
                fit += buf[k] * theta[first + k];
            }
            let r = y - c - a * fit;
            rss += r * r;
        }
        rss
    }

    pub fn gaussian_loglik(n: usize, tau: f64, rss: f64) -> f64 {
        0.5 * n as f64 * (tau.ln() - (2.0 * PI).ln()) - 0.5 * tau * rss
    }

    /// `sum_j log N(y_ij | c_i + a_i (B_i theta)_j, 1/tau)`.
    pub fn log_likelihood(
        &self,
        curve: &Curve,
        params: &CurveParams,
        atom: &ShapeAtom,
    ) -> Result<f64, ModelError> {
        if !(atom.tau > 0.0) {
            return Err(ModelError::NonPositivePrecision(atom.tau));
        }
        let b = self.design_matrix(curve, &params.phi)?;
        let fit = b.mul_vec(&atom.theta);
        let rss = curve
            .values
            .iter()
            .zip(&fit)
            .map(|(y, f)| (y - params.c - params.a * f).powi(2))
            .sum();
        Ok(Self::gaussian_loglik(curve.len(), atom.tau, rss))
    }

    /// Normal-gamma summaries for a group of curves sharing one atom. Each
    /// member is `(curve, design matrix, level, amplitude)`.
    pub fn summaries_from_parts<'a, I>(
        &self,
        tau_theta: f64,
        members: I,
    ) -> Result<Conjugate, ModelError>
    where
        I: IntoIterator<Item = (&'a Curve, &'a BasisMatrix, f64, f64)>,
    {
        let p = self.shape_dim();
        let priors = &self.config.priors;
        let mut precision = &self.sigma * tau_theta;
        let mut mu = vec![0.0; p];
        let mut rr = 0.0;
        let mut n_obs = 0;
        let mut count = 0;
        for (curve, b, c, a) in members {
            count += 1;
            let r: Vec<f64> = curve.values.iter().map(|y| y - c).collect();
            b.add_gram(a * a, &mut precision);
            b.add_transpose_mul(a, &r, &mut mu);
            rr += r.iter().map(|x| x * x).sum::<f64>();
            n_obs += curve.len();
        }
        if count == 0 {
            return Err(ModelError::EmptyCluster);
        }
        let chol = factor_with_jitter(&precision)?;
        let mu = DVector::from_vec(mu);
        let mean = chol.solve(&mu);
        let quad = mu.dot(&mean);
        // r'r - mu' E^-1 mu is a minimum of a PSD quadratic form; clip rounding noise
        let rate = 0.5 * (rr - quad).max(0.0) + priors.b;
        let shape = 0.5 * n_obs as f64 + priors.a;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Conjugate {
            precision,
            mu,
            mean,
            shape,
            rate,
            n_obs,
            chol,
            log_det,
        })
    }

    /// `E_i`, `mu_i`, `a'_i`, `b'_i` for a single curve.
    pub fn conjugate_summaries(
        &self,
        curve: &Curve,
        params: &CurveParams,
        hypers: &Hyperparams,
    ) -> Result<Conjugate, ModelError> {
        let b = self.design_matrix(curve, &params.phi)?;
        self.summaries_from_parts(hypers.tau_theta, [(curve, &b, params.c, params.a)])
    }

    /// `E_k`, `mu_k` and the gamma shape/rate for all curves of one cluster.
    pub fn cluster_summaries(
        &self,
        members: &[(&Curve, &CurveParams)],
        hypers: &Hyperparams,
    ) -> Result<Conjugate, ModelError> {
        let designs = members
            .iter()
            .map(|(c, p)| self.design_matrix(c, &p.phi))
            .collect::<Result<Vec<_>, _>>()?;
        self.summaries_from_parts(
            hypers.tau_theta,
            members
                .iter()
                .zip(&designs)
                .map(|((c, p), b)| (*c, b, p.c, p.a)),
        )
    }

    /// `log int prod_i f(y_i | phi_i, eta) dG_0(eta)` given the summaries of
    /// the member curves.
    pub fn log_marginal(&self, conj: &Conjugate, tau_theta: f64) -> f64 {
        let priors = &self.config.priors;
        let p = self.shape_dim() as f64;
        -0.5 * conj.n_obs as f64 * (2.0 * PI).ln()
            + 0.5 * p * tau_theta.ln()
            + 0.5 * self.log_det_sigma
            - 0.5 * conj.log_det
            + priors.a * priors.b.ln()
            - ln_gamma(priors.a)
            + ln_gamma(conj.shape)
            - conj.shape * conj.rate.ln()
    }

    /// `log q_{i0}`: `log alpha` plus the log marginal likelihood of one curve.
    pub fn log_marginal_q0(
        &self,
        curve: &Curve,
        params: &CurveParams,
        hypers: &Hyperparams,
    ) -> Result<f64, ModelError> {
        let conj = self.conjugate_summaries(curve, params, hypers)?;
        Ok(hypers.alpha.ln() + self.log_marginal(&conj, hypers.tau_theta))
    }

    /// Draws a fresh atom from `G_i(eta | phi_i, y_i)`.
    pub fn draw_eta_conditional<R: Rng + ?Sized>(
        &self,
        curve: &Curve,
        params: &CurveParams,
        hypers: &Hyperparams,
        rng: &mut R,
    ) -> Result<ShapeAtom, ModelError> {
        Ok(self.conjugate_summaries(curve, params, hypers)?.draw(rng))
    }

    /// `(phi - phi_0)^T Omega (phi - phi_0)` for the first-order warp penalty.
    pub fn warp_penalty(&self, phi: &[f64]) -> f64 {
        let id = self.warp.identity();
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (p, z) in phi.iter().zip(id) {
            let d = p - z;
            acc += (d - prev) * (d - prev);
            prev = d;
        }
        acc
    }

    /// `theta^T Sigma theta` for the second-order shape penalty.
    pub fn shape_penalty(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for p in 0..theta.len() {
            let m1 = if p >= 1 { theta[p - 1] } else { 0.0 };
            let m2 = if p >= 2 { theta[p - 2] } else { 0.0 };
            let xi = theta[p] - 2.0 * m1 + m2;
            acc += xi * xi;
        }
        acc
    }
}

/// Cholesky factorization, retrying once with diagonal jitter of
/// `1e-10 * trace / dim`.
fn factor_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, ModelError> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let jitter = 1e-10 * m.trace() / m.nrows() as f64;
    let mut j = m.clone();
    for i in 0..j.nrows() {
        j[(i, i)] += jitter;
    }
    Cholesky::new(j).ok_or(ModelError::Singular)
}

/// One occupied cluster. `id` is unique over the life of a chain and keys the
/// per-curve warp copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u64,
    pub atom: ShapeAtom,
    pub size: usize,
}

/// Complete sampler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub clusters: Vec<Cluster>,
    pub curves: Vec<CurveParams>,
    pub hypers: Hyperparams,
    /// Per curve, the warp copy registered to each cluster id.
    pub warp_copies: Vec<BTreeMap<u64, Vec<f64>>>,
    pub next_cluster_id: u64,
}

impl ChainState {
    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.curves.iter().map(|c| c.label).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    pub fn atom_of(&self, curve: usize) -> &ShapeAtom {
        &self.clusters[self.curves[curve].label].atom
    }

    /// Audits labels, sizes, atoms and warp constraints.
    pub fn check(&self, model: &Model) -> Result<(), String> {
        let k = self.clusters.len();
        if k == 0 {
            return Err("no clusters".into());
        }
        let mut counts = vec![0usize; k];
        for (i, c) in self.curves.iter().enumerate() {
            if c.label >= k {
                return Err(format!(
                    "curve {i} has label {} but only {k} clusters",
                    c.label
                ));
            }
            counts[c.label] += 1;
            model
                .warp()
                .check(&c.phi)
                .map_err(|e| format!("curve {i}: {e}"))?;
            if model.config().positive_amplitude && !(c.a > 0.0) {
                return Err(format!("curve {i}: amplitude {} is not positive", c.a));
            }
        }
        for (j, cl) in self.clusters.iter().enumerate() {
            if cl.size != counts[j] {
                return Err(format!(
                    "cluster {j} records size {} but has {} members",
                    cl.size, counts[j]
                ));
            }
            if cl.size == 0 {
                return Err(format!("cluster {j} is empty"));
            }
            if !(cl.atom.tau > 0.0) || cl.atom.theta.iter().any(|t| !t.is_finite()) {
                return Err(format!("cluster {j} has an invalid atom"));
            }
        }
        for (i, copies) in self.warp_copies.iter().enumerate() {
            for (id, phi) in copies {
                model
                    .warp()
                    .check(phi)
                    .map_err(|e| format!("curve {i} copy for cluster {id}: {e}"))?;
            }
        }
        Ok(())
    }
}
