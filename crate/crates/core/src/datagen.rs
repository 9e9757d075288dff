//! Engineered curves with known clusters, warps, levels and amplitudes.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{gamma, std_normal};
use crate::model::{
    ChainState, Cluster, Curve, CurveParams, Dataset, Hyperparams, Mode, Model, ModelError,
    ShapeAtom,
};
use crate::splines::{identity_phi, KnotVector, SplineError, WarpBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("shape index must be 1..=4, got {0}")]
    InvalidShape(usize),
    #[error("invalid simulation spec: field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("no ordered warp after {0} proposals; the warp scale is too large")]
    RejectionBudget(usize),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The four cluster shapes; shape 4 is a pure-noise cluster.
pub fn true_shape(k: usize, t: f64) -> Result<f64, DatagenError> {
    match k {
        1 => Ok((t / 4.0).cos() + (t / 4.0).sin()),
        2 => Ok((t / 8.0).cos()),
        3 => Ok((t / 2.0).sin()),
        4 => Ok(0.0),
        _ => Err(DatagenError::InvalidShape(k)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    /// Number of curves drawn from shapes 1, 2, ... in order.
    pub cluster_sizes: Vec<usize>,
    pub times: Vec<f64>,
    pub level_sd: f64,
    pub amplitude_mean: f64,
    pub amplitude_sd: f64,
    pub noise_sd: f64,
    /// Standard deviation of the first differences of `phi - phi_0`.
    pub warp_sd: f64,
    pub warp_interior: Vec<f64>,
    pub warp_degree: usize,
    pub max_rejections: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            cluster_sizes: vec![12, 11, 11, 11],
            times: (0..21).map(|j| j as f64).collect(),
            level_sd: 0.3,
            amplitude_mean: 1.0,
            amplitude_sd: 0.3,
            noise_sd: 0.3,
            warp_sd: 0.5,
            warp_interior: vec![10.0],
            warp_degree: 3,
            max_rejections: 100_000,
            seed: 1,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |field, reason: &str| {
            Err(DatagenError::InvalidSpec {
                field,
                reason: reason.into(),
            })
        };
        if self.cluster_sizes.is_empty() || self.cluster_sizes.len() > 4 {
            return bad("cluster_sizes", "between 1 and 4 clusters are supported");
        }
        if self.cluster_sizes.iter().all(|&s| s == 0) {
            return bad("cluster_sizes", "at least one curve is required");
        }
        if self.times.len() < 2 || self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(
                "times",
                "at least two strictly increasing time points are required",
            );
        }
        for (field, v) in [
            ("level_sd", self.level_sd),
            ("amplitude_sd", self.amplitude_sd),
            ("noise_sd", self.noise_sd),
            ("warp_sd", self.warp_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, "must be a finite non-negative number");
            }
        }
        if !self.amplitude_mean.is_finite() {
            return bad("amplitude_mean", "must be finite");
        }
        if self.max_rejections == 0 {
            return bad("max_rejections", "must be at least 1");
        }
        Ok(())
    }

    pub fn num_curves(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    pub fn warp_basis(&self) -> Result<WarpBasis, DatagenError> {
        let lo = self.times[0];
        let hi = *self.times.last().unwrap();
        let kv = KnotVector::new(lo, hi, self.warp_interior.clone(), self.warp_degree)?;
        Ok(WarpBasis::new(kv, 0.0)?)
    }
}

/// Generating parameters and noiseless curves of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Zero-based cluster labels; label `k` uses shape `k + 1`.
    pub labels: Vec<usize>,
    pub phi: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    /// Noiseless values at the observation times.
    pub clean: Vec<Vec<f64>>,
}

/// Draws first-difference perturbations of the identity coefficients until
/// they respect the ordering and the endpoint bounds.
fn draw_warp(
    spec: &SimSpec,
    warp: &WarpBasis,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, DatagenError> {
    let id = warp.identity();
    for _ in 0..spec.max_rejections {
        let mut d = 0.0;
        let phi: Vec<f64> = id
            .iter()
            .map(|z| {
                d += spec.warp_sd * std_normal(rng);
                z + d
            })
            .collect();
        if warp.check(&phi).is_ok() {
            return Ok(phi);
        }
    }
    Err(DatagenError::RejectionBudget(spec.max_rejections))
}

pub fn simulate(spec: &SimSpec) -> Result<(Dataset, Truth), DatagenError> {
    spec.validate()?;
    let warp = spec.warp_basis()?;
    debug_assert_eq!(warp.identity(), identity_phi(warp.knots()).as_slice());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_curves();
    let width = n.to_string().len().max(2);
    let mut truth = Truth {
        labels: Vec::new(),
        phi: Vec::new(),
        c: Vec::new(),
        a: Vec::new(),
        clean: Vec::new(),
    };
    let mut curves = Vec::with_capacity(n);
    for (k, &size) in spec.cluster_sizes.iter().enumerate() {
        for _ in 0..size {
            let phi = draw_warp(spec, &warp, &mut rng)?;
            let c = spec.level_sd * std_normal(&mut rng);
            let a = loop {
                let a = spec.amplitude_mean + spec.amplitude_sd * std_normal(&mut rng);
                if a > 0.0 {
                    break a;
                }
            };
            let mu = warp.eval(&phi, &spec.times)?;
            let clean = mu
                .iter()
                .map(|&m| true_shape(k + 1, m).map(|f| c + a * f))
                .collect::<Result<Vec<_>, _>>()?;
            let values = clean
                .iter()
                .map(|v| v + spec.noise_sd * std_normal(&mut rng))
                .collect();
            let id = format!("curve_{:0width$}", curves.len() + 1);
            curves.push(Curve::new(id, spec.times.clone(), values)?);
            truth.labels.push(k);
            truth.phi.push(phi);
            truth.c.push(c);
            truth.a.push(a);
            truth.clean.push(clean);
        }
    }
    Ok((Dataset::new(curves)?, truth))
}

/// Draws every parameter from the prior of `model`: hyperparameters, a
/// Chinese restaurant partition, atoms from the base measure, truncated warps
/// and scalars. Registration-only models use one cluster; clustering-only
/// models keep identity warps.
pub fn prior_state<R: Rng + ?Sized>(
    model: &Model,
    num_curves: usize,
    max_rejections: usize,
    rng: &mut R,
) -> Result<ChainState, DatagenError> {
    let p = *model.priors();
    let mut h = Hyperparams {
        alpha: gamma(rng, p.a_alpha, p.b_alpha),
        c0: std_normal(rng) / p.tau_c0.sqrt(),
        a0: 1.0 + std_normal(rng) / p.tau_a0.sqrt(),
        tau_c: gamma(rng, p.a_c, p.b_c),
        tau_a: gamma(rng, p.a_a, p.b_a),
        tau_theta: gamma(rng, p.a_theta, p.b_theta),
        tau_phi: gamma(rng, p.a_phi, p.b_phi),
    };
    if model.mode() == Mode::RegistrationOnly {
        h.alpha = 1.0;
    }
    let mut sizes: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(num_curves);
    for i in 0..num_curves {
        let k = if model.mode() == Mode::RegistrationOnly || i == 0 {
            0
        } else {
            let u = rng.random::<f64>() * (i as f64 + h.alpha);
            let mut acc = 0.0;
            sizes
                .iter()
                .position(|&s| {
                    acc += s as f64;
                    u < acc
                })
                .unwrap_or(sizes.len())
        };
        if k == sizes.len() {
            sizes.push(0);
        }
        sizes[k] += 1;
        labels.push(k);
    }
    let chol = model
        .sigma()
        .clone()
        .cholesky()
        .ok_or(ModelError::Singular)?;
    let clusters = sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let tau = gamma(rng, p.a, p.b);
            let z = DVector::from_fn(model.shape_dim(), |_, _| std_normal(rng));
            // L^T theta = z gives precision L L^T, scaled by tau_theta tau
            let theta = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or(ModelError::Singular)?
                / (h.tau_theta * tau).sqrt();
            Ok(Cluster {
                id: k as u64,
                atom: ShapeAtom {
                    theta: theta.as_slice().to_vec(),
                    tau,
                },
                size,
            })
        })
        .collect::<Result<Vec<_>, DatagenError>>()?;
    let warp = model.warp();
    let mut curves = Vec::with_capacity(num_curves);
    for &label in &labels {
        let phi = if model.mode() == Mode::ClusteringOnly {
            warp.identity().to_vec()
        } else {
            prior_warp(warp, h.tau_phi, max_rejections, rng)?
        };
        let c = h.c0 + std_normal(rng) / h.tau_c.sqrt();
        let mut a = h.a0 + std_normal(rng) / h.tau_a.sqrt();
        let mut tries = 0;
        while model.config().positive_amplitude && a <= 0.0 {
            tries += 1;
            if tries > max_rejections {
                return Err(DatagenError::RejectionBudget(max_rejections));
            }
            a = h.a0 + std_normal(rng) / h.tau_a.sqrt();
        }
        curves.push(CurveParams { phi, c, a, label });
    }
    let warp_copies = curves
        .iter()
        .map(|p| BTreeMap::from([(p.label as u64, p.phi.clone())]))
        .collect();
    Ok(ChainState {
        next_cluster_id: clusters.len() as u64,
        clusters,
        curves,
        hypers: h,
        warp_copies,
    })
}

/// Warp coefficients from the first-difference prior with precision
/// `tau_phi`, truncated to the ordered, bounded set by rejection.
pub fn prior_warp<R: Rng + ?Sized>(
    warp: &WarpBasis,
    tau_phi: f64,
    max_rejections: usize,
    rng: &mut R,
) -> Result<Vec<f64>, DatagenError> {
    let sd = 1.0 / tau_phi.sqrt();
    for _ in 0..max_rejections {
        let mut d = 0.0;
        let phi: Vec<f64> = warp
            .identity()
            .iter()
            .map(|z| {
                d += sd * std_normal(rng);
                z + d
            })
            .collect();
        if warp.check(&phi).is_ok() {
            return Ok(phi);
        }
    }
    Err(DatagenError::RejectionBudget(max_rejections))
}

/// Replaces the values of `data` by a fresh draw of the likelihood given
/// `state`, keeping ids and times.
pub fn resimulate<R: Rng + ?Sized>(
    model: &Model,
    state: &ChainState,
    data: &Dataset,
    rng: &mut R,
) -> Result<Dataset, DatagenError> {
    let curves = data
        .curves
        .iter()
        .zip(&state.curves)
        .map(|(curve, p)| {
            let atom = &state.clusters[p.label].atom;
            let fit = model.design_matrix(curve, &p.phi)?.mul_vec(&atom.theta);
            let sd = 1.0 / atom.tau.sqrt();
            let values = fit
                .iter()
                .map(|f| p.c + p.a * f + sd * std_normal(rng))
                .collect();
            Ok(Curve::new(curve.id.clone(), curve.times.clone(), values)?)
        })
        .collect::<Result<Vec<_>, DatagenError>>()?;
    Ok(Dataset::new(curves)?)
}
