//! Metropolis-within-Gibbs posterior simulation.
//!
//! One iteration runs, in order: the joint label/atom/warp sweep over curves,
//! atom resampling, level/amplitude updates, hyperparameter updates and the
//! concentration update.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist;
use crate::model::{
    ChainState, Cluster, Curve, CurveParams, Dataset, Hyperparams, Mode, Model, ModelConfig,
    ModelError, ShapeAtom,
};
use crate::rng::{Purpose, StreamFactory};
use crate::splines::BasisMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid MCMC configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical failure at iteration {iteration}, curve {curve}: {message}")]
    Numerical {
        iteration: usize,
        curve: usize,
        message: String,
    },
    #[error("inconsistent state after {step} at iteration {iteration}: {message}")]
    State {
        iteration: usize,
        step: &'static str,
        message: String,
    },
    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Proposal scale for warp coefficients; half the mean warp knot gap when unset.
    pub warp_step: Option<f64>,
    /// Tune per-coordinate warp proposal scales during burn-in.
    pub adapt: bool,
    pub seed: u64,
    /// Evaluate the per-cluster warp copies of a curve concurrently.
    pub parallel_copies: bool,
    /// Audit the chain state after every step.
    pub check_state: bool,
    pub init: InitStrategy,
    pub warp_copies: CopyStrategy,
}

/// Lifecycle of the per-cluster warp copies used in the label update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyStrategy {
    /// Copies start each label update from the curve's current warp.
    #[default]
    Fresh,
    /// Copies persist across iterations per (curve, cluster).
    Persistent,
}

/// Starting partition of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Every curve in one cluster.
    #[default]
    OneCluster,
    /// Every curve in its own cluster.
    Singletons,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 10,
            warp_step: None,
            adapt: true,
            seed: 1,
            parallel_copies: false,
            check_state: cfg!(debug_assertions),
            init: InitStrategy::default(),
            warp_copies: CopyStrategy::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.burn_in >= self.iterations {
            return Err(SamplerError::InvalidConfig(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SamplerError::InvalidConfig(
                "thin must be at least 1".into(),
            ));
        }
        if let Some(s) = self.warp_step {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SamplerError::InvalidConfig(format!(
                    "warp_step must be >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub labels: Vec<usize>,
    pub atoms: Vec<ShapeAtom>,
    pub phi: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub hypers: Hyperparams,
    /// `log p(y_i | draw)` per curve.
    pub loglik: Vec<f64>,
}

impl Draw {
    pub fn num_clusters(&self) -> usize {
        self.atoms.len()
    }

    pub fn params(&self, i: usize) -> CurveParams {
        CurveParams {
            phi: self.phi[i].clone(),
            c: self.c[i],
            a: self.a[i],
            label: self.labels[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub draws: Vec<Draw>,
    /// Overall warp proposal acceptance rate after burn-in.
    pub warp_acceptance: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn num_curves(&self) -> usize {
        self.draws.first().map_or(0, |d| d.labels.len())
    }

    /// Counts of the number of clusters, indexed by K.
    pub fn k_histogram(&self) -> Vec<usize> {
        let kmax = self.draws.iter().map(Draw::num_clusters).max().unwrap_or(0);
        let mut h = vec![0; kmax + 1];
        for d in &self.draws {
            h[d.num_clusters()] += 1;
        }
        h
    }

    /// Most frequent K; ties go to the smaller K.
    pub fn k_mode(&self) -> usize {
        let h = self.k_histogram();
        let best = h.iter().copied().max().unwrap_or(0);
        h.iter().position(|&c| c == best).unwrap_or(0)
    }
}

/// Acceptance bookkeeping for one warp sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarpMove {
    pub proposed: usize,
    pub accepted: usize,
}

/// Context shared by the warp updates of one curve.
#[derive(Debug, Clone, Copy)]
pub struct WarpTarget<'a> {
    pub model: &'a Model,
    pub curve: &'a Curve,
    pub rows: &'a BasisMatrix,
    pub c: f64,
    pub a: f64,
    pub tau_phi: f64,
}

impl WarpTarget<'_> {
    fn log_target(&self, phi: &[f64], atom: &ShapeAtom) -> f64 {
        let rss = self
            .model
            .residual_ss(self.curve, self.rows, phi, self.c, self.a, &atom.theta);
        -0.5 * atom.tau * rss - 0.5 * self.tau_phi * self.model.warp_penalty(phi)
    }
}

/// One sweep of single-coordinate truncated-normal Metropolis-Hastings moves
/// on warp coefficients, targeting the curve likelihood under `atom` times the
/// first-order warp prior restricted to ordered coefficients. `steps[q]` is
/// the proposal scale for coordinate `q`; `counts[q]` accumulates acceptance.
pub fn mh_update_warp<R: Rng + ?Sized>(
    target: &WarpTarget<'_>,
    phi: &mut [f64],
    atom: &ShapeAtom,
    steps: &[f64],
    counts: &mut [WarpMove],
    rng: &mut R,
) -> WarpMove {
    let (blo, bhi) = target.model.warp().bounds();
    let q_len = phi.len();
    let mut total = WarpMove::default();
    let mut current = target.log_target(phi, atom);
    for q in 0..q_len {
        let s = steps[q];
        total.proposed += 1;
        counts[q].proposed += 1;
        if s == 0.0 {
            total.accepted += 1;
            counts[q].accepted += 1;
            continue;
        }
        let lo = if q == 0 { blo } else { phi[q - 1] };
        let hi = if q + 1 == q_len { bhi } else { phi[q + 1] };
        let old = phi[q];
        let new = dist::truncated_normal(rng, old, s, lo, hi);
        let lower_ok = if q == 0 { new >= lo } else { new > lo };
        let upper_ok = if q + 1 == q_len { new <= hi } else { new < hi };
        // the uniform is drawn unconditionally so stream positions do not
        // depend on the validity check
        let u: f64 = rng.random();
        if !(lower_ok && upper_ok) || new == old {
            continue;
        }
        let log_z_old = dist::log_normal_mass((lo - old) / s, (hi - old) / s);
        let log_z_new = dist::log_normal_mass((lo - new) / s, (hi - new) / s);
        phi[q] = new;
        let proposed = target.log_target(phi, atom);
        let log_ratio = proposed - current + log_z_old - log_z_new;
        if u.ln() < log_ratio {
            current = proposed;
            total.accepted += 1;
            counts[q].accepted += 1;
        } else {
            phi[q] = old;
        }
    }
    total
}

/// Chain driver: owns per-curve caches, proposal scales and random streams.
pub struct Sampler<'a> {
    model: &'a Model,
    data: &'a Dataset,
    config: McmcConfig,
    rows: Vec<BasisMatrix>,
    streams: StreamFactory,
    steps: Vec<Vec<f64>>,
    counts: Vec<Vec<WarpMove>>,
    post_burn: WarpMove,
}

const ADAPT_EVERY: usize = 50;

impl<'a> Sampler<'a> {
    pub fn new(
        model: &'a Model,
        data: &'a Dataset,
        config: McmcConfig,
    ) -> Result<Self, SamplerError> {
        config.validate()?;
        if data.is_empty() {
            return Err(ModelError::EmptyDataset.into());
        }
        model.check_data(data)?;
        let rows = data
            .curves
            .iter()
            .map(|c| model.warp_rows(c))
            .collect::<Result<Vec<_>, _>>()?;
        let step = config
            .warp_step
            .unwrap_or(0.5 * model.warp().mean_knot_gap());
        let q = model.warp_dim();
        Ok(Self {
            model,
            data,
            streams: StreamFactory::new(config.seed),
            rows,
            steps: vec![vec![step; q]; data.len()],
            counts: vec![vec![WarpMove::default(); q]; data.len()],
            post_burn: WarpMove::default(),
            config,
        })
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn warp_steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    /// Initial partition per [`InitStrategy`], identity warps, `c_i` at the
    /// curve mean, unit amplitudes and atoms drawn from their full
    /// conditionals. Registration-only chains always start with one cluster.
    pub fn initial_state(&self) -> Result<ChainState, SamplerError> {
        let n = self.data.len();
        let phi0 = self.model.identity_phi().to_vec();
        let singletons = self.config.init == InitStrategy::Singletons
            && self.model.mode() != Mode::RegistrationOnly;
        let curves: Vec<CurveParams> = self
            .data
            .curves
            .iter()
            .enumerate()
            .map(|(i, c)| CurveParams {
                phi: phi0.clone(),
                c: c.mean_value(),
                a: 1.0,
                label: if singletons { i } else { 0 },
            })
            .collect();
        let hypers = Hyperparams::default();
        let groups: Vec<Vec<usize>> = if singletons {
            (0..n).map(|i| vec![i]).collect()
        } else {
            vec![(0..n).collect()]
        };
        let mut clusters = Vec::with_capacity(groups.len());
        for (k, members) in groups.iter().enumerate() {
            let mut rng = self.streams.stream(0, Purpose::Init, k as u64, 0);
            let atom = self
                .cluster_conjugate(&curves, members, &hypers)?
                .draw(&mut rng);
            clusters.push(Cluster {
                id: k as u64,
                atom,
                size: members.len(),
            });
        }
        let warp_copies = curves
            .iter()
            .map(|p| BTreeMap::from([(p.label as u64, phi0.clone())]))
            .collect();
        Ok(ChainState {
            next_cluster_id: clusters.len() as u64,
            clusters,
            curves,
            hypers,
            warp_copies,
        })
    }

    fn cluster_conjugate(
        &self,
        curves: &[CurveParams],
        members: &[usize],
        hypers: &Hyperparams,
    ) -> Result<crate::model::Conjugate, ModelError> {
        let designs = members
            .iter()
            .map(|&i| self.model.design_from_rows(&self.rows[i], &curves[i].phi))
            .collect::<Result<Vec<_>, _>>()?;
        self.model.summaries_from_parts(
            hypers.tau_theta,
            members
                .iter()
                .zip(&designs)
                .map(|(&i, b)| (&self.data.curves[i], b, curves[i].c, curves[i].a)),
        )
    }

    fn curve_loglik(&self, i: usize, phi: &[f64], c: f64, a: f64, atom: &ShapeAtom) -> f64 {
        let curve = &self.data.curves[i];
        let rss = self
            .model
            .residual_ss(curve, &self.rows[i], phi, c, a, &atom.theta);
        Model::gaussian_loglik(curve.len(), atom.tau, rss)
    }

    fn check(
        &self,
        state: &ChainState,
        iteration: usize,
        step: &'static str,
    ) -> Result<(), SamplerError> {
        if self.config.check_state {
            state
                .check(self.model)
                .map_err(|message| SamplerError::State {
                    iteration,
                    step,
                    message,
                })?;
        }
        Ok(())
    }

    /// Joint update of `(phi_i, eta_i, s_i)` for every curve.
    pub fn step_labels(
        &mut self,
        state: &mut ChainState,
        iteration: usize,
    ) -> Result<(), SamplerError> {
        match self.model.mode() {
            Mode::RegistrationOnly => self.step_warps_single_cluster(state, iteration),
            Mode::Joint | Mode::ClusteringOnly => {
                for i in 0..state.curves.len() {
                    self.step_label_one(state, iteration, i, true)?;
                }
                Ok(())
            }
        }
    }

    /// Label sweep with the likelihood switched off, so the labels follow the
    /// Chinese restaurant process alone. Used to check the partition law.
    pub fn step_labels_prior_only(
        &mut self,
        state: &mut ChainState,
        iteration: usize,
    ) -> Result<(), SamplerError> {
        for i in 0..state.curves.len() {
            self.step_label_one(state, iteration, i, false)?;
        }
        Ok(())
    }

    fn step_warps_single_cluster(
        &mut self,
        state: &mut ChainState,
        iteration: usize,
    ) -> Result<(), SamplerError> {
        let atom = state.clusters[0].atom.clone();
        let id = state.clusters[0].id;
        for i in 0..state.curves.len() {
            let target = WarpTarget {
                model: self.model,
                curve: &self.data.curves[i],
                rows: &self.rows[i],
                c: state.curves[i].c,
                a: state.curves[i].a,
                tau_phi: state.hypers.tau_phi,
            };
            let mut rng = self
                .streams
                .stream(iteration as u64, Purpose::WarpCopy, i as u64, id);
            let mv = mh_update_warp(
                &target,
                &mut state.curves[i].phi,
                &atom,
                &self.steps[i],
                &mut self.counts[i],
                &mut rng,
            );
            if iteration >= self.config.burn_in {
                self.post_burn.proposed += mv.proposed;
                self.post_burn.accepted += mv.accepted;
            }
            state.warp_copies[i] = BTreeMap::from([(id, state.curves[i].phi.clone())]);
        }
        Ok(())
    }

    fn step_label_one(
        &mut self,
        state: &mut ChainState,
        iteration: usize,
        i: usize,
        use_data: bool,
    ) -> Result<(), SamplerError> {
        let registering = self.model.mode() == Mode::Joint;
        // take curve i out of its cluster
        let old = state.curves[i].label;
        state.clusters[old].size -= 1;
        if state.clusters[old].size == 0 {
            state.clusters.remove(old);
            for p in state.curves.iter_mut() {
                if p.label > old {
                    p.label -= 1;
                }
            }
        }
        let phi_prev = state.curves[i].phi.clone();
        let (c, a) = (state.curves[i].c, state.curves[i].a);

        // warp copies for the remaining clusters; newborn clusters start from
        // the current warp, copies of vanished clusters are dropped
        let copies = &mut state.warp_copies[i];
        let live: Vec<u64> = state.clusters.iter().map(|cl| cl.id).collect();
        copies.retain(|id, _| live.contains(id));
        for id in &live {
            if self.config.warp_copies == CopyStrategy::Fresh {
                copies.insert(*id, phi_prev.clone());
            } else {
                copies.entry(*id).or_insert_with(|| phi_prev.clone());
            }
        }
        let mut work: Vec<Vec<f64>> = live.iter().map(|id| copies[id].clone()).collect();

        let mut log_q: Vec<f64> = Vec::with_capacity(live.len() + 1);
        if registering && use_data {
            let target = WarpTarget {
                model: self.model,
                curve: &self.data.curves[i],
                rows: &self.rows[i],
                c,
                a,
                tau_phi: state.hypers.tau_phi,
            };
            let steps = &self.steps[i];
            let streams = &self.streams;
            let clusters = &state.clusters;
            let q_len = steps.len();
            let run = |(k, phi): (usize, &mut Vec<f64>)| {
                let mut counts = vec![WarpMove::default(); q_len];
                let mut rng = streams.stream(
                    iteration as u64,
                    Purpose::WarpCopy,
                    i as u64,
                    clusters[k].id,
                );
                let mv = mh_update_warp(
                    &target,
                    phi,
                    &clusters[k].atom,
                    steps,
                    &mut counts,
                    &mut rng,
                );
                (mv, counts)
            };
            let results: Vec<(WarpMove, Vec<WarpMove>)> =
                if self.config.parallel_copies && work.len() > 1 {
                    work.par_iter_mut().enumerate().map(run).collect()
                } else {
                    work.iter_mut().enumerate().map(run).collect()
                };
            for (mv, counts) in results {
                for (acc, c) in self.counts[i].iter_mut().zip(counts) {
                    acc.proposed += c.proposed;
                    acc.accepted += c.accepted;
                }
                if iteration >= self.config.burn_in {
                    self.post_burn.proposed += mv.proposed;
                    self.post_burn.accepted += mv.accepted;
                }
            }
        }
        for (k, cl) in state.clusters.iter().enumerate() {
            let ll = if use_data {
                self.curve_loglik(i, &work[k], c, a, &cl.atom)
            } else {
                0.0
            };
            log_q.push((cl.size as f64).ln() + ll);
        }

        // new-cluster weight uses the warp from the previous iteration
        let params_prev = CurveParams {
            phi: phi_prev.clone(),
            c,
            a,
            label: 0,
        };
        let conj = self
            .model
            .summaries_from_parts(
                state.hypers.tau_theta,
                [(
                    &self.data.curves[i],
                    &self
                        .model
                        .design_from_rows(&self.rows[i], &params_prev.phi)?,
                    c,
                    a,
                )],
            )
            .map_err(|source| SamplerError::AtIteration { iteration, source })?;
        let log_q0 = state.hypers.alpha.ln()
            + if use_data {
                self.model.log_marginal(&conj, state.hypers.tau_theta)
            } else {
                0.0
            };
        log_q.push(log_q0);

        let norm = dist::log_sum_exp(&log_q);
        if !norm.is_finite() {
            return Err(SamplerError::Numerical {
                iteration,
                curve: i,
                message: format!("cluster weights are not finite: {log_q:?}"),
            });
        }
        let mut rng = self
            .streams
            .stream(iteration as u64, Purpose::Label, i as u64, 0);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut choice = log_q.len() - 1;
        for (k, lq) in log_q.iter().enumerate() {
            acc += (lq - norm).exp();
            if u < acc {
                choice = k;
                break;
            }
        }

        let copies = &mut state.warp_copies[i];
        for (id, phi) in live.iter().zip(&work) {
            copies.insert(*id, phi.clone());
        }
        if choice == state.clusters.len() {
            let atom = conj.draw(&mut rng);
            let id = state.next_cluster_id;
            state.next_cluster_id += 1;
            state.clusters.push(Cluster { id, atom, size: 1 });
            state.curves[i].label = state.clusters.len() - 1;
            state.warp_copies[i].insert(id, phi_prev);
        } else {
            state.clusters[choice].size += 1;
            state.curves[i].label = choice;
            if registering && use_data {
                state.curves[i].phi = work[choice].clone();
            }
        }
        Ok(())
    }

    /// Redraws every atom from its full conditional given the members.
    pub fn resample_atoms(
        &self,
        state: &mut ChainState,
        iteration: usize,
    ) -> Result<(), SamplerError> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); state.clusters.len()];
        for (i, p) in state.curves.iter().enumerate() {
            members[p.label].push(i);
        }
        for (k, m) in members.iter().enumerate() {
            let conj = self
                .cluster_conjugate(&state.curves, m, &state.hypers)
                .map_err(|source| SamplerError::AtIteration { iteration, source })?;
            let mut rng =
                self.streams
                    .stream(iteration as u64, Purpose::Atom, state.clusters[k].id, 0);
            state.clusters[k].atom = conj.draw(&mut rng);
        }
        Ok(())
    }

    /// Gibbs updates of `c_i` then `a_i` for every curve.
    pub fn update_scalars(
        &self,
        state: &mut ChainState,
        iteration: usize,
    ) -> Result<(), SamplerError> {
        let h = state.hypers;
        let positive = self.model.config().positive_amplitude;
        for i in 0..state.curves.len() {
            let curve = &self.data.curves[i];
            let atom = state.clusters[state.curves[i].label].atom.clone();
            let b = self
                .model
                .design_from_rows(&self.rows[i], &state.curves[i].phi)
                .map_err(|source| SamplerError::AtIteration { iteration, source })?;
            let fit = b.mul_vec(&atom.theta);
            let mut rng = self
                .streams
                .stream(iteration as u64, Purpose::Scalar, i as u64, 0);
            let p = &mut state.curves[i];
            p.c = draw_level(curve, &fit, p.a, atom.tau, &h, &mut rng);
            p.a = draw_amplitude(curve, &fit, p.c, atom.tau, &h, positive, &mut rng);
        }
        Ok(())
    }

    /// Conjugate updates of `c_0, a_0, tau_c, tau_a, tau_theta, tau_phi`.
    pub fn update_hypers(&self, state: &mut ChainState, iteration: usize) {
        let mut rng = self.streams.stream(iteration as u64, Purpose::Hyper, 0, 0);
        let skip_phi = self.model.mode() == Mode::ClusteringOnly;
        update_hypers_with(self.model, state, skip_phi, &mut rng);
    }

    /// Auxiliary-variable update of the concentration parameter.
    pub fn update_alpha(&self, state: &mut ChainState, iteration: usize) {
        if self.model.mode() == Mode::RegistrationOnly {
            return;
        }
        let mut rng = self.streams.stream(iteration as u64, Purpose::Alpha, 0, 0);
        let p = self.model.priors();
        state.hypers.alpha = draw_alpha(
            state.hypers.alpha,
            state.clusters.len(),
            state.curves.len(),
            p.a_alpha,
            p.b_alpha,
            &mut rng,
        );
    }

    /// All five steps of one iteration.
    pub fn iterate(
        &mut self,
        state: &mut ChainState,
        iteration: usize,
    ) -> Result<(), SamplerError> {
        self.step_labels(state, iteration)?;
        self.check(state, iteration, "labels")?;
        self.resample_atoms(state, iteration)?;
        self.check(state, iteration, "atoms")?;
        self.update_scalars(state, iteration)?;
        self.check(state, iteration, "scalars")?;
        self.update_hypers(state, iteration);
        self.update_alpha(state, iteration);
        self.check(state, iteration, "hyperparameters")?;
        if self.config.adapt
            && iteration < self.config.burn_in
            && (iteration + 1) % ADAPT_EVERY == 0
        {
            self.adapt_steps();
        }
        Ok(())
    }

    fn adapt_steps(&mut self) {
        // a coordinate pinned against a bound accepts almost every proposal;
        // growing its step past the warp range gains nothing
        let (lo, hi) = self.model.warp().bounds();
        let max_step = hi - lo;
        for (steps, counts) in self.steps.iter_mut().zip(self.counts.iter_mut()) {
            for (s, c) in steps.iter_mut().zip(counts.iter_mut()) {
                if c.proposed == 0 {
                    continue;
                }
                let rate = c.accepted as f64 / c.proposed as f64;
                if rate < 0.25 {
                    *s *= 0.7;
                } else if rate > 0.45 {
                    *s = (*s * 1.3).min(max_step);
                }
                *c = WarpMove::default();
            }
        }
    }

    pub fn record(&self, state: &ChainState, iteration: usize) -> Draw {
        let loglik = (0..state.curves.len())
            .map(|i| {
                let p = &state.curves[i];
                self.curve_loglik(i, &p.phi, p.c, p.a, &state.clusters[p.label].atom)
            })
            .collect();
        Draw {
            iteration,
            labels: state.labels(),
            atoms: state.clusters.iter().map(|c| c.atom.clone()).collect(),
            phi: state.curves.iter().map(|p| p.phi.clone()).collect(),
            c: state.curves.iter().map(|p| p.c).collect(),
            a: state.curves.iter().map(|p| p.a).collect(),
            hypers: state.hypers,
            loglik,
        }
    }

    /// Runs the configured number of iterations from the default initial state.
    pub fn run(&mut self) -> Result<Trace, SamplerError> {
        let mut state = self.initial_state()?;
        self.run_from(&mut state)
    }

    pub fn run_from(&mut self, state: &mut ChainState) -> Result<Trace, SamplerError> {
        let mut draws = Vec::with_capacity(self.config.num_draws());
        for it in 0..self.config.iterations {
            self.iterate(state, it)?;
            if it >= self.config.burn_in && (it - self.config.burn_in + 1) % self.config.thin == 0 {
                draws.push(self.record(state, it));
            }
        }
        let warp_acceptance = if self.post_burn.proposed > 0 {
            self.post_burn.accepted as f64 / self.post_burn.proposed as f64
        } else {
            1.0
        };
        Ok(Trace {
            draws,
            warp_acceptance,
        })
    }
}

/// Full-conditional draw of the level `c` given amplitude `a` and fitted
/// shape values `fit = B_i theta`.
pub fn draw_level<R: Rng + ?Sized>(
    curve: &Curve,
    fit: &[f64],
    a: f64,
    tau: f64,
    h: &Hyperparams,
    rng: &mut R,
) -> f64 {
    let n = curve.len() as f64;
    let resid_sum: f64 = curve.values.iter().zip(fit).map(|(y, f)| y - a * f).sum();
    let prec = h.tau_c + n * tau;
    let mean = (h.tau_c * h.c0 + tau * resid_sum) / prec;
    mean + dist::std_normal(rng) / prec.sqrt()
}

/// Full-conditional draw of the amplitude `a` given level `c`, truncated to
/// positive values when `positive` is set.
pub fn draw_amplitude<R: Rng + ?Sized>(
    curve: &Curve,
    fit: &[f64],
    c: f64,
    tau: f64,
    h: &Hyperparams,
    positive: bool,
    rng: &mut R,
) -> f64 {
    let ff: f64 = fit.iter().map(|f| f * f).sum();
    let fy: f64 = curve.values.iter().zip(fit).map(|(y, f)| f * (y - c)).sum();
    let prec = h.tau_a + tau * ff;
    let mean = (h.tau_a * h.a0 + tau * fy) / prec;
    let sd = 1.0 / prec.sqrt();
    if positive {
        dist::truncated_normal(rng, mean, sd, 0.0, f64::INFINITY).max(f64::MIN_POSITIVE)
    } else {
        mean + sd * dist::std_normal(rng)
    }
}

/// Conjugate hyperparameter updates shared by the sampler and diagnostics.
pub fn update_hypers_with<R: Rng + ?Sized>(
    model: &Model,
    state: &mut ChainState,
    skip_phi: bool,
    rng: &mut R,
) {
    let p = *model.priors();
    let n = state.curves.len() as f64;
    let h = &mut state.hypers;

    let sum_c: f64 = state.curves.iter().map(|c| c.c).sum();
    let prec = p.tau_c0 + n * h.tau_c;
    h.c0 = h.tau_c * sum_c / prec + dist::std_normal(rng) / prec.sqrt();

    let sum_a: f64 = state.curves.iter().map(|c| c.a).sum();
    let prec = p.tau_a0 + n * h.tau_a;
    h.a0 = (p.tau_a0 + h.tau_a * sum_a) / prec + dist::std_normal(rng) / prec.sqrt();

    let ss_c: f64 = state.curves.iter().map(|c| (c.c - h.c0).powi(2)).sum();
    h.tau_c = dist::gamma(rng, p.a_c + 0.5 * n, p.b_c + 0.5 * ss_c);

    let ss_a: f64 = state.curves.iter().map(|c| (c.a - h.a0).powi(2)).sum();
    h.tau_a = dist::gamma(rng, p.a_a + 0.5 * n, p.b_a + 0.5 * ss_a);

    let k = state.clusters.len() as f64;
    let dim_theta = model.shape_dim() as f64;
    let ss_theta: f64 = state
        .clusters
        .iter()
        .map(|cl| cl.atom.tau * model.shape_penalty(&cl.atom.theta))
        .sum();
    h.tau_theta = dist::gamma(
        rng,
        p.a_theta + 0.5 * k * dim_theta,
        p.b_theta + 0.5 * ss_theta,
    );

    if !skip_phi {
        let dim_phi = model.warp_dim() as f64;
        let ss_phi: f64 = state
            .curves
            .iter()
            .map(|c| model.warp_penalty(&c.phi))
            .sum();
        h.tau_phi = dist::gamma(rng, p.a_phi + 0.5 * n * dim_phi, p.b_phi + 0.5 * ss_phi);
    }
}

/// Mixing weight of the `Ga(a_alpha + K, .)` component given the auxiliary
/// draw `x`.
pub fn alpha_mixing_weight(x: f64, k: usize, n: usize, a_alpha: f64, b_alpha: f64) -> f64 {
    let odds = (a_alpha + k as f64 - 1.0) / (n as f64 * (b_alpha - x.ln()));
    odds / (1.0 + odds)
}

/// Draws `alpha | K` via the auxiliary `x ~ Beta(alpha + 1, N)` and a
/// two-component gamma mixture.
pub fn draw_alpha<R: Rng + ?Sized>(
    alpha: f64,
    k: usize,
    n: usize,
    a_alpha: f64,
    b_alpha: f64,
    rng: &mut R,
) -> f64 {
    let x = Beta::new(alpha + 1.0, n as f64)
        .expect("beta parameters are positive")
        .sample(rng)
        .max(f64::MIN_POSITIVE);
    let pi = alpha_mixing_weight(x, k, n, a_alpha, b_alpha);
    let rate = b_alpha - x.ln();
    let u: f64 = rng.random();
    let shape = if u < pi {
        a_alpha + k as f64
    } else {
        a_alpha + k as f64 - 1.0
    };
    dist::gamma(rng, shape, rate)
}

/// Builds the model, runs one chain and returns its trace.
pub fn run_chain(
    data: &Dataset,
    model: ModelConfig,
    mcmc: McmcConfig,
) -> Result<Trace, SamplerError> {
    let model = Model::new(model)?;
    Sampler::new(&model, data, mcmc)?.run()
}
