//! Self-consistency checks of the sampler against its prior.
//!
//! [`geweke`] alternates one sampler transition with a fresh draw of the data
//! given the parameters. If every step leaves the posterior invariant, the
//! parameter marginals of that chain equal the prior. [`crp_law`] runs the
//! label sweep with the likelihood switched off and compares partition
//! frequencies with the exact Chinese restaurant probabilities.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::datagen::{prior_state, resimulate, DatagenError};
use crate::model::{Curve, Dataset, Hyperparams, Model};
use crate::posterior::canonical_labels;
use crate::sampler::{McmcConfig, Sampler, SamplerError};

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error("{0}")]
    Invalid(String),
}

/// One monitored quantity: its prior mean and the chain's estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub name: &'static str,
    pub prior_mean: f64,
    pub chain_mean: f64,
    /// Batch-means Monte Carlo standard error of `chain_mean`.
    pub mc_se: f64,
}

impl MomentCheck {
    pub fn z(&self) -> f64 {
        (self.chain_mean - self.prior_mean) / self.mc_se
    }
}

/// Mean and batch-means standard error; the chain is cut into `batches`
/// equal blocks and the tail is dropped.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let len = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks_exact(len)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    let b = means.len() as f64;
    let m = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1.0);
    (m, (var / b).sqrt())
}

/// Successive-conditional simulator over `iterations` steps for curves
/// observed at `times`. Monitors `alpha, tau_theta, tau_phi, c0, a0`.
pub fn geweke(
    model: &Model,
    times: &[Vec<f64>],
    mut mcmc: McmcConfig,
    iterations: usize,
    batches: usize,
) -> Result<Vec<MomentCheck>, CheckError> {
    if iterations < 2 * batches || batches < 2 {
        return Err(CheckError::Invalid(format!(
            "{iterations} iterations cannot form {batches} batches"
        )));
    }
    mcmc.iterations = iterations;
    mcmc.burn_in = 0;
    mcmc.adapt = false;
    let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed ^ 0x6765_7765_6b65);
    let mut state = prior_state(model, times.len(), 100_000, &mut rng)?;
    let template = Dataset::new(
        times
            .iter()
            .enumerate()
            .map(|(i, t)| Curve::new(format!("g{i}"), t.clone(), vec![0.0; t.len()]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(SamplerError::from)?,
    )
    .map_err(SamplerError::from)?;
    let mut data = resimulate(model, &state, &template, &mut rng)?;
    let mut trace: Vec<Hyperparams> = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let mut sampler = Sampler::new(model, &data, mcmc.clone())?;
        sampler.iterate(&mut state, it)?;
        data = resimulate(model, &state, &data, &mut rng)?;
        trace.push(state.hypers);
    }
    let p = model.priors();
    let monitored: [(&'static str, f64, fn(&Hyperparams) -> f64); 5] = [
        ("alpha", p.a_alpha / p.b_alpha, |h| h.alpha),
        ("tau_theta", p.a_theta / p.b_theta, |h| h.tau_theta),
        ("tau_phi", p.a_phi / p.b_phi, |h| h.tau_phi),
        ("c0", 0.0, |h| h.c0),
        ("a0", 1.0, |h| h.a0),
    ];
    Ok(monitored
        .into_iter()
        .map(|(name, prior_mean, get)| {
            let xs: Vec<f64> = trace.iter().map(get).collect();
            let (chain_mean, mc_se) = batch_means(&xs, batches);
            MomentCheck {
                name,
                prior_mean,
                chain_mean,
                mc_se,
            }
        })
        .collect())
}

/// All set partitions of `n` items in canonical label form.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, k: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=k {
            prefix.push(l);
            extend(prefix, k.max(l + 1), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        extend(&mut vec![0], 1, n, &mut out);
    }
    out
}

/// Exact Chinese restaurant probability of a partition.
pub fn crp_probability(labels: &[usize], alpha: f64) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let n = labels.len() as f64;
    let log = k as f64 * alpha.ln()
        + sizes.iter().map(|&s| ln_gamma(s as f64)).sum::<f64>()
        + ln_gamma(alpha)
        - ln_gamma(alpha + n);
    log.exp()
}

/// Empirical and exact probabilities of every partition of the curves of
/// `data` under label sweeps without likelihood, with `alpha` held fixed.
pub fn crp_law(
    model: &Model,
    data: &Dataset,
    mcmc: McmcConfig,
    alpha: f64,
    sweeps: usize,
) -> Result<Vec<(Vec<usize>, f64, f64)>, CheckError> {
    let mut sampler = Sampler::new(model, data, mcmc)?;
    let mut state = sampler.initial_state()?;
    state.hypers.alpha = alpha;
    let mut tally: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for it in 0..sweeps {
        sampler.step_labels_prior_only(&mut state, it)?;
        *tally.entry(canonical_labels(&state.labels())).or_default() += 1;
    }
    Ok(set_partitions(data.len())
        .into_iter()
        .map(|p| {
            let got = tally.get(&p).copied().unwrap_or(0) as f64 / sweeps as f64;
            let want = crp_probability(&p, alpha);
            (p, got, want)
        })
        .collect())
}
