//! Post-processing of a trace: partition estimates, functional summaries with
//! credible bands, predictive diagnostics and agreement scores.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dist::log_sum_exp;
use crate::model::{Curve, CurveParams, Dataset, Model, ModelError};
use crate::sampler::{Draw, Trace};
use crate::splines::{eval_basis, OutOfDomain, SplineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosteriorError {
    #[error("trace has no draws")]
    EmptyTrace,
    #[error("unknown curve index {0}")]
    UnknownCurve(usize),
    #[error("unknown cluster {0} in the reference partition")]
    UnknownCluster(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} items")]
    TooFew(usize),
    #[error("curve {0} has zero likelihood under every draw")]
    ZeroLikelihood(usize),
    #[error("band level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("reference cluster {0} is not matched in any draw")]
    Unmatched(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMethod {
    Map,
    Dahl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    pub labels: Vec<usize>,
    pub criterion: f64,
    pub method: PartitionMethod,
    /// Index of the trace draw the partition was taken from.
    pub draw: usize,
}

impl PartitionEstimate {
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Pointwise,
    #[default]
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kind: BandKind,
    pub level: f64,
    /// Number of draws the summary is based on.
    pub draws: usize,
}

impl FunctionalSummary {
    /// Whether `f` lies inside the band at every grid point.
    pub fn covers(&self, f: &[f64]) -> bool {
        f.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

/// Relabels a partition by order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn check_trace(trace: &Trace) -> Result<(), PosteriorError> {
    if trace.is_empty() {
        Err(PosteriorError::EmptyTrace)
    } else {
        Ok(())
    }
}

/// Log probability of a partition under the Chinese restaurant process.
pub fn crp_log_prior(labels: &[usize], alpha: f64) -> f64 {
    let n = labels.len() as f64;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let occupied: Vec<usize> = sizes.into_iter().filter(|&s| s > 0).collect();
    occupied.len() as f64 * alpha.ln()
        + occupied.iter().map(|&s| ln_gamma(s as f64)).sum::<f64>()
        + ln_gamma(alpha)
        - ln_gamma(alpha + n)
}

/// Collapsed score of a draw's partition: CRP log prior plus the cluster log
/// marginal likelihoods with the draw's warps, levels and amplitudes.
pub fn partition_score(model: &Model, data: &Dataset, draw: &Draw) -> Result<f64, PosteriorError> {
    let mut score = crp_log_prior(&draw.labels, draw.hypers.alpha);
    let params: Vec<CurveParams> = (0..draw.labels.len()).map(|i| draw.params(i)).collect();
    for k in 0..draw.num_clusters() {
        let members: Vec<(&Curve, &CurveParams)> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == k)
            .map(|(i, p)| (&data.curves[i], p))
            .collect();
        let conj = model.cluster_summaries(&members, &draw.hypers)?;
        score += model.log_marginal(&conj, draw.hypers.tau_theta);
    }
    Ok(score)
}

/// Sampled partition with the highest collapsed score; ties go to the
/// earliest draw.
pub fn map_partition(
    trace: &Trace,
    data: &Dataset,
    model: &Model,
) -> Result<PartitionEstimate, PosteriorError> {
    check_trace(trace)?;
    let scores = trace
        .draws
        .par_iter()
        .map(|d| partition_score(model, data, d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (j, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = j;
        }
    }
    Ok(PartitionEstimate {
        labels: canonical_labels(&trace.draws[best].labels),
        criterion: scores[best],
        method: PartitionMethod::Map,
        draw: best,
    })
}

/// Fraction of draws in which curves `i` and `j` share a cluster.
pub fn pairwise_prob_matrix(trace: &Trace) -> Result<DMatrix<f64>, PosteriorError> {
    check_trace(trace)?;
    let n = trace.num_curves();
    let mut counts = DMatrix::<u64>::zeros(n, n);
    for d in &trace.draws {
        for i in 0..n {
            for j in 0..n {
                if d.labels[i] == d.labels[j] {
                    counts[(i, j)] += 1;
                }
            }
        }
    }
    let m = trace.len() as f64;
    Ok(counts.map(|c| c as f64 / m))
}

/// Squared Frobenius distance between a partition's association matrix and `p`.
pub fn association_distance(labels: &[usize], p: &DMatrix<f64>) -> f64 {
    let n = labels.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            acc += (a - p[(i, j)]).powi(2);
        }
    }
    acc
}

/// Least-squares clustering: the sampled partition closest to the pairwise
/// probability matrix; ties go to the earliest draw.
pub fn dahl_partition(trace: &Trace) -> Result<PartitionEstimate, PosteriorError> {
    let p = pairwise_prob_matrix(trace)?;
    let mut best = (0, f64::INFINITY);
    for (j, d) in trace.draws.iter().enumerate() {
        let dist = association_distance(&d.labels, &p);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    Ok(PartitionEstimate {
        labels: canonical_labels(&trace.draws[best.0].labels),
        criterion: best.1,
        method: PartitionMethod::Dahl,
        draw: best.0,
    })
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> Result<f64, PosteriorError> {
    if a.len() != b.len() {
        return Err(PosteriorError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(PosteriorError::TooFew(2));
    }
    let a = canonical_labels(a);
    let b = canonical_labels(b);
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (x, y) in a.iter().zip(&b) {
        table[*x][*y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&n| choose2(n)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn check_level(level: f64) -> Result<(), PosteriorError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(PosteriorError::InvalidLevel(level))
    }
}

/// Posterior mean and credible band from function draws evaluated on `grid`.
/// A single draw gives a zero-width band.
pub fn credible_band(
    draws: &[Vec<f64>],
    grid: &[f64],
    level: f64,
    kind: BandKind,
) -> Result<FunctionalSummary, PosteriorError> {
    check_level(level)?;
    if draws.is_empty() {
        return Err(PosteriorError::TooFew(1));
    }
    let g = grid.len();
    if let Some(bad) = draws.iter().find(|d| d.len() != g) {
        return Err(PosteriorError::LengthMismatch(bad.len(), g));
    }
    let m = draws.len();
    let mf = m as f64;
    let mean: Vec<f64> = (0..g)
        .map(|t| draws.iter().map(|d| d[t]).sum::<f64>() / mf)
        .collect();

    let tail = 0.5 * (1.0 - level);
    let lo_idx = (tail * (m - 1) as f64).floor() as usize;
    let hi_idx = ((1.0 - tail) * (m - 1) as f64).ceil() as usize;
    let mut lower = Vec::with_capacity(g);
    let mut upper = Vec::with_capacity(g);
    let mut col = vec![0.0; m];
    for t in 0..g {
        for (c, d) in col.iter_mut().zip(draws) {
            *c = d[t];
        }
        col.sort_by(f64::total_cmp);
        lower.push(col[lo_idx]);
        upper.push(col[hi_idx]);
    }

    if kind == BandKind::Simultaneous && m > 1 {
        let sd: Vec<f64> = (0..g)
            .map(|t| {
                (draws.iter().map(|d| (d[t] - mean[t]).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
            })
            .collect();
        let scale = sd.iter().copied().fold(0.0, f64::max);
        let active: Vec<usize> = (0..g)
            .filter(|&t| sd[t] > 1e-12 * scale.max(f64::MIN_POSITIVE))
            .collect();
        if !active.is_empty() {
            let mut maxdev: Vec<f64> = draws
                .iter()
                .map(|d| {
                    active
                        .iter()
                        .map(|&t| (d[t] - mean[t]).abs() / sd[t])
                        .fold(0.0, f64::max)
                })
                .collect();
            maxdev.sort_by(f64::total_cmp);
            let q = maxdev[(level * (m - 1) as f64).ceil() as usize];
            for &t in &active {
                lower[t] = lower[t].min(mean[t] - q * sd[t]);
                upper[t] = upper[t].max(mean[t] + q * sd[t]);
            }
        }
    }
    for t in 0..g {
        lower[t] = lower[t].min(mean[t]);
        upper[t] = upper[t].max(mean[t]);
    }
    Ok(FunctionalSummary {
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
        kind,
        level,
        draws: m,
    })
}

/// Evaluates `B_m(x)^T theta` at latent times `x`, clamped to the shape domain.
pub fn eval_shape(model: &Model, theta: &[f64], x: &[f64]) -> Result<Vec<f64>, PosteriorError> {
    let b = eval_basis(model.shape_knots(), x, OutOfDomain::Clamp)?;
    Ok(b.mul_vec(theta))
}

/// Posterior draws of curve `i`'s warp on `grid`.
pub fn warp_draws(
    trace: &Trace,
    model: &Model,
    i: usize,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, PosteriorError> {
    check_trace(trace)?;
    if i >= trace.num_curves() {
        return Err(PosteriorError::UnknownCurve(i));
    }
    trace
        .draws
        .iter()
        .map(|d| Ok(model.warp().eval(&d.phi[i], grid)?))
        .collect()
}

pub fn warp_mean(
    trace: &Trace,
    model: &Model,
    i: usize,
    grid: &[f64],
    level: f64,
    kind: BandKind,
) -> Result<FunctionalSummary, PosteriorError> {
    credible_band(&warp_draws(trace, model, i, grid)?, grid, level, kind)
}

/// Posterior draws of curve `i`'s fitted profile `c_i + a_i m(mu_i(t))`.
pub fn curve_draws(
    trace: &Trace,
    model: &Model,
    i: usize,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, PosteriorError> {
    check_trace(trace)?;
    if i >= trace.num_curves() {
        return Err(PosteriorError::UnknownCurve(i));
    }
    trace
        .draws
        .iter()
        .map(|d| {
            let warped = model.warp().eval(&d.phi[i], grid)?;
            let f = eval_shape(model, &d.atoms[d.labels[i]].theta, &warped)?;
            Ok(f.into_iter().map(|v| d.c[i] + d.a[i] * v).collect())
        })
        .collect()
}

pub fn curve_fit(
    trace: &Trace,
    model: &Model,
    i: usize,
    grid: &[f64],
    level: f64,
    kind: BandKind,
) -> Result<FunctionalSummary, PosteriorError> {
    credible_band(&curve_draws(trace, model, i, grid)?, grid, level, kind)
}

/// Cluster of `draw` sharing the most members with reference cluster `k`;
/// ties go to the lower label. `None` if no member of `k` is present.
pub fn match_cluster(draw_labels: &[usize], reference: &[usize], k: usize) -> Option<usize> {
    let kmax = draw_labels.iter().max().map_or(0, |m| m + 1);
    let mut overlap = vec![0usize; kmax];
    for (d, r) in draw_labels.iter().zip(reference) {
        if *r == k {
            overlap[*d] += 1;
        }
    }
    let best = overlap.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return None;
    }
    overlap.iter().position(|&o| o == best)
}

/// Draws of the shape `c_0 + a_0 m_k(t)` for reference cluster `k`, taking in
/// each draw the cluster with maximal membership overlap.
pub fn cluster_shape_draws(
    trace: &Trace,
    model: &Model,
    reference: &[usize],
    k: usize,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, PosteriorError> {
    check_trace(trace)?;
    if reference.len() != trace.num_curves() {
        return Err(PosteriorError::LengthMismatch(
            reference.len(),
            trace.num_curves(),
        ));
    }
    if !reference.contains(&k) {
        return Err(PosteriorError::UnknownCluster(k));
    }
    let mut out = Vec::new();
    for d in &trace.draws {
        if let Some(j) = match_cluster(&d.labels, reference, k) {
            let f = eval_shape(model, &d.atoms[j].theta, grid)?;
            out.push(
                f.into_iter()
                    .map(|v| d.hypers.c0 + d.hypers.a0 * v)
                    .collect(),
            );
        }
    }
    if out.is_empty() {
        return Err(PosteriorError::Unmatched(k));
    }
    Ok(out)
}

pub fn cluster_shape(
    trace: &Trace,
    model: &Model,
    reference: &[usize],
    k: usize,
    grid: &[f64],
    level: f64,
    kind: BandKind,
) -> Result<FunctionalSummary, PosteriorError> {
    credible_band(
        &cluster_shape_draws(trace, model, reference, k, grid)?,
        grid,
        level,
        kind,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoReport {
    /// `log CPO_i` per curve.
    pub log_cpo: Vec<f64>,
    pub lpml: f64,
}

/// Harmonic-mean estimate of the conditional predictive ordinates and their
/// log sum.
pub fn cpo_lpml(trace: &Trace) -> Result<CpoReport, PosteriorError> {
    check_trace(trace)?;
    let m = trace.len() as f64;
    let log_cpo = (0..trace.num_curves())
        .map(|i| {
            let neg: Vec<f64> = trace.draws.iter().map(|d| -d.loglik[i]).collect();
            if neg.iter().all(|v| *v == f64::INFINITY) {
                return Err(PosteriorError::ZeroLikelihood(i));
            }
            Ok(m.ln() - log_sum_exp(&neg))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let lpml = log_cpo.iter().sum();
    Ok(CpoReport { log_cpo, lpml })
}

pub fn mse(estimate: &[f64], truth: &[f64]) -> Result<f64, PosteriorError> {
    if estimate.len() != truth.len() {
        return Err(PosteriorError::LengthMismatch(estimate.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(PosteriorError::TooFew(1));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).powi(2))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Per-curve mean squared error of the posterior-mean fit against the
/// noiseless truth, both taken at the curve's observation times.
pub fn mse_vs_truth(
    trace: &Trace,
    model: &Model,
    data: &Dataset,
    truth: &[Vec<f64>],
) -> Result<Vec<f64>, PosteriorError> {
    if truth.len() != data.len() {
        return Err(PosteriorError::LengthMismatch(truth.len(), data.len()));
    }
    (0..data.len())
        .map(|i| {
            let draws = curve_draws(trace, model, i, &data.curves[i].times)?;
            let m = draws.len() as f64;
            let mean: Vec<f64> = (0..data.curves[i].len())
                .map(|t| draws.iter().map(|d| d[t]).sum::<f64>() / m)
                .collect();
            mse(&mean, &truth[i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyperparams, ShapeAtom};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn draw_with(labels: Vec<usize>, loglik: Vec<f64>) -> Draw {
        let n = labels.len();
        let k = labels.iter().max().unwrap() + 1;
        Draw {
            iteration: 0,
            labels,
            atoms: vec![
                ShapeAtom {
                    theta: vec![0.0; 2],
                    tau: 1.0
                };
                k
            ],
            phi: vec![vec![0.0, 1.0]; n],
            c: vec![0.0; n],
            a: vec![1.0; n],
            hypers: Hyperparams::default(),
            loglik,
        }
    }

    fn trace_of(parts: &[Vec<usize>]) -> Trace {
        Trace {
            draws: parts
                .iter()
                .map(|p| draw_with(p.clone(), vec![0.0; p.len()]))
                .collect(),
            warp_acceptance: 1.0,
        }
    }

    #[test]
    fn canonical_relabels_by_first_appearance() {
        assert_eq!(canonical_labels(&[2, 2, 0, 1, 0]), vec![0, 0, 1, 2, 1]);
    }

    #[test]
    fn crp_prior_sums_to_one_over_partitions_of_three() {
        let parts = [
            vec![0, 0, 0],
            vec![0, 0, 1],
            vec![0, 1, 0],
            vec![0, 1, 1],
            vec![0, 1, 2],
        ];
        for alpha in [0.3, 1.0, 4.0] {
            let total: f64 = parts.iter().map(|p| crp_log_prior(p, alpha).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_matrix_counts_co_clustering() {
        let t = trace_of(&[vec![0, 0, 1], vec![0, 1, 1], vec![0, 0, 0], vec![1, 0, 1]]);
        let p = pairwise_prob_matrix(&t).unwrap();
        assert_eq!(p[(0, 1)], 2.0 / 4.0);
        assert_eq!(p[(0, 2)], 2.0 / 4.0);
        assert_eq!(p[(1, 2)], 2.0 / 4.0);
        assert_eq!(p, p.transpose());
        assert!((0..3).all(|i| p[(i, i)] == 1.0));
    }

    #[test]
    fn dahl_picks_identical_partition_with_zero_loss() {
        let t = trace_of(&[vec![1, 1, 0], vec![0, 0, 1]]);
        let est = dahl_partition(&t).unwrap();
        assert_eq!(est.labels, vec![0, 0, 1]);
        assert_eq!(est.criterion, 0.0);
        assert_eq!(est.draw, 0);
    }

    #[test]
    fn dahl_tie_goes_to_first_draw() {
        let t = trace_of(&[vec![0, 1], vec![0, 0]]);
        assert_eq!(dahl_partition(&t).unwrap().draw, 0);
    }

    #[test]
    fn dahl_criterion_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parts: Vec<Vec<usize>> = (0..30)
            .map(|_| (0..8).map(|_| rng.random_range(0..3)).collect())
            .collect();
        let t = trace_of(&parts);
        let est = dahl_partition(&t).unwrap();
        let m = parts.len() as f64;
        let mut brute = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                let pij = parts.iter().filter(|p| p[i] == p[j]).count() as f64 / m;
                let a = if parts[est.draw][i] == parts[est.draw][j] {
                    1.0
                } else {
                    0.0
                };
                brute += (a - pij) * (a - pij);
            }
        }
        assert!((est.criterion - brute).abs() < 1e-12);
        for p in &parts {
            assert!(association_distance(p, &pairwise_prob_matrix(&t).unwrap()) >= est.criterion);
        }
    }

    /// Rand-type index by direct enumeration of item pairs.
    fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut in_a, mut in_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                pairs += 1.0;
                if sa {
                    in_a += 1.0;
                }
                if sb {
                    in_b += 1.0;
                }
                if sa && sb {
                    both += 1.0;
                }
            }
        }
        let expected = in_a * in_b / pairs;
        (both - expected) / (0.5 * (in_a + in_b) - expected)
    }

    #[test]
    fn ari_edge_cases() {
        assert_eq!(adjusted_rand(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert!(adjusted_rand(&[0, 1], &[0]).is_err());
        assert!(adjusted_rand(&[0], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting(a in prop::collection::vec(0usize..4, 10), b in prop::collection::vec(0usize..4, 10)) {
            let want = ari_pairs(&a, &b);
            prop_assume!(want.is_finite());
            prop_assert!((adjusted_rand(&a, &b).unwrap() - want).abs() < 1e-12);
        }

        #[test]
        fn partition_estimators_ignore_label_permutation(parts in prop::collection::vec(prop::collection::vec(0usize..3, 6), 1..12)) {
            let t = trace_of(&parts);
            let perm = |p: &Vec<usize>| p.iter().map(|l| (l + 1) % 3).collect::<Vec<_>>();
            let t2 = trace_of(&parts.iter().map(perm).collect::<Vec<_>>());
            prop_assert_eq!(dahl_partition(&t).unwrap(), dahl_partition(&t2).unwrap());
            prop_assert_eq!(pairwise_prob_matrix(&t).unwrap(), pairwise_prob_matrix(&t2).unwrap());
        }

        #[test]
        fn simultaneous_band_contains_pointwise(seed in 0u64..1000, m in 2usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid: Vec<f64> = (0..15).map(|t| t as f64).collect();
            let draws: Vec<Vec<f64>> = (0..m).map(|_| grid.iter().map(|_| rng.random::<f64>()).collect()).collect();
            let pw = credible_band(&draws, &grid, 0.9, BandKind::Pointwise).unwrap();
            let sim = credible_band(&draws, &grid, 0.9, BandKind::Simultaneous).unwrap();
            for t in 0..grid.len() {
                prop_assert!(sim.lower[t] <= pw.lower[t] && pw.upper[t] <= sim.upper[t]);
                prop_assert!(pw.lower[t] <= pw.mean[t] && pw.mean[t] <= pw.upper[t]);
            }
        }

        #[test]
        fn cpo_is_order_invariant(ll in prop::collection::vec(-50.0f64..5.0, 2..40)) {
            let draws: Vec<Draw> = ll.iter().map(|&l| draw_with(vec![0], vec![l])).collect();
            let mut rev = draws.clone();
            rev.reverse();
            let a = cpo_lpml(&Trace { draws, warp_acceptance: 1.0 }).unwrap();
            let b = cpo_lpml(&Trace { draws: rev, warp_acceptance: 1.0 }).unwrap();
            prop_assert!((a.lpml - b.lpml).abs() < 1e-12);
        }
    }

    #[test]
    fn two_draw_band_spans_both() {
        let grid = [0.0, 1.0, 2.0];
        let draws = vec![vec![0.0, 1.0, 5.0], vec![2.0, -1.0, 5.0]];
        for kind in [BandKind::Pointwise, BandKind::Simultaneous] {
            let b = credible_band(&draws, &grid, 0.95, kind).unwrap();
            assert_eq!(b.lower, vec![0.0, -1.0, 5.0]);
            assert_eq!(b.upper, vec![2.0, 1.0, 5.0]);
        }
    }

    #[test]
    fn constant_draws_collapse_band() {
        let grid = [0.0, 1.0];
        let draws = vec![vec![3.0, 3.0]; 10];
        let b = credible_band(&draws, &grid, 0.95, BandKind::Simultaneous).unwrap();
        assert_eq!(b.lower, b.upper);
        assert_eq!(b.mean, vec![3.0, 3.0]);
        assert!(credible_band(&draws, &grid, 1.0, BandKind::Pointwise).is_err());
    }

    #[test]
    fn simultaneous_band_coverage_is_near_nominal() {
        // smooth Gaussian process draws: f(t) = z1 + z2 t + z3 sin(3t)
        let grid: Vec<f64> = (0..40).map(|t| t as f64 / 39.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut gp = || {
            let z: [f64; 3] = std::array::from_fn(|_| crate::dist::std_normal(&mut rng));
            grid.iter()
                .map(|t| z[0] + z[1] * t + z[2] * (3.0 * t).sin())
                .collect::<Vec<f64>>()
        };
        let draws: Vec<Vec<f64>> = (0..4000).map(|_| gp()).collect();
        let band = credible_band(&draws, &grid, 0.95, BandKind::Simultaneous).unwrap();
        let fresh = 4000;
        let covered = (0..fresh).filter(|_| band.covers(&gp())).count() as f64 / fresh as f64;
        let se = (0.95 * 0.05 / fresh as f64).sqrt() + (0.95 * 0.05 / 4000.0f64).sqrt();
        assert!((covered - 0.95).abs() < 4.0 * se, "{covered}");
    }

    #[test]
    fn cpo_single_draw_and_recomputation() {
        let t = Trace {
            draws: vec![draw_with(vec![0, 0], vec![-3.0, -7.5])],
            warp_acceptance: 1.0,
        };
        let r = cpo_lpml(&t).unwrap();
        assert_eq!(r.log_cpo, vec![-3.0, -7.5]);

        let ll = [-1.0, -2.0, -900.0];
        let t = Trace {
            draws: ll.iter().map(|&l| draw_with(vec![0], vec![l])).collect(),
            warp_acceptance: 1.0,
        };
        let r = cpo_lpml(&t).unwrap();
        // 1 / mean(1 / p) with the tiny likelihood dominating
        let naive = -((ll.iter().map(|l| (-l - 900.0f64).exp()).sum::<f64>() / 3.0).ln() + 900.0);
        assert!((r.lpml - naive).abs() < 1e-10);

        let t = Trace {
            draws: vec![draw_with(vec![0], vec![f64::NEG_INFINITY])],
            warp_acceptance: 1.0,
        };
        assert_eq!(cpo_lpml(&t), Err(PosteriorError::ZeroLikelihood(0)));
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mse(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn matching_uses_largest_overlap() {
        assert_eq!(match_cluster(&[1, 1, 0, 0], &[0, 0, 0, 1], 0), Some(1));
        assert_eq!(match_cluster(&[1, 0, 0, 1], &[0, 0, 1, 1], 0), Some(0));
        assert_eq!(match_cluster(&[0, 0], &[0, 0], 1), None);
    }
}
