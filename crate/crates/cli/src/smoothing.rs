//! Penalized-spline derivatives for velocity-type preprocessing.

use nalgebra::{DMatrix, DVector};
use regclust::splines::{eval_basis, eval_basis_derivative};
use regclust::{Curve, Dataset, KnotVector, OutOfDomain};

use crate::error::CliError;

const DEGREE: usize = 3;
const MAX_INTERIOR: usize = 20;

/// Fitted coefficients of a cubic P-spline with a second-difference penalty.
struct Fit {
    knots: KnotVector,
    coef: DVector<f64>,
}

/// Squared second divided differences of the coefficients over the Greville
/// abscissae. Coefficients that are linear in the abscissae reproduce a line
/// exactly, so lines carry no penalty.
fn linear_free_penalty(knots: &KnotVector) -> DMatrix<f64> {
    let g = knots.greville();
    let p = g.len();
    let mut d = DMatrix::zeros(p - 2, p);
    for j in 0..p - 2 {
        let (h0, h1) = (g[j + 1] - g[j], g[j + 2] - g[j + 1]);
        let mean = 0.5 * (g[j + 2] - g[j]);
        d[(j, j)] = 1.0 / (h0 * mean);
        d[(j, j + 1)] = -(1.0 / h0 + 1.0 / h1) / mean;
        d[(j, j + 2)] = 1.0 / (h1 * mean);
    }
    d.transpose() * d
}

fn solve(
    b: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Option<(DVector<f64>, f64)> {
    let btb = b.transpose() * b;
    let chol = (&btb + penalty * lambda).cholesky()?;
    let coef = chol.solve(&(b.transpose() * y));
    // trace of the hat matrix B (B'B + lambda P)^-1 B'
    let edf = chol.solve(&btb).trace();
    Some((coef, edf))
}

fn fit_curve(curve: &Curve, lambda: Option<f64>) -> Result<Fit, CliError> {
    let n = curve.len();
    if n < DEGREE + 2 {
        return Err(CliError::Data(format!(
            "curve `{}` has {n} points; derivative smoothing needs at least {}",
            curve.id,
            DEGREE + 2
        )));
    }
    let (lo, hi) = (curve.times[0], curve.times[n - 1]);
    // no more coefficients than points, so the data pin every coefficient
    let knots = KnotVector::equidistant(lo, hi, (n - DEGREE - 1).min(MAX_INTERIOR), DEGREE)?;
    let b = eval_basis(&knots, &curve.times, OutOfDomain::Error)?.to_dense();
    let penalty = linear_free_penalty(&knots);
    let y = DVector::from_column_slice(&curve.values);
    let singular = || {
        CliError::Numerical(format!(
            "curve `{}`: smoothing system is singular",
            curve.id
        ))
    };
    let coef = match lambda {
        Some(l) => solve(&b, &penalty, &y, l).ok_or_else(singular)?.0,
        None => {
            let mut best: Option<(f64, DVector<f64>)> = None;
            for k in 0..=60 {
                let l = 10f64.powf(-8.0 + 0.25 * k as f64);
                let Some((coef, edf)) = solve(&b, &penalty, &y, l) else {
                    continue;
                };
                let rss = (&y - &b * &coef).norm_squared();
                let denom = n as f64 - edf;
                if denom <= 1e-8 {
                    continue;
                }
                let gcv = n as f64 * rss / (denom * denom);
                if best.as_ref().is_none_or(|(g, _)| gcv < *g) {
                    best = Some((gcv, coef));
                }
            }
            best.ok_or_else(singular)?.1
        }
    };
    Ok(Fit { knots, coef })
}

/// Replaces every curve by the first derivative of its penalized spline fit
/// at the original times. The smoothing parameter is chosen per curve by
/// generalized cross-validation when `lambda` is `None`.
pub fn smooth_derivative(data: &Dataset, lambda: Option<f64>) -> Result<Dataset, CliError> {
    let curves = data
        .curves
        .iter()
        .map(|c| {
            let fit = fit_curve(c, lambda)?;
            let d = eval_basis_derivative(&fit.knots, &c.times, OutOfDomain::Error)?;
            let v = d.mul_vec(fit.coef.as_slice());
            Ok(Curve::new(c.id.clone(), c.times.clone(), v)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Dataset::new(curves)?)
}
