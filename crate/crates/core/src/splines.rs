//! B-spline bases on open (clamped) knot vectors, difference penalties, and
//! monotone warping functions built from ordered B-spline coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative distance outside the domain that is still snapped onto the
/// boundary. Warped times are convex combinations of bounded coefficients, so
/// they can overshoot by a few ulps.
const DOMAIN_SNAP: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("invalid domain [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidDomain { lo: f64, hi: f64 },
    #[error("knot positions must be strictly increasing (position {index}: {value})")]
    NonIncreasingKnots { index: usize, value: f64 },
    #[error("knot {value} lies outside the open domain ({lo}, {hi})")]
    KnotOutsideDomain { value: f64, lo: f64, hi: f64 },
    #[error("non-finite knot or point {0}")]
    NonFinite(f64),
    #[error("point {point} is outside the spline domain [{lo}, {hi}]")]
    PointOutsideDomain { point: f64, lo: f64, hi: f64 },
    #[error("degree must be at least {min}, got {degree}")]
    InvalidDegree { degree: usize, min: usize },
    #[error("degree {0} exceeds the supported maximum of 10")]
    DegreeTooLarge(usize),
    #[error("penalty of order {order} needs dimension at least {min}, got {dim}")]
    PenaltyTooSmall {
        dim: usize,
        order: usize,
        min: usize,
    },
    #[error("penalty order must be 1 or 2, got {0}")]
    InvalidPenaltyOrder(usize),
    #[error("warp coefficients have length {found}, expected {expected}")]
    WarpLength { expected: usize, found: usize },
    #[error("warp coefficients are not strictly increasing at index {0}")]
    UnorderedWarp(usize),
    #[error("warp coefficient {value} outside [{lo}, {hi}]")]
    WarpOutOfBounds { value: f64, lo: f64, hi: f64 },
}

/// Behaviour of basis evaluation for points outside the knot domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutOfDomain {
    #[default]
    Error,
    Clamp,
}

/// An open knot vector: boundary knots repeated `degree + 1` times around a
/// strictly increasing set of interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    lo: f64,
    hi: f64,
    interior: Vec<f64>,
    full: Vec<f64>,
}

impl KnotVector {
    pub fn new(lo: f64, hi: f64, interior: Vec<f64>, degree: usize) -> Result<Self, SplineError> {
        for &v in [lo, hi].iter().chain(interior.iter()) {
            if !v.is_finite() {
                return Err(SplineError::NonFinite(v));
            }
        }
        if lo >= hi {
            return Err(SplineError::InvalidDomain { lo, hi });
        }
        if degree > 10 {
            return Err(SplineError::DegreeTooLarge(degree));
        }
        for (index, &value) in interior.iter().enumerate() {
            if value <= lo || value >= hi {
                return Err(SplineError::KnotOutsideDomain { value, lo, hi });
            }
            if index > 0 && value <= interior[index - 1] {
                return Err(SplineError::NonIncreasingKnots { index, value });
            }
        }
        let mut full = Vec::with_capacity(interior.len() + 2 * (degree + 1));
        full.extend(std::iter::repeat_n(lo, degree + 1));
        full.extend_from_slice(&interior);
        full.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(Self {
            degree,
            lo,
            hi,
            interior,
            full,
        })
    }

    /// `count` equally spaced knots strictly inside `(lo, hi)`.
    pub fn equidistant(lo: f64, hi: f64, count: usize, degree: usize) -> Result<Self, SplineError> {
        let step = (hi - lo) / (count as f64 + 1.0);
        let interior = (1..=count).map(|j| lo + step * j as f64).collect();
        Self::new(lo, hi, interior, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn full_knots(&self) -> &[f64] {
        &self.full
    }

    pub fn num_basis(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    /// Greville abscissae: the coefficients that reproduce `f(t) = t`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.num_basis())
                .map(|j| 0.5 * (self.full[j] + self.full[j + 1]))
                .collect();
        }
        (0..self.num_basis())
            .map(|j| self.full[j + 1..=j + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    fn mean_gap(&self) -> f64 {
        (self.hi - self.lo) / (self.interior.len() as f64 + 1.0)
    }

    /// Snaps `x` into the domain, or reports it as outside.
    fn locate(&self, x: f64, mode: OutOfDomain) -> Result<f64, SplineError> {
        if !x.is_finite() {
            return Err(SplineError::NonFinite(x));
        }
        let tol = DOMAIN_SNAP * (self.hi - self.lo);
        if x < self.lo {
            if mode == OutOfDomain::Clamp || self.lo - x <= tol {
                return Ok(self.lo);
            }
            return Err(SplineError::PointOutsideDomain {
                point: x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        if x > self.hi {
            if mode == OutOfDomain::Clamp || x - self.hi <= tol {
                return Ok(self.hi);
            }
            return Err(SplineError::PointOutsideDomain {
                point: x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(x)
    }

    /// Index `s` with `full[s] <= x < full[s + 1]`; the last non-empty span for `x == hi`.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.num_basis() - 1;
        if x >= self.hi {
            return last;
        }
        // interior knots are strictly increasing, so a binary search over them
        // gives the span directly
        p + self.interior.partition_point(|&k| k <= x)
    }

    /// Non-zero basis values at an in-domain point. Writes `degree + 1` values
    /// into `out` and returns the index of the first one.
    pub fn basis_into(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let s = self.span(x);
        let t = &self.full;
        out[0] = 1.0;
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        s - p
    }

    /// First derivatives of the non-zero basis functions at `x`.
    pub fn derivative_into(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let s = self.span(x);
        if p == 0 {
            out[0] = 0.0;
            return s;
        }
        let t = &self.full;
        // degree p-1 values on the same knots, indices s-p+1 ..= s
        let mut lower = [0.0f64; 16];
        lower[0] = 1.0;
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        for j in 1..p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { lower[r] / denom } else { 0.0 };
                lower[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            lower[j] = saved;
        }
        let first = s - p;
        let pf = p as f64;
        for (r, o) in out.iter_mut().enumerate().take(p + 1) {
            let j = first + r;
            // B'_{j,p} = p/(t_{j+p}-t_j) B_{j,p-1} - p/(t_{j+p+1}-t_{j+1}) B_{j+1,p-1}
            let mut v = 0.0;
            if r >= 1 {
                let d = t[j + p] - t[j];
                if d > 0.0 {
                    v += pf / d * lower[r - 1];
                }
            }
            if r < p {
                let d = t[j + p + 1] - t[j + 1];
                if d > 0.0 {
                    v -= pf / d * lower[r];
                }
            }
            *o = v;
        }
        first
    }
}

/// Builds an open knot vector from either a count of equidistant interior
/// knots or explicit positions.
pub fn make_knots(
    domain: (f64, f64),
    interior: KnotPlacement,
    degree: usize,
) -> Result<KnotVector, SplineError> {
    match interior {
        KnotPlacement::Count(n) => KnotVector::equidistant(domain.0, domain.1, n, degree),
        KnotPlacement::Positions(v) => KnotVector::new(domain.0, domain.1, v, degree),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnotPlacement {
    Count(usize),
    Positions(Vec<f64>),
}

/// Banded basis matrix: each row stores `degree + 1` consecutive entries
/// starting at `starts[row]`; all other entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    cols: usize,
    width: usize,
    starts: Vec<usize>,
    values: Vec<f64>,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.starts.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(first column, values)` of the non-zero band in row `i`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (
            self.starts[i],
            &self.values[i * self.width..(i + 1) * self.width],
        )
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, v) = self.row(i);
        if j >= s && j < s + self.width {
            v[j - s]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.cols);
        for i in 0..self.nrows() {
            let (s, v) = self.row(i);
            for (k, &x) in v.iter().enumerate() {
                m[(i, s + k)] = x;
            }
        }
        m
    }

    /// `B x` for a coefficient vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| {
                let (s, v) = self.row(i);
                v.iter()
                    .zip(&x[s..s + self.width])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Accumulates `scale * B^T B` into `out`.
    pub fn add_gram(&self, scale: f64, out: &mut DMatrix<f64>) {
        for i in 0..self.nrows() {
            let (s, v) = self.row(i);
            for (a, &va) in v.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                for (b, &vb) in v.iter().enumerate() {
                    out[(s + a, s + b)] += scale * va * vb;
                }
            }
        }
    }

    /// Accumulates `scale * B^T r` into `out`.
    pub fn add_transpose_mul(&self, scale: f64, r: &[f64], out: &mut [f64]) {
        for (i, &ri) in r.iter().enumerate() {
            let (s, v) = self.row(i);
            for (k, &x) in v.iter().enumerate() {
                out[s + k] += scale * x * ri;
            }
        }
    }
}

/// Evaluates every basis function of `kv` at each point.
pub fn eval_basis(
    kv: &KnotVector,
    points: &[f64],
    mode: OutOfDomain,
) -> Result<BasisMatrix, SplineError> {
    let width = kv.degree + 1;
    let mut starts = Vec::with_capacity(points.len());
    let mut values = vec![0.0; points.len() * width];
    for (i, &x) in points.iter().enumerate() {
        let x = kv.locate(x, mode)?;
        starts.push(kv.basis_into(x, &mut values[i * width..(i + 1) * width]));
    }
    Ok(BasisMatrix {
        cols: kv.num_basis(),
        width,
        starts,
        values,
    })
}

/// First derivatives of every basis function of `kv` at each point.
pub fn eval_basis_derivative(
    kv: &KnotVector,
    points: &[f64],
    mode: OutOfDomain,
) -> Result<BasisMatrix, SplineError> {
    let width = kv.degree + 1;
    let mut starts = Vec::with_capacity(points.len());
    let mut values = vec![0.0; points.len() * width];
    for (i, &x) in points.iter().enumerate() {
        let x = kv.locate(x, mode)?;
        starts.push(kv.derivative_into(x, &mut values[i * width..(i + 1) * width]));
    }
    Ok(BasisMatrix {
        cols: kv.num_basis(),
        width,
        starts,
        values,
    })
}

/// Lower-triangular difference operator. Order 2 maps coefficients to the
/// increments `x_p - 2 x_{p-1} + x_{p-2}` with `x_0 = x_{-1} = 0`; order 1 to
/// `x_q - x_{q-1}` with `x_0 = 0`.
pub fn difference_operator(dim: usize, order: usize) -> Result<DMatrix<f64>, SplineError> {
    if (1..=2).contains(&order) && dim < order + 1 {
        return Err(SplineError::PenaltyTooSmall {
            dim,
            order,
            min: order + 1,
        });
    }
    anchored_difference(dim, order)
}

/// Same operator without the minimum-dimension check; the anchoring keeps it
/// full rank at any dimension.
pub(crate) fn anchored_difference(dim: usize, order: usize) -> Result<DMatrix<f64>, SplineError> {
    let stencil: &[f64] = match order {
        1 => &[1.0, -1.0],
        2 => &[1.0, -2.0, 1.0],
        o => return Err(SplineError::InvalidPenaltyOrder(o)),
    };
    let mut d = DMatrix::zeros(dim, dim);
    for row in 0..dim {
        for (lag, &w) in stencil.iter().enumerate() {
            if row >= lag {
                d[(row, row - lag)] = w;
            }
        }
    }
    Ok(d)
}

/// `D^T D` for the anchored difference operator of the given order. The
/// operator is unit lower triangular, so the penalty is positive definite
/// with determinant one.
pub fn difference_penalty(dim: usize, order: usize) -> Result<DMatrix<f64>, SplineError> {
    let d = difference_operator(dim, order)?;
    Ok(d.transpose() * d)
}

/// Monotone time transformation `mu(t) = B(t)^T phi` on the sampling window,
/// with coefficients constrained to `[lo - delta, hi + delta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpBasis {
    knots: KnotVector,
    delta: f64,
    identity: Vec<f64>,
}

impl WarpBasis {
    pub fn new(knots: KnotVector, delta: f64) -> Result<Self, SplineError> {
        if knots.degree() < 1 {
            return Err(SplineError::InvalidDegree {
                degree: knots.degree(),
                min: 1,
            });
        }
        let identity = identity_phi(&knots);
        Ok(Self {
            knots,
            delta,
            identity,
        })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.knots.num_basis()
    }

    pub fn identity(&self) -> &[f64] {
        &self.identity
    }

    /// Image bounds `[t_1 - delta, t_n + delta]`.
    pub fn bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.knots.domain();
        (lo - self.delta, hi + self.delta)
    }

    pub fn mean_knot_gap(&self) -> f64 {
        self.knots.mean_gap()
    }

    /// Checks the ordering and boundary constraint on warp coefficients.
    pub fn check(&self, phi: &[f64]) -> Result<(), SplineError> {
        if phi.len() != self.dim() {
            return Err(SplineError::WarpLength {
                expected: self.dim(),
                found: phi.len(),
            });
        }
        let (lo, hi) = self.bounds();
        for (q, &v) in phi.iter().enumerate() {
            if !v.is_finite() {
                return Err(SplineError::NonFinite(v));
            }
            if v < lo || v > hi {
                return Err(SplineError::WarpOutOfBounds { value: v, lo, hi });
            }
            if q > 0 && v <= phi[q - 1] {
                return Err(SplineError::UnorderedWarp(q));
            }
        }
        Ok(())
    }

    pub fn eval(&self, phi: &[f64], t: &[f64]) -> Result<Vec<f64>, SplineError> {
        warp_eval(self, phi, t)
    }
}

/// Evaluates the warp with coefficients `phi` at times `t` (inside the
/// sampling window).
pub fn warp_eval(warp: &WarpBasis, phi: &[f64], t: &[f64]) -> Result<Vec<f64>, SplineError> {
    warp.check(phi)?;
    let b = eval_basis(&warp.knots, t, OutOfDomain::Error)?;
    Ok(b.mul_vec(phi))
}

/// Coefficients of the identity warp (Greville abscissae).
pub fn identity_phi(kv: &KnotVector) -> Vec<f64> {
    kv.greville()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bernstein_case_without_interior_knots() {
        let kv = make_knots((0.0, 1.0), KnotPlacement::Count(0), 3).unwrap();
        assert_eq!(kv.num_basis(), 4);
        let b = eval_basis(&kv, &[0.5], OutOfDomain::Error).unwrap();
        // cubic Bernstein at 1/2: (1, 3, 3, 1) / 8
        for (j, want) in [0.125, 0.375, 0.375, 0.125].into_iter().enumerate() {
            assert_abs_diff_eq!(b.get(0, j), want, epsilon = 1e-15);
        }
    }

    #[test]
    fn growth_warp_knots() {
        let kv = make_knots(
            (2.0, 18.0),
            KnotPlacement::Positions(vec![5.2, 8.2, 11.6, 14.8]),
            3,
        )
        .unwrap();
        assert_eq!(kv.num_basis(), 8);
        assert_eq!(kv.full_knots().len(), 12);
        assert_eq!(&kv.full_knots()[..4], &[2.0; 4]);
    }

    #[test]
    fn simulation_shape_knots() {
        let kv = make_knots((-5.0, 25.0), KnotPlacement::Count(31), 3).unwrap();
        assert_eq!(kv.num_basis(), 35);
        let gaps: Vec<f64> = kv.interior().windows(2).map(|w| w[1] - w[0]).collect();
        for g in gaps {
            assert_abs_diff_eq!(g, 30.0 / 32.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn knot_errors() {
        assert!(matches!(
            KnotVector::new(0.0, 1.0, vec![0.5, 0.4], 3),
            Err(SplineError::NonIncreasingKnots { .. })
        ));
        assert!(matches!(
            KnotVector::new(0.0, 1.0, vec![1.5], 3),
            Err(SplineError::KnotOutsideDomain { .. })
        ));
        assert!(matches!(
            KnotVector::new(1.0, 1.0, vec![], 3),
            Err(SplineError::InvalidDomain { .. })
        ));
    }

    #[test]
    fn endpoints_interpolate() {
        let kv = KnotVector::new(0.0, 10.0, vec![2.0, 5.0, 7.0], 3).unwrap();
        let b = eval_basis(&kv, &[0.0, 10.0], OutOfDomain::Error).unwrap();
        let d = b.to_dense();
        assert_eq!(d[(0, 0)], 1.0);
        assert_eq!(d[(1, kv.num_basis() - 1)], 1.0);
        assert_abs_diff_eq!(d.row(0).sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.row(1).sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_errors_unless_clamped() {
        let kv = KnotVector::new(0.0, 1.0, vec![0.5], 3).unwrap();
        assert!(matches!(
            eval_basis(&kv, &[1.2], OutOfDomain::Error),
            Err(SplineError::PointOutsideDomain { .. })
        ));
        let clamped = eval_basis(&kv, &[1.2], OutOfDomain::Clamp).unwrap();
        let edge = eval_basis(&kv, &[1.0], OutOfDomain::Error).unwrap();
        assert_eq!(clamped, edge);
        // ulp-level overshoot is snapped rather than rejected
        assert!(eval_basis(&kv, &[1.0 + 1e-14], OutOfDomain::Error).is_ok());
    }

    #[test]
    fn second_order_penalty_dim3() {
        let s = difference_penalty(3, 2).unwrap();
        let th = [0.7, -1.3, 2.1];
        let xi = [th[0], th[1] - 2.0 * th[0], th[2] - 2.0 * th[1] + th[0]];
        let v = nalgebra::DVector::from_column_slice(&th);
        let q = (v.transpose() * &s * &v)[(0, 0)];
        assert_abs_diff_eq!(q, xi.iter().map(|x| x * x).sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn first_order_penalty_dim4() {
        let o = difference_penalty(4, 1).unwrap();
        let d = [0.3, -0.2, 0.5, 1.1];
        let v = nalgebra::DVector::from_column_slice(&d);
        let q = (v.transpose() * &o * &v)[(0, 0)];
        let brute =
            d[0] * d[0] + (d[1] - d[0]).powi(2) + (d[2] - d[1]).powi(2) + (d[3] - d[2]).powi(2);
        assert_abs_diff_eq!(q, brute, epsilon = 1e-12);
    }

    #[test]
    fn penalty_is_positive_definite() {
        for dim in 3..=50 {
            for order in [1, 2] {
                let m = difference_penalty(dim, order).unwrap();
                let eig = m.clone().symmetric_eigen();
                assert!(
                    eig.eigenvalues.iter().all(|&l| l > 0.0),
                    "dim {dim} order {order}"
                );
                assert_eq!(m, m.transpose());
            }
        }
    }

    #[test]
    fn penalty_dimension_errors() {
        assert!(matches!(
            difference_penalty(2, 2),
            Err(SplineError::PenaltyTooSmall { .. })
        ));
        assert!(matches!(
            difference_penalty(1, 1),
            Err(SplineError::PenaltyTooSmall { .. })
        ));
        assert!(matches!(
            difference_penalty(5, 3),
            Err(SplineError::InvalidPenaltyOrder(3))
        ));
    }

    #[test]
    fn identity_warp_reproduces_time() {
        let kv = KnotVector::new(0.0, 20.0, vec![5.0, 10.0, 15.0], 3).unwrap();
        let w = WarpBasis::new(kv, 0.0).unwrap();
        let grid: Vec<f64> = (0..=200).map(|j| j as f64 * 0.1).collect();
        let mu = w.eval(w.identity(), &grid).unwrap();
        for (m, t) in mu.iter().zip(&grid) {
            assert_abs_diff_eq!(m, t, epsilon = 1e-10);
        }
        assert!(w.identity().windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn identity_spacing_is_linear_in_interior_for_uniform_knots() {
        // uniform knots with cubic degree: Greville abscissae in the interior
        // are spaced by exactly one knot gap
        let kv = KnotVector::equidistant(0.0, 10.0, 9, 3).unwrap();
        let g = identity_phi(&kv);
        assert_eq!(g.len(), 13);
        for w in g[2..g.len() - 2].windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(g[1] - g[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[2] - g[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn warp_rejects_invalid_coefficients() {
        let kv = KnotVector::new(0.0, 20.0, vec![10.0], 3).unwrap();
        let w = WarpBasis::new(kv, 1.0).unwrap();
        assert!(matches!(
            w.eval(&[0.0, 5.0, 4.0, 15.0, 20.0], &[1.0]),
            Err(SplineError::UnorderedWarp(2))
        ));
        assert!(matches!(
            w.eval(&[-1.5, 5.0, 10.0, 15.0, 20.0], &[1.0]),
            Err(SplineError::WarpOutOfBounds { .. })
        ));
        assert!(matches!(
            w.eval(&[0.0, 5.0], &[1.0]),
            Err(SplineError::WarpLength { .. })
        ));
    }

    #[test]
    fn warp_respects_upper_bound() {
        let kv = KnotVector::new(0.0, 20.0, vec![10.0], 3).unwrap();
        let w = WarpBasis::new(kv, 2.0).unwrap();
        let phi = [1.0, 4.0, 11.0, 17.0, 22.0];
        let mu = w.eval(&phi, &[20.0]).unwrap();
        assert!(mu[0] <= 22.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let kv = KnotVector::new(0.0, 3.0, vec![0.7, 1.1, 2.0], 3).unwrap();
        let coef = [0.3, -1.0, 2.0, 0.5, 1.5, -0.4, 0.9];
        let h = 1e-6;
        for &x in &[0.05, 0.5, 0.9, 1.5, 2.5, 2.95] {
            let d = eval_basis_derivative(&kv, &[x], OutOfDomain::Error)
                .unwrap()
                .mul_vec(&coef)[0];
            let up = eval_basis(&kv, &[x + h], OutOfDomain::Error)
                .unwrap()
                .mul_vec(&coef)[0];
            let dn = eval_basis(&kv, &[x - h], OutOfDomain::Error)
                .unwrap()
                .mul_vec(&coef)[0];
            assert_abs_diff_eq!(d, (up - dn) / (2.0 * h), epsilon = 1e-6);
        }
    }
}
