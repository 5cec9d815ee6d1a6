//! Algebraic least-squares circle fitting.
//!
//! A circle is represented by coefficients u = (a, b1, b2, c) of
//! a(x^2 + y^2) + b1 x + b2 y + c = 0. The best fit for a point set is the
//! minimizer of ||B u|| subject to ||u|| = 1, where each row of the design
//! matrix B is [x^2 + y^2, x, y, 1]; the minimizer is the right singular
//! vector of the smallest singular value of B.
//!
//! Points are shifted to their centroid and scaled to unit RMS radius before
//! the decomposition, which keeps the design matrix well conditioned for
//! windows far from the origin or with small radii. The returned
//! coefficients are mapped back to the original frame and renormalized, so
//! `center == (-b1/2a, -b2/2a)` holds on the reported values.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComplexSample;

/// Coefficient magnitude below which the quadratic term is treated as zero
/// and the "circle" as a degenerate line, given ||u|| = 1.
const DEGENERATE_A: f64 = 1e-12;

/// Result of an algebraic circle fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    /// Fitted center (x0, y0) in per-unit.
    pub center: (f64, f64),
    /// Fitted radius, non-negative.
    pub radius: f64,
    /// Unit-norm algebraic parameters (a, b1, b2, c) in the original frame.
    pub coeffs: [f64; 4],
    /// Smallest singular value of the normalized design matrix; near zero
    /// for points lying exactly on a circle.
    pub condition: f64,
}

impl CircleFit {
    /// Distance from the fitted center to another point.
    pub fn center_dist(&self, other: (f64, f64)) -> f64 {
        (self.center.0 - other.0).hypot(self.center.1 - other.1)
    }
}

/// Fit a circle to at least three points.
///
/// Errors with [`Error::DegenerateFit`] when the points are collinear or
/// coincident, i.e. when no finite circle explains them.
pub fn fit_circle(points: &[ComplexSample]) -> Result<CircleFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }

    // Normalize: shift to centroid, scale to unit RMS radius.
    let inv_n = 1.0 / n as f64;
    let (mut tx, mut ty) = (0.0, 0.0);
    for p in points {
        tx += p.re;
        ty += p.im;
    }
    tx *= inv_n;
    ty *= inv_n;
    let mut ms = 0.0;
    for p in points {
        let (u, v) = (p.re - tx, p.im - ty);
        ms += u * u + v * v;
    }
    let q = (ms * inv_n).sqrt();
    if q == 0.0 || !q.is_finite() {
        // All points coincide.
        return Err(Error::DegenerateFit);
    }
    let inv_q = 1.0 / q;

    let mut b = DMatrix::<f64>::zeros(n, 4);
    for (i, p) in points.iter().enumerate() {
        let u = (p.re - tx) * inv_q;
        let v = (p.im - ty) * inv_q;
        b[(i, 0)] = u * u + v * v;
        b[(i, 1)] = u;
        b[(i, 2)] = v;
        b[(i, 3)] = 1.0;
    }

    let svd = SVD::new(b, false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut min_idx = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let condition = svd.singular_values[min_idx];
    let a = v_t[(min_idx, 0)];
    let b1 = v_t[(min_idx, 1)];
    let b2 = v_t[(min_idx, 2)];
    let c = v_t[(min_idx, 3)];

    finish_fit(a, b1, b2, c, tx, ty, q, condition)
}

/// Map scaled-frame coefficients back to the original frame, normalize, and
/// extract center and radius.
fn finish_fit(a: f64, b1: f64, b2: f64, c: f64, tx: f64, ty: f64, q: f64, condition: f64) -> Result<CircleFit> {
    let inv_q = 1.0 / q;
    let aa = a * inv_q * inv_q;
    let bb1 = b1 * inv_q - 2.0 * a * tx * inv_q * inv_q;
    let bb2 = b2 * inv_q - 2.0 * a * ty * inv_q * inv_q;
    let cc = c + a * (tx * tx + ty * ty) * inv_q * inv_q - (b1 * tx + b2 * ty) * inv_q;

    let norm = (aa * aa + bb1 * bb1 + bb2 * bb2 + cc * cc).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateFit);
    }
    let (aa, bb1, bb2, cc) = (aa / norm, bb1 / norm, bb2 / norm, cc / norm);

    if aa.abs() < DEGENERATE_A {
        return Err(Error::DegenerateFit);
    }

    let cx = -bb1 / (2.0 * aa);
    let cy = -bb2 / (2.0 * aa);
    let radicand = (bb1 * bb1 + bb2 * bb2) / (4.0 * aa * aa) - cc / aa;
    if !(radicand.is_finite() && radicand > 0.0) {
        return Err(Error::DegenerateFit);
    }

    Ok(CircleFit { center: (cx, cy), radius: radicand.sqrt(), coeffs: [aa, bb1, bb2, cc], condition })
}

/// Streaming variant of [`fit_circle`]: solves the same normalized problem
/// through the 4x4 Gram matrix of the design matrix and a symmetric
/// eigendecomposition instead of a full SVD. Identical minimizer in exact
/// arithmetic, a few times faster on the per-sample detector path.
pub fn fit_circle_fast(points: &[ComplexSample]) -> Result<CircleFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }

    let inv_n = 1.0 / n as f64;
    let (mut tx, mut ty) = (0.0, 0.0);
    for p in points {
        tx += p.re;
        ty += p.im;
    }
    tx *= inv_n;
    ty *= inv_n;
    let mut ms = 0.0;
    for p in points {
        let (u, v) = (p.re - tx, p.im - ty);
        ms += u * u + v * v;
    }
    let q = (ms * inv_n).sqrt();
    if q == 0.0 || !q.is_finite() {
        return Err(Error::DegenerateFit);
    }
    let inv_q = 1.0 / q;

    // Accumulate the upper triangle of B^T B for rows [u^2+v^2, u, v, 1].
    let mut g = [[0.0f64; 4]; 4];
    for p in points {
        let u = (p.re - tx) * inv_q;
        let v = (p.im - ty) * inv_q;
        let r = [u * u + v * v, u, v, 1.0];
        for i in 0..4 {
            for j in i..4 {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    let mut gm = nalgebra::Matrix4::<f64>::zeros();
    for i in 0..4 {
        for j in i..4 {
            gm[(i, j)] = g[i][j];
            gm[(j, i)] = g[i][j];
        }
    }

    let eig = nalgebra::linalg::SymmetricEigen::new(gm);
    let mut min_idx = 0;
    for (i, s) in eig.eigenvalues.iter().enumerate() {
        if *s < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let vec = eig.eigenvectors.column(min_idx);
    let condition = eig.eigenvalues[min_idx].max(0.0).sqrt();

    finish_fit(vec[0], vec[1], vec[2], vec[3], tx, ty, q, condition)
}
