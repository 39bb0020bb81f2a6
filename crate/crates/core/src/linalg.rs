//! Small dense factorizations and the two randomized low-rank compressors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::random::gaussian_matrix;

pub type Mat = DMatrix<f64>;

/// Singular values below this fraction of the largest are treated as zero
/// when deciding numerical rank.
pub const RANK_DROP_TOL: f64 = 1e-14;

/// Singular values below this fraction of the largest are discarded when
/// forming pseudoinverses.
pub const PINV_CUTOFF: f64 = 1e-12;

/// How a factorization is truncated.
///
/// `rank` is the target rank `k` (and the hard upper bound in tolerance
/// mode); the sampling width is `rank + oversample`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationSpec {
    pub rank: usize,
    pub oversample: usize,
    pub tolerance: Option<f64>,
}

impl TruncationSpec {
    pub fn fixed(rank: usize, oversample: usize) -> Self {
        Self {
            rank,
            oversample,
            tolerance: None,
        }
    }

    pub fn relative(max_rank: usize, oversample: usize, tol: f64) -> Self {
        Self {
            rank: max_rank,
            oversample,
            tolerance: Some(tol),
        }
    }

    pub fn width(&self) -> usize {
        self.rank + self.oversample
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if let Some(tol) = self.tolerance {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "relative tolerance must be positive, got {tol}"
                )));
            }
        }
        Ok(())
    }

    /// Number of leading singular values to keep, given them in descending
    /// order.
    pub fn retained_rank(&self, sigma: &[f64]) -> usize {
        let numerical = numerical_rank(sigma);
        let cap = self.rank.min(numerical);
        match self.tolerance {
            None => cap,
            Some(tol) => {
                let cutoff = tol * sigma.first().copied().unwrap_or(0.0);
                // smallest j with sigma[j] <= tol * sigma[0] (0-based: the (j+1)-th value)
                let j = sigma
                    .iter()
                    .position(|&s| s <= cutoff)
                    .unwrap_or(sigma.len());
                j.min(cap)
            }
        }
    }
}

fn numerical_rank(sigma: &[f64]) -> usize {
    match sigma.first() {
        Some(&s0) if s0 > 0.0 => sigma
            .iter()
            .take_while(|&&s| s > RANK_DROP_TOL * s0)
            .count(),
        _ => 0,
    }
}

fn ensure_finite(m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Operator("non-finite entries in matrix".into()))
    }
}

/// Orthonormal basis with the number of requested-but-unavailable columns.
#[derive(Clone, Debug)]
pub struct Orthonormalized {
    pub q: Mat,
    pub dropped: usize,
}

/// Thin SVD with descending singular values; zero-sized inputs are handled.
///
/// nalgebra's bidiagonal SVD loses accuracy in the singular vectors of some
/// exactly rank-deficient inputs, so the vectors come from a thin QR followed
/// by one-sided Jacobi on the triangular factor.
fn thin_svd(m: &Mat) -> (Mat, Vec<f64>, Mat) {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return (Mat::zeros(rows, 0), Vec::new(), Mat::zeros(cols, 0));
    }
    if rows < cols {
        let (u, sigma, v) = thin_svd(&m.transpose());
        return (v, sigma, u);
    }
    let (q, r) = if rows > cols {
        let qr = m.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, m.clone())
    };
    let (ur, sigma, v) = jacobi_svd(r);
    let u = match q {
        Some(q) => q * ur,
        None => ur,
    };
    (u, sigma, v)
}

/// One-sided Jacobi SVD of a square matrix.
fn jacobi_svd(mut a: Mat) -> (Mat, Vec<f64>, Mat) {
    let n = a.ncols();
    let mut v = Mat::identity(n, n);
    let tol = f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let floor = sigma[0] * f64::EPSILON * n as f64;
    let mut u = Mat::zeros(n, n);
    let mut filled = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if sigma[k] > floor && sigma[k] > 0.0 {
            u.set_column(k, &(a.column(j) / sigma[k]));
            filled.push(k);
        }
    }
    // complete the basis for numerically zero singular values
    let mut candidate = 0;
    for k in 0..n {
        if filled.contains(&k) {
            continue;
        }
        while candidate < n {
            let mut e = nalgebra::DVector::zeros(n);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = u.column(f).dot(&e);
                    e -= u.column(f) * proj;
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                u.set_column(k, &(e / norm));
                filled.push(k);
                break;
            }
        }
    }
    let v = Mat::from_fn(n, n, |i, k| v[(i, order[k])]);
    (u, sigma, v)
}

fn rotate(m: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Orthonormal basis for the dominant column space of `m`.
///
/// Computed as a Householder QR followed by an SVD of the triangular factor,
/// so the returned columns are the leading left singular vectors. At most
/// `k` columns are returned (all available when `k` is `None`); directions
/// whose singular value is below `RANK_DROP_TOL` times the largest are
/// dropped and counted in `dropped`.
pub fn qr_orthonormal(m: &Mat, k: Option<usize>) -> Orthonormalized {
    let (rows, cols) = m.shape();
    let requested = k.unwrap_or(cols).min(rows).min(cols);
    if requested == 0 {
        return Orthonormalized {
            q: Mat::zeros(rows, 0),
            dropped: 0,
        };
    }
    let (q, sigma) = dominant_directions(m);
    let keep = requested.min(numerical_rank(&sigma));
    Orthonormalized {
        q: q.columns(0, keep).into_owned(),
        dropped: requested - keep,
    }
}

/// Leading left singular vectors of `m` truncated per `spec`.
pub fn orthonormal_basis(m: &Mat, spec: &TruncationSpec) -> Mat {
    let (q, sigma) = dominant_directions(m);
    let keep = spec.retained_rank(&sigma);
    q.columns(0, keep).into_owned()
}

/// Left singular vectors and singular values of `m`, via QR when tall.
fn dominant_directions(m: &Mat) -> (Mat, Vec<f64>) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (Mat::zeros(rows, 0), Vec::new());
    }
    if rows > cols {
        let qr = m.clone().qr();
        let q0 = qr.q();
        let r = qr.r();
        let (ur, sigma, _) = thin_svd(&r);
        (q0 * ur, sigma)
    } else {
        let (u, sigma, _) = thin_svd(m);
        (u, sigma)
    }
}

/// Truncated SVD factors `m ≈ u · diag(sigma) · vᵀ`.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v: Mat,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn recompose(&self) -> Mat {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Truncated SVD. In fixed-rank mode at most `spec.rank` triplets are kept;
/// in tolerance mode the retained rank is the smallest `j` with
/// `σ_{j+1} ≤ ε σ_1`. Numerically zero singular values are never kept.
pub fn svd_trunc(m: &Mat, spec: &TruncationSpec) -> TruncatedSvd {
    let (u, sigma, v) = thin_svd(m);
    let keep = spec.retained_rank(&sigma);
    TruncatedSvd {
        u: u.columns(0, keep).into_owned(),
        sigma: sigma[..keep].to_vec(),
        v: v.columns(0, keep).into_owned(),
    }
}

/// Minimum-norm least-squares solution `C† · rhs`.
pub fn ls_pinv_apply(c: &Mat, rhs: &Mat) -> Mat {
    assert_eq!(c.nrows(), rhs.nrows(), "pseudoinverse apply: row mismatch");
    let (u, sigma, v) = thin_svd(c);
    let cutoff = PINV_CUTOFF * sigma.first().copied().unwrap_or(0.0);
    let mut coeffs = u.tr_mul(rhs);
    for (i, s) in sigma.iter().enumerate() {
        if *s > cutoff && *s > 0.0 {
            coeffs.row_mut(i).scale_mut(1.0 / s);
        } else {
            coeffs.row_mut(i).fill(0.0);
        }
    }
    v * coeffs
}

/// `lhs · C†`.
pub fn rhs_pinv_apply(lhs: &Mat, c: &Mat) -> Mat {
    ls_pinv_apply(&c.transpose(), &lhs.transpose()).transpose()
}

/// Low-rank factors `A ≈ u · b · vᵀ` with orthonormal `u`, `v`.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub u: Mat,
    pub b: Mat,
    pub v: Mat,
}

impl LowRank {
    pub fn to_dense(&self) -> Mat {
        &self.u * &self.b * self.v.transpose()
    }
}

fn check_shape(got: &Mat, rows: usize, cols: usize) -> Result<()> {
    if got.shape() != (rows, cols) {
        return Err(Error::dims(
            format!("{rows}x{cols} product"),
            format!("{}x{}", got.nrows(), got.ncols()),
        ));
    }
    ensure_finite(got)
}

/// Single-view compression from one product with `A` and one with `Aᵀ`.
///
/// The middle factor reuses the forward sample: `G₂ᵀ A G₁ = G₂ᵀ Y`.
pub fn compress_double_random(
    op: &dyn LinearOperator,
    spec: &TruncationSpec,
    seeds: (u64, u64),
) -> Result<LowRank> {
    spec.validate()?;
    let (m, n) = (op.nrows(), op.ncols());
    let r = spec.width();
    let g1 = gaussian_matrix(n, r, seeds.0);
    let g2 = gaussian_matrix(m, r, seeds.1);
    let y = op.apply(&g1)?;
    check_shape(&y, m, r)?;
    let z = op.apply_adjoint(&g2)?;
    check_shape(&z, n, r)?;
    let u = orthonormal_basis(&y, spec);
    let v = orthonormal_basis(&z, spec);
    let core = g2.tr_mul(&y);
    let left = ls_pinv_apply(&g2.tr_mul(&u), &core);
    let b = rhs_pinv_apply(&left, &v.tr_mul(&g1));
    Ok(LowRank { u, b, v })
}

/// Range finder on `A`, then one deterministic product `W = Aᵀ U` whose QR
/// factorization `W = V R` gives `B = Rᵀ`.
pub fn compress_two_stage(
    op: &dyn LinearOperator,
    spec: &TruncationSpec,
    seed: u64,
) -> Result<LowRank> {
    spec.validate()?;
    let (m, n) = (op.nrows(), op.ncols());
    let g = gaussian_matrix(n, spec.width(), seed);
    let y = op.apply(&g)?;
    check_shape(&y, m, spec.width())?;
    let u = orthonormal_basis(&y, spec);
    let w = op.apply_adjoint(&u)?;
    check_shape(&w, n, u.ncols())?;
    let (v, r) = thin_qr(&w);
    Ok(LowRank {
        u,
        b: r.transpose(),
        v,
    })
}

/// Thin Householder QR; `q` has `min(rows, cols)` columns.
pub fn thin_qr(m: &Mat) -> (Mat, Mat) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (
            Mat::zeros(rows, rows.min(cols)),
            Mat::zeros(rows.min(cols), cols),
        );
    }
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |a: f64, &b| a.max(b))
}

/// Sine of the largest principal angle between the column spans of two
/// orthonormal matrices of equal width.
pub fn max_principal_angle_sine(a: &Mat, b: &Mat) -> f64 {
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let proj = b - a * a.tr_mul(b);
    spectral_norm(&proj)
}

/// Estimate of `‖E − R‖ / ‖R‖` by power iteration on `(E − R)ᵀ(E − R)` and
/// on `RᵀR`. Each norm estimate runs `iters` forward and `iters` adjoint
/// applications; the returned value is `‖M x‖` for the final unit iterate,
/// a lower bound on `‖M‖` up to rounding.
pub fn rel_error_power_method(
    op_e: &dyn LinearOperator,
    op_ref: &dyn LinearOperator,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidConfig(
            "power method needs at least one iteration".into(),
        ));
    }
    if op_e.nrows() != op_ref.nrows() || op_e.ncols() != op_ref.ncols() {
        return Err(Error::dims(
            format!("{}x{}", op_ref.nrows(), op_ref.ncols()),
            format!("{}x{}", op_e.nrows(), op_e.ncols()),
        ));
    }
    let diff = crate::operator::DifferenceOperator::new(op_e, op_ref)?;
    let num = power_norm(&diff, iters, seed)?;
    let den = power_norm(op_ref, iters, seed)?;
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

/// Power-method estimate of the spectral norm.
pub fn power_norm(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    let mut x = gaussian_matrix(op.ncols(), 1, seed);
    let nx = x.norm();
    if nx == 0.0 {
        return Ok(0.0);
    }
    x /= nx;
    let mut estimate = 0.0;
    for _ in 0..iters {
        let y = op.apply(&x)?;
        estimate = y.norm();
        let z = op.apply_adjoint(&y)?;
        let nz = z.norm();
        if nz == 0.0 || estimate == 0.0 {
            return Ok(estimate);
        }
        x = z / nz;
    }
    Ok(estimate)
}
