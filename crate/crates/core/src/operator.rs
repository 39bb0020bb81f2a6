//! Black-box linear operators and the matvec-counting decorator.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::random::gaussian_matrix;

/// An `nrows × ncols` matrix that can only be touched through block products.
///
/// `apply` receives an `ncols × r` block and returns `nrows × r`;
/// `apply_adjoint` receives `nrows × r` and returns `ncols × r`.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &Mat) -> Result<Mat>;
    fn apply_adjoint(&self, x: &Mat) -> Result<Mat>;

    fn supports_adjoint(&self) -> bool {
        true
    }

    /// Whether concurrent calls to `apply` are allowed.
    fn is_reentrant(&self) -> bool {
        true
    }
}

macro_rules! forward_operator {
    ($($wrapper:ty),*) => {$(
        impl<T: LinearOperator + ?Sized> LinearOperator for $wrapper {
            fn nrows(&self) -> usize { (**self).nrows() }
            fn ncols(&self) -> usize { (**self).ncols() }
            fn apply(&self, x: &Mat) -> Result<Mat> { (**self).apply(x) }
            fn apply_adjoint(&self, x: &Mat) -> Result<Mat> { (**self).apply_adjoint(x) }
            fn supports_adjoint(&self) -> bool { (**self).supports_adjoint() }
            fn is_reentrant(&self) -> bool { (**self).is_reentrant() }
        }
    )*};
}
forward_operator!(&T, Box<T>, Arc<T>);

/// Checks the row count of an input block.
pub fn check_input(expected_rows: usize, x: &Mat) -> Result<()> {
    if x.nrows() != expected_rows {
        return Err(Error::dims(
            format!("{expected_rows} input rows"),
            format!("{} rows", x.nrows()),
        ));
    }
    Ok(())
}

/// An explicitly stored matrix.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    mat: Mat,
}

impl DenseOperator {
    pub fn new(mat: Mat) -> Self {
        Self { mat }
    }

    pub fn matrix(&self) -> &Mat {
        &self.mat
    }

    pub fn into_inner(self) -> Mat {
        self.mat
    }
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    fn apply(&self, x: &Mat) -> Result<Mat> {
        check_input(self.mat.ncols(), x)?;
        Ok(&self.mat * x)
    }

    fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
        check_input(self.mat.nrows(), x)?;
        Ok(self.mat.tr_mul(x))
    }
}

/// `a − b`.
pub struct DifferenceOperator<A, B> {
    a: A,
    b: B,
}

impl<A: LinearOperator, B: LinearOperator> DifferenceOperator<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
            return Err(Error::dims(
                format!("{}x{}", a.nrows(), a.ncols()),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        Ok(Self { a, b })
    }
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for DifferenceOperator<A, B> {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }

    fn ncols(&self) -> usize {
        self.a.ncols()
    }

    fn apply(&self, x: &Mat) -> Result<Mat> {
        Ok(self.a.apply(x)? - self.b.apply(x)?)
    }

    fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
        Ok(self.a.apply_adjoint(x)? - self.b.apply_adjoint(x)?)
    }

    fn supports_adjoint(&self) -> bool {
        self.a.supports_adjoint() && self.b.supports_adjoint()
    }

    fn is_reentrant(&self) -> bool {
        self.a.is_reentrant() && self.b.is_reentrant()
    }
}

/// Column counts and time spent inside a wrapped operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatvecCounts {
    pub forward_cols: u64,
    pub adjoint_cols: u64,
    pub forward_calls: u64,
    pub adjoint_calls: u64,
    pub forward_time: Duration,
    pub adjoint_time: Duration,
}

impl MatvecCounts {
    pub fn total_cols(&self) -> u64 {
        self.forward_cols + self.adjoint_cols
    }

    pub fn total_time(&self) -> Duration {
        self.forward_time + self.adjoint_time
    }

    /// Component-wise `self − earlier`.
    pub fn since(&self, earlier: &MatvecCounts) -> MatvecCounts {
        MatvecCounts {
            forward_cols: self.forward_cols - earlier.forward_cols,
            adjoint_cols: self.adjoint_cols - earlier.adjoint_cols,
            forward_calls: self.forward_calls - earlier.forward_calls,
            adjoint_calls: self.adjoint_calls - earlier.adjoint_calls,
            forward_time: self.forward_time.saturating_sub(earlier.forward_time),
            adjoint_time: self.adjoint_time.saturating_sub(earlier.adjoint_time),
        }
    }
}

/// Delegating wrapper that records how many columns pass through the
/// operator and how long the operator takes. Safe to share across threads.
pub struct CountingOperator<O> {
    inner: O,
    forward_cols: AtomicU64,
    adjoint_cols: AtomicU64,
    forward_calls: AtomicU64,
    adjoint_calls: AtomicU64,
    forward_nanos: AtomicU64,
    adjoint_nanos: AtomicU64,
}

pub fn with_counter<O: LinearOperator>(op: O) -> CountingOperator<O> {
    CountingOperator {
        inner: op,
        forward_cols: AtomicU64::new(0),
        adjoint_cols: AtomicU64::new(0),
        forward_calls: AtomicU64::new(0),
        adjoint_calls: AtomicU64::new(0),
        forward_nanos: AtomicU64::new(0),
        adjoint_nanos: AtomicU64::new(0),
    }
}

impl<O: LinearOperator> CountingOperator<O> {
    pub fn counts(&self) -> MatvecCounts {
        MatvecCounts {
            forward_cols: self.forward_cols.load(Ordering::Relaxed),
            adjoint_cols: self.adjoint_cols.load(Ordering::Relaxed),
            forward_calls: self.forward_calls.load(Ordering::Relaxed),
            adjoint_calls: self.adjoint_calls.load(Ordering::Relaxed),
            forward_time: Duration::from_nanos(self.forward_nanos.load(Ordering::Relaxed)),
            adjoint_time: Duration::from_nanos(self.adjoint_nanos.load(Ordering::Relaxed)),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.forward_cols,
            &self.adjoint_cols,
            &self.forward_calls,
            &self.adjoint_calls,
            &self.forward_nanos,
            &self.adjoint_nanos,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: LinearOperator> LinearOperator for CountingOperator<O> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &Mat) -> Result<Mat> {
        let start = Instant::now();
        let y = self.inner.apply(x);
        self.forward_nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.forward_cols
            .fetch_add(x.ncols() as u64, Ordering::Relaxed);
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        y
    }

    fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
        let start = Instant::now();
        let y = self.inner.apply_adjoint(x);
        self.adjoint_nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.adjoint_cols
            .fetch_add(x.ncols() as u64, Ordering::Relaxed);
        self.adjoint_calls.fetch_add(1, Ordering::Relaxed);
        y
    }

    fn supports_adjoint(&self) -> bool {
        self.inner.supports_adjoint()
    }

    fn is_reentrant(&self) -> bool {
        self.inner.is_reentrant()
    }
}

/// Relative adjoint-consistency residual
/// `|⟨Ax, y⟩ − ⟨x, Aᵀy⟩| / (‖Ax‖ ‖y‖)` on one random probe pair.
pub fn adjoint_residual(op: &dyn LinearOperator, seed: u64) -> Result<f64> {
    let x = gaussian_matrix(op.ncols(), 1, seed);
    let y = gaussian_matrix(op.nrows(), 1, seed.wrapping_add(1));
    let ax = op.apply(&x)?;
    let aty = op.apply_adjoint(&y)?;
    let lhs = ax.dot(&y);
    let rhs = x.dot(&aty);
    let scale = (ax.norm() * y.norm()).max(aty.norm() * x.norm());
    if scale == 0.0 {
        return Ok((lhs - rhs).abs());
    }
    Ok((lhs - rhs).abs() / scale)
}
