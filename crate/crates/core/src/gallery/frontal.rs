use rayon::prelude::*;

use super::MIRROR_CAP;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::{check_input, LinearOperator};
use crate::tree::PointCloud;

/// Cholesky factor of a symmetric positive definite band matrix, stored by
/// rows: `band[i * (bw + 1) + (i − j)] = L_ij` for `i − bw ≤ j ≤ i`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    /// Factors the matrix whose lower band entries are given by `entry(i, j)`
    /// for `j ≤ i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = entry(i, j);
                for k in lo.max(j.saturating_sub(bw))..j {
                    s -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Factorization(format!(
                            "band matrix is not positive definite at row {i}"
                        )));
                    }
                    band[i * w] = s.sqrt();
                } else {
                    band[i * w + (i - j)] = s / band[j * w];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.band[i * w + (i - k)] * b[k];
            }
            b[i] = s / self.band[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + w).min(self.n) {
                s -= self.band[k * w + (k - i)] * b[k];
            }
            b[i] = s / self.band[i * w];
        }
    }
}

/// Schur complement of a five-point Laplacian on an `N × n` grid onto its
/// middle column, with Dirichlet boundary outside the grid. Grid rows run
/// along the separator; each half is ordered row by row.
#[derive(Clone, Debug)]
pub struct FrontalSchur {
    rows: usize,
    width: usize,
    half: BandCholesky,
}

/// Five-point stencil on an `h`-wide strip of `rows` grid rows, row-major.
fn strip_entry(h: usize) -> impl Fn(usize, usize) -> f64 {
    move |i, j| {
        if i == j {
            4.0
        } else if i - j == h || (i - j == 1 && i % h != 0) {
            -1.0
        } else {
            0.0
        }
    }
}

pub fn op_schur_frontal(rows: usize, width: usize) -> Result<FrontalSchur> {
    if rows < 4 || width < 3 || width % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "frontal grid needs N >= 4 rows and an odd width >= 3, got {rows} x {width}"
        )));
    }
    let h = (width - 1) / 2;
    // both halves are mirror images with the same row-major strip matrix
    let half = BandCholesky::factor(rows * h, h, strip_entry(h))?;
    Ok(FrontalSchur { rows, width, half })
}

impl FrontalSchur {
    pub fn width(&self) -> usize {
        self.width
    }

    /// Separator nodes on the unit interval.
    pub fn cloud(&self) -> Result<PointCloud> {
        let n = self.rows;
        PointCloud::new(1, (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect())
    }

    pub fn dense_mirror(&self) -> Option<Mat> {
        let n = self.rows;
        (n <= MIRROR_CAP)
            .then(|| self.apply(&Mat::identity(n, n)).ok())
            .flatten()
    }

    fn apply_column(&self, x: &[f64], out: &mut [f64]) {
        let (n, h) = (self.rows, (self.width - 1) / 2);
        for i in 0..n {
            let mut v = 4.0 * x[i];
            if i > 0 {
                v -= x[i - 1];
            }
            if i + 1 < n {
                v -= x[i + 1];
            }
            out[i] = v;
        }
        // the column next to the separator is the last of each row on the
        // left and, mirrored, also the last on the right
        let mut z = vec![0.0; n * h];
        for i in 0..n {
            z[i * h + h - 1] = -x[i];
        }
        self.half.solve_in_place(&mut z);
        for i in 0..n {
            out[i] += 2.0 * z[i * h + h - 1];
        }
    }
}

impl LinearOperator for FrontalSchur {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &Mat) -> Result<Mat> {
        check_input(self.rows, x)?;
        let n = self.rows;
        let mut out = Mat::zeros(n, x.ncols());
        out.as_mut_slice()
            .par_chunks_mut(n)
            .zip(x.as_slice().par_chunks(n))
            .for_each(|(o, col)| self.apply_column(col, o));
        Ok(out)
    }

    fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
        self.apply(x)
    }
}
