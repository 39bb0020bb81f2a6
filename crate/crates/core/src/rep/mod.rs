//! Compressed representations and their matrix-vector products.
//!
//! All three formats store per-box matrices with rows in tree order (see
//! [`BoxTree::points`]); applies permute the input once, work on
//! contiguous box ranges and permute back.

mod h1;
mod h2;
pub mod io;
mod stats;
mod unif;

use std::sync::Arc;

pub use h1::H1Rep;
pub use h2::{H2Rep, LevelBases};
pub use stats::{Category, StorageStats};
pub use unif::UnifH1Rep;

use crate::error::{Error, Result};
use crate::flops::FlopTally;
use crate::linalg::Mat;
use crate::operator::{check_input, LinearOperator};
use crate::tree::BoxTree;

/// Admissible block `A(I_α, I_β) ≈ U B Vᵀ` with its own bases.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankBlock {
    pub alpha: usize,
    pub beta: usize,
    pub u: Mat,
    pub b: Mat,
    pub v: Mat,
}

/// Core matrix of an admissible block in a shared-basis format.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreBlock {
    pub alpha: usize,
    pub beta: usize,
    pub b: Mat,
}

/// Dense leaf neighbor block `A(I_α, I_β)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    pub alpha: usize,
    pub beta: usize,
    pub d: Mat,
}

/// Which format a representation stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RepKind {
    H1,
    UnifH1,
    H2,
}

impl RepKind {
    pub fn name(self) -> &'static str {
        match self {
            RepKind::H1 => "h1",
            RepKind::UnifH1 => "unif-h1",
            RepKind::H2 => "h2",
        }
    }
}

/// Rows of `x` permuted into tree order.
pub fn to_tree_order(tree: &BoxTree, x: &Mat) -> Mat {
    let order = tree.order();
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(order[i], j)])
}

/// Inverse of [`to_tree_order`].
pub fn from_tree_order(tree: &BoxTree, xp: &Mat) -> Mat {
    let mut out = Mat::zeros(xp.nrows(), xp.ncols());
    for (i, &p) in tree.order().iter().enumerate() {
        out.row_mut(p).copy_from(&xp.row(i));
    }
    out
}

/// `A(I_α, I_β)` from a dense matrix in input order, rows and columns in
/// tree order.
pub fn dense_block(tree: &BoxTree, a: &Mat, alpha: usize, beta: usize) -> Mat {
    let (ra, rb) = (tree.points(alpha), tree.points(beta));
    Mat::from_fn(ra.len(), rb.len(), |i, j| a[(ra[i], rb[j])])
}

/// `out(I_α) += M · x(I_β)` on tree-ordered blocks (or the transposed
/// product when `adjoint`).
fn add_product(
    tree: &BoxTree,
    out: &mut Mat,
    xp: &Mat,
    m: &Mat,
    alpha: usize,
    beta: usize,
    adjoint: bool,
    tally: &FlopTally,
) {
    let r = xp.ncols();
    if adjoint {
        let src = tree.range(alpha);
        let dst = tree.range(beta);
        let y = m.tr_mul(&xp.rows(src.start, src.len()));
        tally.gemm(m.ncols(), r, m.nrows());
        let mut target = out.rows_mut(dst.start, dst.len());
        target += y;
    } else {
        let src = tree.range(beta);
        let dst = tree.range(alpha);
        let y = m * xp.rows(src.start, src.len());
        tally.gemm(m.nrows(), r, m.ncols());
        let mut target = out.rows_mut(dst.start, dst.len());
        target += y;
    }
}

/// Adds the dense leaf blocks, tree order in and out.
fn apply_leaf(
    tree: &BoxTree,
    leaf: &[DenseBlock],
    xp: &Mat,
    out: &mut Mat,
    adjoint: bool,
    tally: &FlopTally,
) {
    for blk in leaf {
        add_product(tree, out, xp, &blk.d, blk.alpha, blk.beta, adjoint, tally);
    }
}

/// Common surface of the three formats.
pub trait HierarchicalRep {
    fn kind(&self) -> RepKind;
    fn tree(&self) -> &Arc<BoxTree>;
    /// Highest level whose admissible blocks are present (1 when none are).
    fn levels_done(&self) -> usize;
    fn leaf_blocks(&self) -> Option<&[DenseBlock]>;
    /// Admissible blocks of levels `2..=level`, tree order in and out.
    fn apply_admissible(&self, level: usize, xp: &Mat, adjoint: bool, tally: &FlopTally) -> Mat;
    fn storage_stats(&self) -> StorageStats;

    fn is_complete(&self) -> bool {
        self.levels_done() >= self.tree().depth().max(1) && self.leaf_blocks().is_some()
    }

    /// The level-truncated map `A^{(level)}` applied to `x` (input order).
    fn apply_truncated(&self, level: usize, x: &Mat) -> Result<Mat> {
        self.apply_truncated_counted(level, x, false, &FlopTally::new())
    }

    fn apply_truncated_counted(
        &self,
        level: usize,
        x: &Mat,
        adjoint: bool,
        tally: &FlopTally,
    ) -> Result<Mat> {
        let tree = self.tree();
        check_input(tree.n_points(), x)?;
        if level < 2 {
            return Ok(Mat::zeros(x.nrows(), x.ncols()));
        }
        if level > self.levels_done() {
            return Err(Error::IncompleteRep {
                requested: level,
                available: self.levels_done(),
            });
        }
        let xp = to_tree_order(tree, x);
        let yp = self.apply_admissible(level, &xp, adjoint, tally);
        Ok(from_tree_order(tree, &yp))
    }

    fn apply_full(&self, x: &Mat) -> Result<Mat> {
        self.apply_full_counted(x, false, &FlopTally::new())
    }

    fn apply_full_adjoint(&self, x: &Mat) -> Result<Mat> {
        self.apply_full_counted(x, true, &FlopTally::new())
    }

    fn apply_full_counted(&self, x: &Mat, adjoint: bool, tally: &FlopTally) -> Result<Mat> {
        let tree = self.tree();
        check_input(tree.n_points(), x)?;
        let leaf = match (self.is_complete(), self.leaf_blocks()) {
            (true, Some(leaf)) => leaf,
            _ => {
                return Err(Error::IncompleteRep {
                    requested: tree.depth().max(1) + 1,
                    available: self.levels_done(),
                })
            }
        };
        let xp = to_tree_order(tree, x);
        let mut yp = if tree.depth() >= 2 {
            self.apply_admissible(tree.depth(), &xp, adjoint, tally)
        } else {
            Mat::zeros(xp.nrows(), xp.ncols())
        };
        apply_leaf(tree, leaf, &xp, &mut yp, adjoint, tally);
        Ok(from_tree_order(tree, &yp))
    }

    /// Dense matrix of the full map, built from applies to the identity.
    fn to_dense(&self) -> Result<Mat> {
        let n = self.tree().n_points();
        self.apply_full(&Mat::identity(n, n))
    }
}

/// Any of the three formats.
#[derive(Clone, Debug)]
pub enum CompressedRep {
    H1(H1Rep),
    UnifH1(UnifH1Rep),
    H2(H2Rep),
}

impl CompressedRep {
    pub fn as_dyn(&self) -> &dyn HierarchicalRep {
        match self {
            CompressedRep::H1(r) => r,
            CompressedRep::UnifH1(r) => r,
            CompressedRep::H2(r) => r,
        }
    }
}

impl From<H1Rep> for CompressedRep {
    fn from(r: H1Rep) -> Self {
        CompressedRep::H1(r)
    }
}

impl From<UnifH1Rep> for CompressedRep {
    fn from(r: UnifH1Rep) -> Self {
        CompressedRep::UnifH1(r)
    }
}

impl From<H2Rep> for CompressedRep {
    fn from(r: H2Rep) -> Self {
        CompressedRep::H2(r)
    }
}

impl HierarchicalRep for CompressedRep {
    fn kind(&self) -> RepKind {
        self.as_dyn().kind()
    }

    fn tree(&self) -> &Arc<BoxTree> {
        self.as_dyn().tree()
    }

    fn levels_done(&self) -> usize {
        self.as_dyn().levels_done()
    }

    fn leaf_blocks(&self) -> Option<&[DenseBlock]> {
        self.as_dyn().leaf_blocks()
    }

    fn apply_admissible(&self, level: usize, xp: &Mat, adjoint: bool, tally: &FlopTally) -> Mat {
        self.as_dyn().apply_admissible(level, xp, adjoint, tally)
    }

    fn storage_stats(&self) -> StorageStats {
        self.as_dyn().storage_stats()
    }
}

/// Exposes a complete representation as a black box.
macro_rules! rep_operator {
    ($($t:ty),*) => {$(
        impl LinearOperator for $t {
            fn nrows(&self) -> usize {
                self.tree().n_points()
            }
            fn ncols(&self) -> usize {
                self.tree().n_points()
            }
            fn apply(&self, x: &Mat) -> Result<Mat> {
                self.apply_full(x)
            }
            fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
                self.apply_full_adjoint(x)
            }
        }
    )*};
}
rep_operator!(H1Rep, UnifH1Rep, H2Rep, CompressedRep);

fn empty_levels(tree: &BoxTree) -> Vec<Vec<CoreBlock>> {
    vec![Vec::new(); tree.depth() + 1]
}

fn check_next_level(levels_done: usize, level: usize, depth: usize) -> Result<()> {
    if level != levels_done.max(1) + 1 || level > depth {
        return Err(Error::InvalidConfig(format!(
            "level {level} cannot follow level {levels_done} (depth {depth})"
        )));
    }
    Ok(())
}

fn check_leaf_blocks(tree: &BoxTree, leaf: &[DenseBlock]) -> Result<()> {
    for blk in leaf {
        let shape = (tree.node(blk.alpha).len(), tree.node(blk.beta).len());
        if blk.d.shape() != shape {
            return Err(Error::dims(
                format!("{}x{} leaf block", shape.0, shape.1),
                format!("{}x{}", blk.d.nrows(), blk.d.ncols()),
            ));
        }
    }
    Ok(())
}
