use std::sync::Arc;

use super::{
    check_leaf_blocks, check_next_level, Category, DenseBlock, HierarchicalRep, LowRankBlock,
    RepKind, StorageStats,
};
use crate::error::{Error, Result};
use crate::flops::FlopTally;
use crate::linalg::Mat;
use crate::tree::BoxTree;

/// H1 matrix: every admissible block has its own bases.
#[derive(Clone, Debug)]
pub struct H1Rep {
    pub(super) tree: Arc<BoxTree>,
    pub(super) levels: Vec<Vec<LowRankBlock>>,
    pub(super) leaf: Option<Vec<DenseBlock>>,
    pub(super) levels_done: usize,
}

impl H1Rep {
    pub fn new(tree: Arc<BoxTree>) -> Self {
        let levels = vec![Vec::new(); tree.depth() + 1];
        Self {
            tree,
            levels,
            leaf: None,
            levels_done: 1,
        }
    }

    /// Appends the blocks of the next level.
    pub fn push_level(&mut self, level: usize, blocks: Vec<LowRankBlock>) -> Result<()> {
        check_next_level(self.levels_done, level, self.tree.depth())?;
        for blk in &blocks {
            let (na, nb) = (
                self.tree.node(blk.alpha).len(),
                self.tree.node(blk.beta).len(),
            );
            let ok = blk.u.nrows() == na
                && blk.v.nrows() == nb
                && blk.b.shape() == (blk.u.ncols(), blk.v.ncols())
                && self.tree.node(blk.alpha).level == level;
            if !ok {
                return Err(Error::dims(
                    format!("factors of a {na}x{nb} block on level {level}"),
                    format!(
                        "U {}x{}, B {}x{}, V {}x{}",
                        blk.u.nrows(),
                        blk.u.ncols(),
                        blk.b.nrows(),
                        blk.b.ncols(),
                        blk.v.nrows(),
                        blk.v.ncols()
                    ),
                ));
            }
        }
        self.levels[level] = blocks;
        self.levels_done = level;
        Ok(())
    }

    pub fn set_leaf(&mut self, leaf: Vec<DenseBlock>) -> Result<()> {
        check_leaf_blocks(&self.tree, &leaf)?;
        self.leaf = Some(leaf);
        Ok(())
    }

    pub fn blocks(&self, level: usize) -> &[LowRankBlock] {
        self.levels.get(level).map_or(&[], Vec::as_slice)
    }

    /// Largest block rank.
    pub fn max_rank(&self) -> usize {
        self.levels
            .iter()
            .flatten()
            .map(|b| b.u.ncols().max(b.v.ncols()))
            .max()
            .unwrap_or(0)
    }
}

impl HierarchicalRep for H1Rep {
    fn kind(&self) -> RepKind {
        RepKind::H1
    }

    fn tree(&self) -> &Arc<BoxTree> {
        &self.tree
    }

    fn levels_done(&self) -> usize {
        self.levels_done
    }

    fn leaf_blocks(&self) -> Option<&[DenseBlock]> {
        self.leaf.as_deref()
    }

    fn apply_admissible(&self, level: usize, xp: &Mat, adjoint: bool, tally: &FlopTally) -> Mat {
        let mut out = Mat::zeros(xp.nrows(), xp.ncols());
        for blocks in &self.levels[2.min(self.levels.len())..=level.min(self.levels.len() - 1)] {
            for blk in blocks {
                // both factors stay thin: apply V, B, U in sequence
                let (src, dst) = if adjoint {
                    (blk.alpha, blk.beta)
                } else {
                    (blk.beta, blk.alpha)
                };
                let rs = self.tree.range(src);
                let x = xp.rows(rs.start, rs.len());
                let (first, second) = if adjoint {
                    (&blk.u, &blk.v)
                } else {
                    (&blk.v, &blk.u)
                };
                let t = first.tr_mul(&x);
                let t = if adjoint {
                    blk.b.tr_mul(&t)
                } else {
                    &blk.b * t
                };
                let y = second * t;
                tally.gemm(first.ncols(), xp.ncols(), first.nrows());
                tally.gemm(blk.b.nrows(), xp.ncols(), blk.b.ncols());
                tally.gemm(second.nrows(), xp.ncols(), second.ncols());
                let rd = self.tree.range(dst);
                let mut target = out.rows_mut(rd.start, rd.len());
                target += y;
            }
        }
        out
    }

    fn storage_stats(&self) -> StorageStats {
        let mut stats = StorageStats::new(self.tree.n_points());
        for (level, blocks) in self.levels.iter().enumerate() {
            for blk in blocks {
                stats.add(level, Category::U, blk.u.len());
                stats.add(level, Category::B, blk.b.len());
                stats.add(level, Category::V, blk.v.len());
            }
        }
        if let Some(leaf) = &self.leaf {
            for blk in leaf {
                stats.add(self.tree.depth(), Category::Dense, blk.d.len());
            }
        }
        stats
    }
}
