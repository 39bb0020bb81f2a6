use std::collections::HashMap;
use std::sync::Arc;

use super::{
    check_leaf_blocks, check_next_level, empty_levels, Category, CoreBlock, DenseBlock,
    HierarchicalRep, RepKind, StorageStats,
};
use crate::error::{Error, Result};
use crate::flops::FlopTally;
use crate::linalg::Mat;
use crate::tree::BoxTree;

/// Uniform H1 matrix: one column basis `U_α` and one row basis `V_α` per
/// box, shared by every admissible block the box takes part in.
#[derive(Clone, Debug)]
pub struct UnifH1Rep {
    pub(super) tree: Arc<BoxTree>,
    pub(super) u: Vec<Mat>,
    pub(super) v: Vec<Mat>,
    pub(super) levels: Vec<Vec<CoreBlock>>,
    pub(super) leaf: Option<Vec<DenseBlock>>,
    pub(super) levels_done: usize,
}

impl UnifH1Rep {
    pub fn new(tree: Arc<BoxTree>) -> Self {
        let empty: Vec<Mat> = tree
            .boxes()
            .iter()
            .map(|b| Mat::zeros(b.len(), 0))
            .collect();
        Self {
            levels: empty_levels(&tree),
            u: empty.clone(),
            v: empty,
            tree,
            leaf: None,
            levels_done: 1,
        }
    }

    /// Appends the bases and core blocks of the next level. Boxes missing
    /// from the maps keep empty bases.
    pub fn push_level(
        &mut self,
        level: usize,
        u: HashMap<usize, Mat>,
        v: HashMap<usize, Mat>,
        blocks: Vec<CoreBlock>,
    ) -> Result<()> {
        check_next_level(self.levels_done, level, self.tree.depth())?;
        for (side, store) in [(u, &mut self.u), (v, &mut self.v)] {
            for (id, basis) in side {
                let node = self.tree.node(id);
                if node.level != level || basis.nrows() != node.len() {
                    return Err(Error::dims(
                        format!("{} basis rows for box {id} on level {level}", node.len()),
                        format!("{} rows on level {}", basis.nrows(), node.level),
                    ));
                }
                store[id] = basis;
            }
        }
        for blk in &blocks {
            let shape = (self.u[blk.alpha].ncols(), self.v[blk.beta].ncols());
            if blk.b.shape() != shape {
                return Err(Error::dims(
                    format!(
                        "{}x{} core for ({}, {})",
                        shape.0, shape.1, blk.alpha, blk.beta
                    ),
                    format!("{}x{}", blk.b.nrows(), blk.b.ncols()),
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

    pub fn u(&self, id: usize) -> &Mat {
        &self.u[id]
    }

    pub fn v(&self, id: usize) -> &Mat {
        &self.v[id]
    }

    pub fn blocks(&self, level: usize) -> &[CoreBlock] {
        self.levels.get(level).map_or(&[], Vec::as_slice)
    }

    pub fn max_rank(&self) -> usize {
        self.u
            .iter()
            .chain(&self.v)
            .map(Mat::ncols)
            .max()
            .unwrap_or(0)
    }
}

impl HierarchicalRep for UnifH1Rep {
    fn kind(&self) -> RepKind {
        RepKind::UnifH1
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
        let tree = &self.tree;
        let r = xp.ncols();
        let (src_basis, dst_basis) = if adjoint {
            (&self.u, &self.v)
        } else {
            (&self.v, &self.u)
        };
        let mut out = Mat::zeros(xp.nrows(), r);
        for l in 2..=level.min(tree.depth()) {
            let boxes = tree.level(l);
            let offset = boxes.start;
            let q: Vec<Mat> = boxes
                .clone()
                .map(|id| {
                    let rg = tree.range(id);
                    let basis = &src_basis[id];
                    tally.gemm(basis.ncols(), r, basis.nrows());
                    basis.tr_mul(&xp.rows(rg.start, rg.len()))
                })
                .collect();
            let mut acc: Vec<Mat> = boxes
                .clone()
                .map(|id| Mat::zeros(dst_basis[id].ncols(), r))
                .collect();
            for blk in &self.levels[l] {
                let (src, dst) = if adjoint {
                    (blk.alpha, blk.beta)
                } else {
                    (blk.beta, blk.alpha)
                };
                let contrib = if adjoint {
                    blk.b.tr_mul(&q[src - offset])
                } else {
                    &blk.b * &q[src - offset]
                };
                tally.gemm(blk.b.nrows(), r, blk.b.ncols());
                acc[dst - offset] += contrib;
            }
            for id in boxes {
                let basis = &dst_basis[id];
                if basis.ncols() == 0 {
                    continue;
                }
                let rg = tree.range(id);
                tally.gemm(basis.nrows(), r, basis.ncols());
                let mut target = out.rows_mut(rg.start, rg.len());
                target += basis * &acc[id - offset];
            }
        }
        out
    }

    fn storage_stats(&self) -> StorageStats {
        let mut stats = StorageStats::new(self.tree.n_points());
        for node in self.tree.boxes() {
            stats.add(node.level, Category::U, self.u[node.id].len());
            stats.add(node.level, Category::V, self.v[node.id].len());
        }
        for (level, blocks) in self.levels.iter().enumerate() {
            for blk in blocks {
                stats.add(level, Category::B, blk.b.len());
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_orthonormal;
    use crate::random::gaussian_matrix;
    use crate::rep::testing::*;

    pub(crate) fn random_unif(tree: &Arc<BoxTree>, k: usize, seed: u64) -> UnifH1Rep {
        let mut rep = UnifH1Rep::new(tree.clone());
        for level in 2..=tree.depth() {
            let mut u = HashMap::new();
            let mut v = HashMap::new();
            for id in tree.level(level) {
                let n = tree.node(id).len();
                u.insert(
                    id,
                    qr_orthonormal(&gaussian_matrix(n, k, seed + 2 * id as u64), None).q,
                );
                v.insert(
                    id,
                    qr_orthonormal(&gaussian_matrix(n, k, seed + 2 * id as u64 + 1), None).q,
                );
            }
            let blocks = tree
                .admissible_pairs(level)
                .into_iter()
                .map(|(a, b)| CoreBlock {
                    alpha: a,
                    beta: b,
                    b: gaussian_matrix(u[&a].ncols(), v[&b].ncols(), seed ^ (a * 1000 + b) as u64),
                })
                .collect();
            rep.push_level(level, u, v, blocks).unwrap();
        }
        rep.set_leaf(random_leaf(tree, seed + 7)).unwrap();
        rep
    }

    fn oracle(rep: &UnifH1Rep, upto: usize) -> Mat {
        let tree = rep.tree();
        let n = tree.n_points();
        let mut a = Mat::zeros(n, n);
        for level in 2..=upto {
            for blk in rep.blocks(level) {
                let full = rep.u(blk.alpha) * &blk.b * rep.v(blk.beta).transpose();
                let (ra, rb) = (tree.points(blk.alpha), tree.points(blk.beta));
                for (i, &gi) in ra.iter().enumerate() {
                    for (j, &gj) in rb.iter().enumerate() {
                        a[(gi, gj)] += full[(i, j)];
                    }
                }
            }
        }
        a
    }

    #[test]
    fn apply_matches_blockwise_assembly() {
        let tree = tree_random_2d(400, 10, 9);
        let rep = random_unif(&tree, 4, 3);
        let x = gaussian_matrix(400, 3, 5);
        for level in 2..=tree.depth() {
            let got = rep.apply_truncated(level, &x).unwrap();
            assert!(rel_diff(&got, &(oracle(&rep, level) * &x)) <= 1e-12);
            let adj = rep
                .apply_truncated_counted(level, &x, true, &FlopTally::new())
                .unwrap();
            assert!(rel_diff(&adj, &(oracle(&rep, level).transpose() * &x)) <= 1e-12);
        }
    }

    #[test]
    fn bad_core_shape_rejected() {
        let tree = tree_1d(64, 8);
        let mut rep = UnifH1Rep::new(tree.clone());
        let blocks = vec![CoreBlock {
            alpha: 3,
            beta: 5,
            b: Mat::zeros(1, 1),
        }];
        assert!(rep
            .push_level(2, HashMap::new(), HashMap::new(), blocks)
            .is_err());
    }
}
