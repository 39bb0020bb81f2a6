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

/// H2 matrix: shared per-box bases that are nested across levels.
///
/// Long bases are kept only on the finest level built so far; a box `τ`
/// above it stores a short basis with `Σ_c k_c` rows such that
/// `U_τ = blkdiag(U_c) · Ushort_τ` over its children `c`.
#[derive(Clone, Debug)]
pub struct H2Rep {
    pub(super) tree: Arc<BoxTree>,
    pub(super) u_long: Vec<Mat>,
    pub(super) v_long: Vec<Mat>,
    pub(super) u_short: Vec<Mat>,
    pub(super) v_short: Vec<Mat>,
    pub(super) sigma_in: Vec<Vec<f64>>,
    pub(super) sigma_out: Vec<Vec<f64>>,
    pub(super) levels: Vec<Vec<CoreBlock>>,
    pub(super) leaf: Option<Vec<DenseBlock>>,
    pub(super) levels_done: usize,
}

/// Bases and singular values of one level, keyed by box id.
#[derive(Clone, Debug, Default)]
pub struct LevelBases {
    pub u: HashMap<usize, Mat>,
    pub v: HashMap<usize, Mat>,
    pub sigma_in: HashMap<usize, Vec<f64>>,
    pub sigma_out: HashMap<usize, Vec<f64>>,
}

impl H2Rep {
    pub fn new(tree: Arc<BoxTree>) -> Self {
        let empty: Vec<Mat> = tree
            .boxes()
            .iter()
            .map(|b| Mat::zeros(b.len(), 0))
            .collect();
        let nb = tree.n_boxes();
        Self {
            levels: empty_levels(&tree),
            u_long: empty.clone(),
            v_long: empty,
            u_short: vec![Mat::zeros(0, 0); nb],
            v_short: vec![Mat::zeros(0, 0); nb],
            sigma_in: vec![Vec::new(); nb],
            sigma_out: vec![Vec::new(); nb],
            tree,
            leaf: None,
            levels_done: 1,
        }
    }

    /// Appends the next level. The long bases of the previous level are
    /// replaced by short bases relative to the new ones.
    pub fn push_level(
        &mut self,
        level: usize,
        bases: LevelBases,
        blocks: Vec<CoreBlock>,
    ) -> Result<()> {
        check_next_level(self.levels_done, level, self.tree.depth())?;
        let LevelBases {
            u,
            v,
            sigma_in,
            sigma_out,
        } = bases;
        let mut new_u: Vec<(usize, Mat)> = Vec::new();
        let mut new_v: Vec<(usize, Mat)> = Vec::new();
        for (side, out) in [(u, &mut new_u), (v, &mut new_v)] {
            for (id, basis) in side {
                let node = self.tree.node(id);
                if node.level != level || basis.nrows() != node.len() {
                    return Err(Error::dims(
                        format!("{} basis rows for box {id} on level {level}", node.len()),
                        format!("{} rows on level {}", basis.nrows(), node.level),
                    ));
                }
                out.push((id, basis));
            }
        }
        let cols = |list: &[(usize, Mat)], id: usize| {
            list.iter()
                .find(|(b, _)| *b == id)
                .map_or(0, |(_, m)| m.ncols())
        };
        for blk in &blocks {
            let shape = (cols(&new_u, blk.alpha), cols(&new_v, blk.beta));
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
        for (id, basis) in new_u {
            self.u_long[id] = basis;
        }
        for (id, basis) in new_v {
            self.v_long[id] = basis;
        }
        for (id, s) in sigma_in {
            self.sigma_in[id] = s;
        }
        for (id, s) in sigma_out {
            self.sigma_out[id] = s;
        }
        if level > 2 {
            for parent in self.tree.level(level - 1) {
                self.u_short[parent] = self.shorten(parent, &self.u_long);
                self.v_short[parent] = self.shorten(parent, &self.v_long);
                let n = self.tree.node(parent).len();
                self.u_long[parent] = Mat::zeros(n, 0);
                self.v_long[parent] = Mat::zeros(n, 0);
            }
        }
        self.levels[level] = blocks;
        self.levels_done = level;
        Ok(())
    }

    /// Short basis of `parent`: the stacked `U_cᵀ · U_τ(I_c)` over children.
    fn shorten(&self, parent: usize, long: &[Mat]) -> Mat {
        let tau = &long[parent];
        let start = self.tree.range(parent).start;
        let children = &self.tree.node(parent).children;
        let rows: usize = children.iter().map(|&c| long[c].ncols()).sum();
        let mut short = Mat::zeros(rows, tau.ncols());
        let mut offset = 0;
        for &c in children {
            let rc = self.tree.range(c);
            let piece = long[c].tr_mul(&tau.rows(rc.start - start, rc.len()));
            short.rows_mut(offset, piece.nrows()).copy_from(&piece);
            offset += piece.nrows();
        }
        short
    }

    pub fn set_leaf(&mut self, leaf: Vec<DenseBlock>) -> Result<()> {
        check_leaf_blocks(&self.tree, &leaf)?;
        self.leaf = Some(leaf);
        Ok(())
    }

    /// Rank of the column basis of a box.
    pub fn rank_u(&self, id: usize) -> usize {
        if self.tree.node(id).level == self.levels_done {
            self.u_long[id].ncols()
        } else {
            self.u_short[id].ncols()
        }
    }

    pub fn rank_v(&self, id: usize) -> usize {
        if self.tree.node(id).level == self.levels_done {
            self.v_long[id].ncols()
        } else {
            self.v_short[id].ncols()
        }
    }

    /// Stored long basis (finest built level only).
    pub fn stored_long_u(&self, id: usize) -> &Mat {
        &self.u_long[id]
    }

    pub fn stored_long_v(&self, id: usize) -> &Mat {
        &self.v_long[id]
    }

    pub fn short_u(&self, id: usize) -> &Mat {
        &self.u_short[id]
    }

    pub fn short_v(&self, id: usize) -> &Mat {
        &self.v_short[id]
    }

    pub fn sigma_in(&self, id: usize) -> &[f64] {
        &self.sigma_in[id]
    }

    pub fn sigma_out(&self, id: usize) -> &[f64] {
        &self.sigma_out[id]
    }

    pub fn blocks(&self, level: usize) -> &[CoreBlock] {
        self.levels.get(level).map_or(&[], Vec::as_slice)
    }

    /// Long column basis of any built box, rebuilt through the nesting.
    pub fn long_u(&self, id: usize) -> Mat {
        self.long(id, &self.u_long, &self.u_short)
    }

    pub fn long_v(&self, id: usize) -> Mat {
        self.long(id, &self.v_long, &self.v_short)
    }

    fn long(&self, id: usize, long: &[Mat], short: &[Mat]) -> Mat {
        let node = self.tree.node(id);
        if node.level >= self.levels_done {
            return long[id].clone();
        }
        let s = &short[id];
        let mut out = Mat::zeros(node.len(), s.ncols());
        let start = self.tree.range(id).start;
        let mut offset = 0;
        for &c in &node.children {
            let uc = self.long(c, long, short);
            let rc = self.tree.range(c);
            let piece = &uc * s.rows(offset, uc.ncols());
            out.rows_mut(rc.start - start, rc.len()).copy_from(&piece);
            offset += uc.ncols();
        }
        out
    }

    /// Dense admissible content of levels `2..=upto` summed block by block
    /// from the rebuilt long bases. Reference for the pass-based apply.
    pub fn admissible_dense_naive(&self, upto: usize) -> Mat {
        let n = self.tree.n_points();
        let mut a = Mat::zeros(n, n);
        for level in 2..=upto.min(self.levels_done) {
            let u: HashMap<usize, Mat> = self
                .tree
                .level(level)
                .map(|id| (id, self.long_u(id)))
                .collect();
            let v: HashMap<usize, Mat> = self
                .tree
                .level(level)
                .map(|id| (id, self.long_v(id)))
                .collect();
            for blk in &self.levels[level] {
                let full = &u[&blk.alpha] * &blk.b * v[&blk.beta].transpose();
                let (ra, rb) = (self.tree.points(blk.alpha), self.tree.points(blk.beta));
                for (i, &gi) in ra.iter().enumerate() {
                    for (j, &gj) in rb.iter().enumerate() {
                        a[(gi, gj)] += full[(i, j)];
                    }
                }
            }
        }
        a
    }
}

impl HierarchicalRep for H2Rep {
    fn kind(&self) -> RepKind {
        RepKind::H2
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

    /// Upward pass from the finest built level, interactions on levels
    /// `2..=level`, downward pass back to the finest level.
    fn apply_admissible(&self, level: usize, xp: &Mat, adjoint: bool, tally: &FlopTally) -> Mat {
        let tree = &self.tree;
        let finest = self.levels_done;
        let r = xp.ncols();
        let mut out = Mat::zeros(xp.nrows(), r);
        if finest < 2 || level < 2 {
            return out;
        }
        let (src_long, src_short, dst_long, dst_short) = if adjoint {
            (&self.u_long, &self.u_short, &self.v_long, &self.v_short)
        } else {
            (&self.v_long, &self.v_short, &self.u_long, &self.u_short)
        };
        let nb = tree.n_boxes();
        let mut q: Vec<Mat> = vec![Mat::zeros(0, r); nb];
        for id in tree.level(finest) {
            let rg = tree.range(id);
            let basis = &src_long[id];
            tally.gemm(basis.ncols(), r, basis.nrows());
            q[id] = basis.tr_mul(&xp.rows(rg.start, rg.len()));
        }
        for l in (2..finest).rev() {
            for id in tree.level(l) {
                let short = &src_short[id];
                let children = &tree.node(id).children;
                let rows: usize = children.iter().map(|&c| q[c].nrows()).sum();
                let mut stacked = Mat::zeros(rows, r);
                let mut offset = 0;
                for &c in children {
                    stacked.rows_mut(offset, q[c].nrows()).copy_from(&q[c]);
                    offset += q[c].nrows();
                }
                tally.gemm(short.ncols(), r, short.nrows());
                q[id] = short.tr_mul(&stacked);
            }
        }

        let dst_rank = |id: usize| {
            if tree.node(id).level == finest {
                dst_long[id].ncols()
            } else {
                dst_short[id].ncols()
            }
        };
        let mut acc: Vec<Mat> = (0..nb)
            .map(|id| {
                let lv = tree.node(id).level;
                if (2..=finest).contains(&lv) {
                    Mat::zeros(dst_rank(id), r)
                } else {
                    Mat::zeros(0, r)
                }
            })
            .collect();
        for blocks in &self.levels[2..=level.min(finest)] {
            for blk in blocks {
                let (src, dst) = if adjoint {
                    (blk.alpha, blk.beta)
                } else {
                    (blk.beta, blk.alpha)
                };
                let contrib = if adjoint {
                    blk.b.tr_mul(&q[src])
                } else {
                    &blk.b * &q[src]
                };
                tally.gemm(blk.b.nrows(), r, blk.b.ncols());
                acc[dst] += contrib;
            }
        }

        for l in 2..finest {
            for id in tree.level(l) {
                let short = &dst_short[id];
                if short.ncols() == 0 {
                    continue;
                }
                tally.gemm(short.nrows(), r, short.ncols());
                let pushed = short * &acc[id];
                let mut offset = 0;
                for &c in &tree.node(id).children {
                    let k = acc[c].nrows();
                    acc[c] += pushed.rows(offset, k);
                    offset += k;
                }
            }
        }
        for id in tree.level(finest) {
            let basis = &dst_long[id];
            if basis.ncols() == 0 {
                continue;
            }
            let rg = tree.range(id);
            tally.gemm(basis.nrows(), r, basis.ncols());
            let mut target = out.rows_mut(rg.start, rg.len());
            target += basis * &acc[id];
        }
        out
    }

    fn storage_stats(&self) -> StorageStats {
        let mut stats = StorageStats::new(self.tree.n_points());
        for node in self.tree.boxes() {
            let (l, id) = (node.level, node.id);
            stats.add(l, Category::U, self.u_long[id].len());
            stats.add(l, Category::V, self.v_long[id].len());
            stats.add(
                l,
                Category::Transfer,
                self.u_short[id].len() + self.v_short[id].len(),
            );
            stats.add(
                l,
                Category::Transfer,
                self.sigma_in[id].len() + self.sigma_out[id].len(),
            );
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
    use crate::rep::UnifH1Rep;

    /// Nested bases built top-down from random orthonormal pieces.
    fn nested_h2(tree: &Arc<BoxTree>, k: usize, seed: u64) -> H2Rep {
        let depth = tree.depth();
        // leaf bases, then parents as blkdiag(children) * short
        let mut u_long: Vec<Mat> = vec![Mat::zeros(0, 0); tree.n_boxes()];
        let mut v_long = u_long.clone();
        for (side, store) in [(0u64, &mut u_long), (1, &mut v_long)] {
            for id in tree.leaves() {
                let n = tree.node(id).len();
                store[id] =
                    qr_orthonormal(&gaussian_matrix(n, k, seed + 4 * id as u64 + side), None).q;
            }
            for l in (2..depth).rev() {
                for id in tree.level(l) {
                    let node = tree.node(id);
                    let rows: usize = node.children.iter().map(|&c| store[c].ncols()).sum();
                    let kk = k.min(rows);
                    let short = qr_orthonormal(
                        &gaussian_matrix(rows, kk, seed + 4 * id as u64 + 2 + side),
                        None,
                    )
                    .q;
                    let mut long = Mat::zeros(node.len(), short.ncols());
                    let start = tree.range(id).start;
                    let mut off = 0;
                    for &c in &node.children {
                        let rc = tree.range(c);
                        let kc = store[c].ncols();
                        long.rows_mut(rc.start - start, rc.len())
                            .copy_from(&(&store[c] * short.rows(off, kc)));
                        off += kc;
                    }
                    store[id] = long;
                }
            }
        }
        let mut rep = H2Rep::new(tree.clone());
        for l in 2..=depth {
            let mut bases = LevelBases::default();
            for id in tree.level(l) {
                bases.u.insert(id, u_long[id].clone());
                bases.v.insert(id, v_long[id].clone());
            }
            let blocks = tree
                .admissible_pairs(l)
                .into_iter()
                .map(|(a, b)| CoreBlock {
                    alpha: a,
                    beta: b,
                    b: gaussian_matrix(
                        u_long[a].ncols(),
                        v_long[b].ncols(),
                        seed ^ (7 * a + 13 * b) as u64,
                    ),
                })
                .collect();
            rep.push_level(l, bases, blocks).unwrap();
            for id in tree.level(l) {
                let rebuilt = rep.long_u(id);
                assert!(rel_diff(&rebuilt, &u_long[id]) <= 1e-12);
            }
        }
        rep.set_leaf(random_leaf(tree, seed + 5)).unwrap();
        // every rebuilt long basis is still orthonormal
        for l in 2..=depth {
            for id in tree.level(l) {
                let u = rep.long_u(id);
                let err = (u.tr_mul(&u) - Mat::identity(u.ncols(), u.ncols())).amax();
                assert!(err <= 1e-10);
            }
        }
        rep
    }

    #[test]
    fn pass_apply_matches_naive_sum() {
        let tree = tree_random_2d(600, 12, 2);
        assert!(tree.depth() >= 4);
        let rep = nested_h2(&tree, 4, 11);
        let x = gaussian_matrix(600, 3, 8);
        for level in 2..=tree.depth() {
            let want = rep.admissible_dense_naive(level);
            let got = rep.apply_truncated(level, &x).unwrap();
            assert!(rel_diff(&got, &(&want * &x)) <= 1e-11, "level {level}");
            let adj = rep
                .apply_truncated_counted(level, &x, true, &FlopTally::new())
                .unwrap();
            assert!(rel_diff(&adj, &(want.transpose() * &x)) <= 1e-11);
        }
    }

    #[test]
    fn single_level_matches_uniform() {
        let tree = tree_1d(128, 32);
        assert_eq!(tree.depth(), 2);
        let mut u = HashMap::new();
        let mut v = HashMap::new();
        for id in tree.level(2) {
            u.insert(
                id,
                qr_orthonormal(&gaussian_matrix(32, 3, id as u64), None).q,
            );
            v.insert(
                id,
                qr_orthonormal(&gaussian_matrix(32, 3, 50 + id as u64), None).q,
            );
        }
        let blocks: Vec<CoreBlock> = tree
            .admissible_pairs(2)
            .into_iter()
            .map(|(a, b)| CoreBlock {
                alpha: a,
                beta: b,
                b: gaussian_matrix(3, 3, (a * 9 + b) as u64),
            })
            .collect();
        let mut unif = UnifH1Rep::new(tree.clone());
        unif.push_level(2, u.clone(), v.clone(), blocks.clone())
            .unwrap();
        let mut h2 = H2Rep::new(tree.clone());
        let bases = LevelBases {
            u,
            v,
            ..LevelBases::default()
        };
        h2.push_level(2, bases, blocks).unwrap();
        let x = gaussian_matrix(128, 2, 3);
        let a = unif.apply_truncated(2, &x).unwrap();
        let b = h2.apply_truncated(2, &x).unwrap();
        assert!(rel_diff(&b, &a) <= 1e-11);
    }

    #[test]
    fn storage_is_smaller_than_h1_on_deep_trees() {
        let tree = tree_1d(1024, 16);
        assert!(tree.depth() >= 4);
        let rep = nested_h2(&tree, 4, 1);
        let stats = rep.storage_stats();
        // the H1 count of the same blocks with rank 4
        let mut h1 = 0u64;
        for l in 2..=tree.depth() {
            for (a, b) in tree.admissible_pairs(l) {
                h1 += (4 * tree.node(a).len() + 16 + 4 * tree.node(b).len()) as u64;
            }
        }
        h1 += stats.by_category(Category::Dense);
        assert!(stats.total() < h1, "{} vs {h1}", stats.total());
    }
}
