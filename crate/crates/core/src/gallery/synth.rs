use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{qr_orthonormal, Mat};
use crate::peeling::Format;
use crate::random::{derive_seed, gaussian_matrix, tag};
use crate::rep::{
    CompressedRep, CoreBlock, DenseBlock, H1Rep, H2Rep, HierarchicalRep, LevelBases, LowRankBlock,
    UnifH1Rep,
};
use crate::tree::BoxTree;

const U_SIDE: u64 = 0;
const V_SIDE: u64 = 1;
const CORE: u64 = 2;
const LEAF: u64 = 3;
const SHORT: u64 = 4;

fn gauss(seed: u64, keys: &[u64], rows: usize, cols: usize) -> Mat {
    let mut path = vec![tag::SYNTH];
    path.extend_from_slice(keys);
    gaussian_matrix(rows, cols, derive_seed(seed, &path))
}

fn orthonormal(seed: u64, keys: &[u64], rows: usize, cols: usize) -> Mat {
    qr_orthonormal(&gauss(seed, keys, rows, cols), None).q
}

fn leaf_blocks(tree: &BoxTree, seed: u64) -> Vec<DenseBlock> {
    tree.leaf_pairs()
        .into_iter()
        .map(|(a, b)| DenseBlock {
            alpha: a,
            beta: b,
            d: gauss(
                seed,
                &[LEAF, a as u64, b as u64],
                tree.node(a).len(),
                tree.node(b).len(),
            ),
        })
        .collect()
}

fn core(seed: u64, a: usize, b: usize, rows: usize, cols: usize) -> Mat {
    gauss(seed, &[CORE, a as u64, b as u64], rows, cols)
}

/// A random matrix that is exactly representable in `format` with rank
/// `k` on `tree`. Bases are orthonormal, cores and leaf blocks Gaussian.
/// The returned representation is both the operator and its own oracle.
pub fn synth_rank_structured(
    tree: &Arc<BoxTree>,
    format: Format,
    k: usize,
    seed: u64,
) -> Result<CompressedRep> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "synthetic rank must be positive".into(),
        ));
    }
    let rep = match format {
        Format::H1 => synth_h1(tree, k, seed)?.into(),
        Format::UnifH1 | Format::H1PlusUnif => synth_unif(tree, k, seed)?.into(),
        Format::H2 => synth_h2(tree, k, seed)?.into(),
    };
    Ok(rep)
}

fn synth_h1(tree: &Arc<BoxTree>, k: usize, seed: u64) -> Result<H1Rep> {
    let mut rep = H1Rep::new(tree.clone());
    for level in 2..=tree.depth() {
        let blocks = tree
            .admissible_pairs(level)
            .into_iter()
            .map(|(a, b)| {
                let (na, nb) = (tree.node(a).len(), tree.node(b).len());
                let (ka, kb) = (k.min(na), k.min(nb));
                let key = [a as u64, b as u64];
                LowRankBlock {
                    alpha: a,
                    beta: b,
                    u: orthonormal(seed, &[U_SIDE, key[0], key[1]], na, ka),
                    b: core(seed, a, b, ka, kb),
                    v: orthonormal(seed, &[V_SIDE, key[0], key[1]], nb, kb),
                }
            })
            .collect();
        rep.push_level(level, blocks)?;
    }
    rep.set_leaf(leaf_blocks(tree, seed))?;
    Ok(rep)
}

fn synth_unif(tree: &Arc<BoxTree>, k: usize, seed: u64) -> Result<UnifH1Rep> {
    let mut rep = UnifH1Rep::new(tree.clone());
    for level in 2..=tree.depth() {
        let mut u = HashMap::new();
        let mut v = HashMap::new();
        for id in tree.level(level) {
            let n = tree.node(id).len();
            u.insert(id, orthonormal(seed, &[U_SIDE, id as u64], n, k.min(n)));
            v.insert(id, orthonormal(seed, &[V_SIDE, id as u64], n, k.min(n)));
        }
        let blocks = tree
            .admissible_pairs(level)
            .into_iter()
            .map(|(a, b)| CoreBlock {
                alpha: a,
                beta: b,
                b: core(seed, a, b, u[&a].ncols(), v[&b].ncols()),
            })
            .collect();
        rep.push_level(level, u, v, blocks)?;
    }
    rep.set_leaf(leaf_blocks(tree, seed))?;
    Ok(rep)
}

/// Long bases built bottom-up: random orthonormal bases on the leaves and
/// `blkdiag(U_c) · Ushort_τ` above, with orthonormal short bases.
fn nested_bases(tree: &BoxTree, k: usize, seed: u64, side: u64) -> Vec<Mat> {
    let mut long: Vec<Mat> = tree
        .boxes()
        .iter()
        .map(|b| Mat::zeros(b.len(), 0))
        .collect();
    let depth = tree.depth();
    for id in tree.level(depth) {
        let n = tree.node(id).len();
        long[id] = orthonormal(seed, &[side, id as u64], n, k.min(n));
    }
    for level in (2..depth).rev() {
        for id in tree.level(level) {
            let node = tree.node(id);
            let rows: usize = node.children.iter().map(|&c| long[c].ncols()).sum();
            let short = orthonormal(seed, &[SHORT, side, id as u64], rows, k.min(rows));
            let start = tree.range(id).start;
            let mut basis = Mat::zeros(node.len(), short.ncols());
            let mut off = 0;
            for &c in &node.children {
                let rc = tree.range(c);
                let kc = long[c].ncols();
                basis
                    .rows_mut(rc.start - start, rc.len())
                    .copy_from(&(&long[c] * short.rows(off, kc)));
                off += kc;
            }
            long[id] = basis;
        }
    }
    long
}

fn synth_h2(tree: &Arc<BoxTree>, k: usize, seed: u64) -> Result<H2Rep> {
    let u = nested_bases(tree, k, seed, U_SIDE);
    let v = nested_bases(tree, k, seed, V_SIDE);
    let mut rep = H2Rep::new(tree.clone());
    for level in 2..=tree.depth() {
        let mut bases = LevelBases::default();
        for id in tree.level(level) {
            bases.u.insert(id, u[id].clone());
            bases.v.insert(id, v[id].clone());
        }
        let blocks = tree
            .admissible_pairs(level)
            .into_iter()
            .map(|(a, b)| CoreBlock {
                alpha: a,
                beta: b,
                b: core(seed, a, b, u[a].ncols(), v[b].ncols()),
            })
            .collect();
        rep.push_level(level, bases, blocks)?;
    }
    rep.set_leaf(leaf_blocks(tree, seed))?;
    debug_assert!(rep.is_complete());
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rep::testing::*;

    #[test]
    fn synthetic_reps_are_complete_and_seeded() {
        let tree = tree_random_2d(300, 10, 1);
        for format in Format::ALL {
            let a = synth_rank_structured(&tree, format, 3, 5).unwrap();
            assert!(a.as_dyn().is_complete());
            let b = synth_rank_structured(&tree, format, 3, 5).unwrap();
            assert_eq!(
                a.as_dyn().to_dense().unwrap(),
                b.as_dyn().to_dense().unwrap()
            );
        }
    }

    #[test]
    fn nested_bases_are_orthonormal() {
        let tree = tree_random_2d(500, 8, 2);
        for basis in nested_bases(&tree, 4, 3, U_SIDE) {
            let k = basis.ncols();
            assert!((basis.tr_mul(&basis) - Mat::identity(k, k)).amax() < 1e-12);
        }
    }
}
