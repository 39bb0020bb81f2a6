use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::h1::{basis_flops, leaf_phase};
use super::{capture_residual, PeelConfig, RunReport, Session};
use crate::coloring::ConstraintMode;
use crate::error::Result;
use crate::linalg::{orthonormal_basis, Mat};
use crate::operator::LinearOperator;
use crate::rep::{CoreBlock, HierarchicalRep, UnifH1Rep};
use crate::tree::BoxTree;

/// Column samples `Y_α = (A − A^{(l−1)})_{α, I(α)} Ω` for every box of the
/// level with a nonempty interaction list. Returns the samples and the
/// number of test matrices.
pub(crate) fn stage1_samples(
    s: &mut Session<'_>,
    rep: &dyn HierarchicalRep,
    level: usize,
) -> Result<(HashMap<usize, Mat>, usize)> {
    let tree = s.tree.clone();
    let r = s.config.width();
    let plan = s.plan(level, ConstraintMode::UnifStage1, r)?;
    let y = s.sample(&plan, rep, level - 1, false, None)?;
    let mut samples = HashMap::new();
    for (set, &c) in plan.sets.iter().zip(&plan.assignment) {
        for &(a, _) in &set.owners {
            samples.entry(a).or_insert_with(|| y.block(&tree, a, c, r));
        }
    }
    Ok((samples, plan.matrices.len()))
}

/// Row samples `S_{αβ} = A_{αβ}ᵀ U_α` from adjoint products with the column
/// bases as payload, keyed by `(α, β)`.
pub(crate) fn stage2_samples(
    s: &mut Session<'_>,
    rep: &dyn HierarchicalRep,
    level: usize,
    u: &HashMap<usize, Mat>,
) -> Result<(HashMap<(usize, usize), Mat>, usize)> {
    let tree = s.tree.clone();
    let r = s.config.width();
    let plan = s.plan(level, ConstraintMode::UnifStage2, r)?;
    // pattern matrices may carry payload on boxes without far-field blocks
    let mut padded = u.clone();
    for id in tree.level(level) {
        padded
            .entry(id)
            .or_insert_with(|| Mat::zeros(tree.node(id).len(), 0));
    }
    let z = s.sample(&plan, rep, level - 1, true, Some(&padded))?;
    let samples = plan
        .sets
        .iter()
        .zip(&plan.assignment)
        .flat_map(|(set, &c)| set.owners.iter().map(move |&p| (p, c)))
        .map(|((a, b), c)| ((a, b), z.block(&tree, b, c, u[&a].ncols())))
        .collect();
    Ok((samples, plan.matrices.len()))
}

/// `Σ_α S_{αβ}` per row box `β`, zero padded to `width` columns.
pub(crate) fn summed_row_samples(
    samples: &HashMap<(usize, usize), Mat>,
    tree: &BoxTree,
    width: usize,
) -> HashMap<usize, Mat> {
    let mut sums: HashMap<usize, Mat> = HashMap::new();
    for (&(_, b), sab) in samples {
        let acc = sums
            .entry(b)
            .or_insert_with(|| Mat::zeros(tree.node(b).len(), width));
        let mut cols = acc.columns_mut(0, sab.ncols());
        cols += sab;
    }
    sums
}

/// Cores `B_{αβ} = S_{αβ}ᵀ V_β` in a fixed pair order.
pub(crate) fn cores(
    samples: &HashMap<(usize, usize), Mat>,
    v: &HashMap<usize, Mat>,
    s: &Session<'_>,
) -> Vec<CoreBlock> {
    let mut pairs: Vec<(usize, usize)> = samples.keys().copied().collect();
    pairs.sort_unstable();
    let blocks: Vec<CoreBlock> = pairs
        .par_iter()
        .map(|&(a, b)| CoreBlock {
            alpha: a,
            beta: b,
            b: samples[&(a, b)].tr_mul(&v[&b]),
        })
        .collect();
    for blk in &blocks {
        s.flops
            .gemm(blk.b.nrows(), blk.b.ncols(), s.tree.node(blk.beta).len());
    }
    blocks
}

/// Compresses `op` as a uniform H1 matrix.
pub fn compress_unif_h1(
    op: &dyn LinearOperator,
    tree: &Arc<BoxTree>,
    config: &PeelConfig,
) -> Result<(UnifH1Rep, RunReport)> {
    let mut s = Session::new(op, tree, config)?;
    let mut rep = UnifH1Rep::new(tree.clone());
    let spec = config.spec;
    let r = config.width();
    for level in 2..=tree.depth() {
        if tree.admissible_pairs(level).is_empty() {
            rep.push_level(level, HashMap::new(), HashMap::new(), Vec::new())?;
            continue;
        }
        let phase = s.phase();
        let (y, colors) = stage1_samples(&mut s, &rep, level)?;
        let u: HashMap<usize, Mat> = y
            .par_iter()
            .map(|(&a, ya)| (a, orthonormal_basis(ya, &spec)))
            .collect();
        let mut residual: f64 = 0.0;
        for (a, ya) in &y {
            basis_flops(&s.flops, ya.nrows(), r);
            residual = residual.max(capture_residual(&u[a], ya));
        }
        s.end_phase(phase, "unif-stage1", level, colors);
        s.report.rows.last_mut().unwrap().residual = residual;

        let phase = s.phase();
        let (samples, colors) = stage2_samples(&mut s, &rep, level, &u)?;
        let sums = summed_row_samples(&samples, tree, r);
        let v: HashMap<usize, Mat> = sums
            .par_iter()
            .map(|(&b, sb)| (b, orthonormal_basis(sb, &spec)))
            .collect();
        let mut residual: f64 = 0.0;
        for (b, sb) in &sums {
            basis_flops(&s.flops, sb.nrows(), r);
            residual = residual.max(capture_residual(&v[b], sb));
        }
        let blocks = cores(&samples, &v, &s);
        s.end_phase(phase, "unif-stage2", level, colors);
        s.report.rows.last_mut().unwrap().residual = residual;
        rep.push_level(level, u, v, blocks)?;
    }
    let leaf = leaf_phase(&mut s, &rep)?;
    rep.set_leaf(leaf)?;
    Ok((rep, s.finish()))
}
