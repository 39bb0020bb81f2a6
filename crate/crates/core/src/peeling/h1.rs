use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::{capture_residual, PeelConfig, RunReport, Session};
use crate::coloring::{gaussian_block, ConstraintMode};
use crate::error::Result;
use crate::flops::FlopTally;
use crate::linalg::{ls_pinv_apply, orthonormal_basis, rhs_pinv_apply, Mat, TruncationSpec};
use crate::operator::LinearOperator;
use crate::rep::{CoreBlock, DenseBlock, H1Rep, HierarchicalRep, LowRankBlock, UnifH1Rep};
use crate::tree::BoxTree;

/// Tally of [`orthonormal_basis`] on a `rows × cols` sample.
pub(crate) fn basis_flops(tally: &FlopTally, rows: usize, cols: usize) {
    if rows > cols {
        tally.qr(rows, cols);
        tally.svd(cols, cols);
        tally.gemm(rows, cols, cols);
    } else {
        tally.svd(rows, cols);
    }
}

/// Gaussian payload blocks of the boxes on a level.
pub(crate) fn payload_blocks(
    tree: &BoxTree,
    seed: u64,
    level: usize,
    width: usize,
) -> HashMap<usize, Mat> {
    tree.level(level)
        .map(|b| (b, gaussian_block(tree, seed, level, b, width)))
        .collect()
}

/// Compresses `op` as an H1 matrix.
pub fn compress_h1(
    op: &dyn LinearOperator,
    tree: &Arc<BoxTree>,
    config: &PeelConfig,
) -> Result<(H1Rep, RunReport)> {
    let mut session = Session::new(op, tree, config)?;
    let mut rep = H1Rep::new(tree.clone());
    for level in 2..=tree.depth() {
        let blocks = if tree.admissible_pairs(level).is_empty() {
            Vec::new()
        } else {
            h1_level(&mut session, &rep, level)?
        };
        rep.push_level(level, blocks)?;
    }
    let leaf = leaf_phase(&mut session, &rep)?;
    rep.set_leaf(leaf)?;
    Ok((rep, session.finish()))
}

fn h1_level(s: &mut Session<'_>, rep: &H1Rep, level: usize) -> Result<Vec<LowRankBlock>> {
    let tree = s.tree.clone();
    let tree = tree.as_ref();
    let spec = s.config.spec;
    let r = s.config.width();

    let phase = s.phase();
    let fplan = s.plan(level, ConstraintMode::H1, r)?;
    let y = s.sample(&fplan, rep, level - 1, false, None)?;
    let jobs: Vec<(usize, usize, usize)> = fplan
        .sets
        .iter()
        .zip(&fplan.assignment)
        .flat_map(|(set, &c)| set.owners.iter().map(move |&(a, b)| (a, b, c)))
        .collect();
    let us: Vec<Mat> = jobs
        .par_iter()
        .map(|&(a, _, c)| orthonormal_basis(&y.block(tree, a, c, r), &spec))
        .collect();
    let mut residual: f64 = 0.0;
    for (&(a, _, c), u) in jobs.iter().zip(&us) {
        basis_flops(&s.flops, tree.node(a).len(), r);
        residual = residual.max(capture_residual(u, &y.block(tree, a, c, r)));
    }
    s.end_phase(phase, "h1-forward", level, fplan.matrices.len());
    s.report.rows.last_mut().unwrap().residual = residual;

    let phase = s.phase();
    let aplan = s.adjoint_plan(&fplan, ConstraintMode::H1Adjoint)?;
    let z = s.sample(&aplan, rep, level - 1, true, None)?;
    let adj_color: HashMap<(usize, usize), usize> = aplan
        .sets
        .iter()
        .zip(&aplan.assignment)
        .flat_map(|(set, &c)| set.owners.iter().map(move |&p| (p, c)))
        .collect();
    let vs: Vec<Mat> = jobs
        .par_iter()
        .map(|&(a, b, _)| orthonormal_basis(&z.block(tree, b, adj_color[&(a, b)], r), &spec))
        .collect();
    let mut residual: f64 = 0.0;
    for (&(a, b, _), v) in jobs.iter().zip(&vs) {
        basis_flops(&s.flops, tree.node(b).len(), r);
        residual = residual.max(capture_residual(
            v,
            &z.block(tree, b, adj_color[&(a, b)], r),
        ));
    }
    s.end_phase(phase, "h1-adjoint", level, aplan.matrices.len());
    s.report.rows.last_mut().unwrap().residual = residual;

    // B = (G_αᵀU)† (G_αᵀ Y_{αβ}) (VᵀG_β)†, with Y_{αβ} = A_{αβ} G_β
    let phase = s.phase();
    let g = payload_blocks(tree, s.config.seed, level, r);
    let blocks: Vec<LowRankBlock> = jobs
        .par_iter()
        .zip(us.into_par_iter().zip(vs.into_par_iter()))
        .map(|(&(a, b, c), (u, v))| {
            let yab = y.block(tree, a, c, r);
            let (ga, gb) = (&g[&a], &g[&b]);
            let left = ga.tr_mul(&u);
            let mid = ga.tr_mul(&yab);
            let right = v.tr_mul(gb);
            let core = rhs_pinv_apply(&ls_pinv_apply(&left, &mid), &right);
            LowRankBlock {
                alpha: a,
                beta: b,
                u,
                b: core,
                v,
            }
        })
        .collect();
    for blk in &blocks {
        let (na, k1, k2) = (blk.u.nrows(), blk.u.ncols(), blk.v.ncols());
        s.flops.gemm(r, k1, na);
        s.flops.gemm(r, r, na);
        s.flops.gemm(k2, r, blk.v.nrows());
        s.flops.svd(r, k1);
        s.flops.svd(r, k2);
        s.flops.gemm(k1, r, r);
        s.flops.gemm(k1, k2, r);
    }
    s.end_phase(phase, "h1-solve", level, 0);
    Ok(blocks)
}

/// Dense leaf neighbor blocks from identity probes of `A − A^{(L)}`.
pub(crate) fn leaf_phase(
    s: &mut Session<'_>,
    rep: &dyn HierarchicalRep,
) -> Result<Vec<DenseBlock>> {
    let tree = s.tree.clone();
    let depth = tree.depth();
    let m = tree.max_leaf_size();
    let phase = s.phase();
    let plan = s.plan(depth, ConstraintMode::Leaf, m)?;
    let y = s.sample(&plan, rep, depth, false, None)?;
    let blocks = plan
        .sets
        .iter()
        .zip(&plan.assignment)
        .flat_map(|(set, &c)| set.owners.iter().map(move |&(a, b)| (a, b, c)))
        .map(|(a, b, c)| DenseBlock {
            alpha: a,
            beta: b,
            d: y.block(&tree, a, c, tree.node(b).len()),
        })
        .collect();
    s.end_phase(phase, "leaf", depth, plan.matrices.len());
    Ok(blocks)
}

/// Leaf blocks of `op` given a representation complete through the leaf
/// level's admissible blocks.
pub fn extract_leaf(
    op: &dyn LinearOperator,
    rep: &dyn HierarchicalRep,
    config: &PeelConfig,
) -> Result<(Vec<DenseBlock>, RunReport)> {
    let tree = rep.tree().clone();
    let depth = tree.depth();
    if depth >= 2 && rep.levels_done() < depth {
        return Err(crate::error::Error::IncompleteRep {
            requested: depth,
            available: rep.levels_done(),
        });
    }
    let mut session = Session::new(op, &tree, config)?;
    let leaf = leaf_phase(&mut session, rep)?;
    Ok((leaf, session.finish()))
}

/// Converts per-block bases to shared per-box bases without touching the
/// operator: `U_α` spans the stacked `U_{αβ}B_{αβ}`, `V_β` the stacked
/// `V_{αβ}B_{αβ}ᵀ`, and each core is changed to the new bases.
pub fn uniformize_h1(rep: &H1Rep, spec: &TruncationSpec, tally: &FlopTally) -> Result<UnifH1Rep> {
    let tree = rep.tree().clone();
    let mut out = UnifH1Rep::new(tree.clone());
    for level in 2..=tree.depth() {
        let blocks = rep.blocks(level);
        let mut rows_of: HashMap<usize, Vec<&LowRankBlock>> = HashMap::new();
        let mut cols_of: HashMap<usize, Vec<&LowRankBlock>> = HashMap::new();
        for blk in blocks {
            rows_of.entry(blk.alpha).or_default().push(blk);
            cols_of.entry(blk.beta).or_default().push(blk);
        }
        let stack = |parts: &[&LowRankBlock], left: bool| -> Mat {
            let mats: Vec<Mat> = parts
                .iter()
                .map(|b| {
                    if left {
                        &b.u * &b.b
                    } else {
                        &b.v * b.b.transpose()
                    }
                })
                .collect();
            let rows = mats.first().map_or(0, Mat::nrows);
            let cols = mats.iter().map(Mat::ncols).sum();
            let mut m = Mat::zeros(rows, cols);
            let mut off = 0;
            for p in &mats {
                m.columns_mut(off, p.ncols()).copy_from(p);
                off += p.ncols();
            }
            m
        };
        let mut u = HashMap::new();
        for (&a, parts) in &rows_of {
            let m = stack(parts, true);
            basis_flops(tally, m.nrows(), m.ncols());
            u.insert(a, orthonormal_basis(&m, spec));
        }
        let mut v = HashMap::new();
        for (&b, parts) in &cols_of {
            let m = stack(parts, false);
            basis_flops(tally, m.nrows(), m.ncols());
            v.insert(b, orthonormal_basis(&m, spec));
        }
        let cores = blocks
            .iter()
            .map(|blk| {
                let (ua, vb): (&Mat, &Mat) = (&u[&blk.alpha], &v[&blk.beta]);
                tally.gemm(ua.ncols(), blk.u.ncols(), ua.nrows());
                tally.gemm(blk.v.ncols(), vb.ncols(), vb.nrows());
                CoreBlock {
                    alpha: blk.alpha,
                    beta: blk.beta,
                    b: ua.tr_mul(&blk.u) * &blk.b * blk.v.tr_mul(vb),
                }
            })
            .collect();
        out.push_level(level, u, v, cores)?;
    }
    if let Some(leaf) = rep.leaf_blocks() {
        out.set_leaf(leaf.to_vec())?;
    }
    Ok(out)
}
