use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::h1::leaf_phase;
use super::unif::{cores, stage1_samples, stage2_samples, summed_row_samples};
use super::{capture_residual, PeelConfig, RunReport, Session};
use crate::error::Result;
use crate::flops::FlopTally;
use crate::linalg::{svd_trunc, thin_qr, Mat, TruncatedSvd, TruncationSpec};
use crate::operator::LinearOperator;
use crate::random::{derive_seed, gaussian_matrix, tag};
use crate::rep::{H2Rep, LevelBases};
use crate::tree::BoxTree;

/// Truncated SVD through a thin QR when the input is tall.
fn tall_svd(m: &Mat, spec: &TruncationSpec, tally: &FlopTally) -> TruncatedSvd {
    let (rows, cols) = m.shape();
    if rows <= cols || cols == 0 {
        tally.svd(rows, cols);
        return svd_trunc(m, spec);
    }
    let (q, r) = thin_qr(m);
    let mut t = svd_trunc(&r, spec);
    tally.qr(rows, cols);
    tally.svd(cols, cols);
    tally.gemm(rows, t.rank(), cols);
    t.u = q * t.u;
    t
}

/// `[sample | Long_τ(rows of box) · diag(σ_τ) · G]` for the parent `τ`.
fn with_carry(
    tree: &BoxTree,
    id: usize,
    sample: Option<&Mat>,
    parent_long: &Mat,
    parent_sigma: &[f64],
    seed: u64,
) -> Mat {
    let node = tree.node(id);
    let n = node.len();
    let k = parent_long.ncols().min(parent_sigma.len());
    let mut carry = Mat::zeros(n, k);
    if k > 0 {
        let parent = node.parent.expect("carry needs a parent");
        let offset = tree.range(id).start - tree.range(parent).start;
        let mut scaled = parent_long.view((offset, 0), (n, k)).into_owned();
        for (j, &s) in parent_sigma.iter().take(k).enumerate() {
            scaled.column_mut(j).scale_mut(s);
        }
        carry = scaled * gaussian_matrix(k, k, seed);
    }
    let sc = sample.map_or(0, Mat::ncols);
    let mut out = Mat::zeros(n, sc + k);
    if let Some(y) = sample {
        out.columns_mut(0, sc).copy_from(y);
    }
    out.columns_mut(sc, k).copy_from(&carry);
    out
}

/// Bases for every box of `level` from its samples and, when `carry` is
/// set, the weighted parent basis of `rep` (column side when `column`).
#[allow(clippy::too_many_arguments)]
fn level_bases(
    tree: &BoxTree,
    level: usize,
    samples: &HashMap<usize, Mat>,
    rep: &H2Rep,
    column: bool,
    carry: bool,
    spec: &TruncationSpec,
    seed: u64,
    tally: &FlopTally,
) -> HashMap<usize, TruncatedSvd> {
    let stream = if column {
        tag::CARRY_IN
    } else {
        tag::CARRY_OUT
    };
    let ids: Vec<usize> = tree.level(level).collect();
    ids.par_iter()
        .map(|&id| {
            let sample = samples.get(&id);
            let m = match tree.node(id).parent {
                Some(tau) if carry => {
                    let (long, sigma) = if column {
                        (rep.stored_long_u(tau), rep.sigma_in(tau))
                    } else {
                        (rep.stored_long_v(tau), rep.sigma_out(tau))
                    };
                    let s = derive_seed(seed, &[stream, level as u64, id as u64]);
                    if long.ncols() > 0 {
                        tally.gemm(tree.node(id).len(), long.ncols(), long.ncols());
                    }
                    with_carry(tree, id, sample, long, sigma, s)
                }
                _ => sample
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(tree.node(id).len(), 0)),
            };
            (id, tall_svd(&m, spec, tally))
        })
        .collect()
}

fn split(svds: HashMap<usize, TruncatedSvd>) -> (HashMap<usize, Mat>, HashMap<usize, Vec<f64>>) {
    let mut bases = HashMap::with_capacity(svds.len());
    let mut sigmas = HashMap::with_capacity(svds.len());
    for (id, t) in svds {
        bases.insert(id, t.u);
        sigmas.insert(id, t.sigma);
    }
    (bases, sigmas)
}

/// Compresses `op` as an H2 matrix with nested bases.
pub fn compress_h2(
    op: &dyn LinearOperator,
    tree: &Arc<BoxTree>,
    config: &PeelConfig,
) -> Result<(H2Rep, RunReport)> {
    let mut s = Session::new(op, tree, config)?;
    let mut rep = H2Rep::new(tree.clone());
    let spec = config.spec;
    let seed = config.seed;
    for level in 2..=tree.depth() {
        let has_pairs = !tree.admissible_pairs(level).is_empty();
        let carry = config.h2_carry && level > 2;

        let phase = s.phase();
        let (y, colors) = if has_pairs {
            stage1_samples(&mut s, &rep, level)?
        } else {
            (HashMap::new(), 0)
        };
        let svds = level_bases(tree, level, &y, &rep, true, carry, &spec, seed, &s.flops);
        let (u, sigma_in) = split(svds);
        let residual = y
            .iter()
            .map(|(a, ya)| capture_residual(&u[a], ya))
            .fold(0.0, f64::max);
        s.end_phase(phase, "h2-stage1", level, colors);
        s.report.rows.last_mut().unwrap().residual = residual;

        let phase = s.phase();
        let (samples, colors) = if has_pairs {
            stage2_samples(&mut s, &rep, level, &u)?
        } else {
            (HashMap::new(), 0)
        };
        let sums = summed_row_samples(&samples, tree, config.width());
        let svds = level_bases(
            tree, level, &sums, &rep, false, carry, &spec, seed, &s.flops,
        );
        let (v, sigma_out) = split(svds);
        let residual = sums
            .iter()
            .map(|(b, sb)| capture_residual(&v[b], sb))
            .fold(0.0, f64::max);
        let blocks = cores(&samples, &v, &s);
        s.end_phase(phase, "h2-stage2", level, colors);
        s.report.rows.last_mut().unwrap().residual = residual;

        let bases = LevelBases {
            u,
            v,
            sigma_in,
            sigma_out,
        };
        rep.push_level(level, bases, blocks)?;
    }
    let leaf = leaf_phase(&mut s, &rep)?;
    rep.set_leaf(leaf)?;
    Ok((rep, s.finish()))
}
