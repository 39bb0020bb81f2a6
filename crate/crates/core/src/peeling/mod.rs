//! Level-by-level compression from products with test matrices.
//!
//! Each level is isolated by subtracting the already compressed coarser
//! levels (`Y = AΩ − A^{(l−1)}Ω`), with test matrices taken from a coloring
//! of that level's sampling constraints.

mod h1;
mod h2;
mod report;
mod unif;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

pub use h1::{compress_h1, extract_leaf, uniformize_h1};
pub use h2::compress_h2;
pub use report::{count_matvecs, LevelMatvecs, MatvecSummary, PhaseRow, PlanRecord, RunReport};
pub use unif::compress_unif_h1;

use crate::coloring::{ColoringStrategy, ConstraintMode, ProbePlan};
use crate::error::{Error, Result};
use crate::flops::FlopTally;
use crate::linalg::{Mat, TruncationSpec};
use crate::operator::{with_counter, CountingOperator, LinearOperator, MatvecCounts};
use crate::rep::{to_tree_order, CompressedRep, HierarchicalRep};
use crate::tree::BoxTree;

/// Target format of a compression run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Format {
    H1,
    UnifH1,
    /// H1 compression followed by uniformization.
    H1PlusUnif,
    H2,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::H1, Format::UnifH1, Format::H1PlusUnif, Format::H2];

    pub fn name(self) -> &'static str {
        match self {
            Format::H1 => "h1",
            Format::UnifH1 => "unif-h1",
            Format::H1PlusUnif => "h1-plus-unif",
            Format::H2 => "h2",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Format::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown format {s:?}")))
    }
}

/// Settings of a compression run.
#[derive(Clone, Debug, PartialEq)]
pub struct PeelConfig {
    pub spec: TruncationSpec,
    pub seed: u64,
    pub format: Format,
    pub strategy: ColoringStrategy,
    /// Include the parent term when forming H2 bases.
    pub h2_carry: bool,
}

impl PeelConfig {
    pub fn new(format: Format, rank: usize, oversample: usize, seed: u64) -> Self {
        Self {
            spec: TruncationSpec::fixed(rank, oversample),
            seed,
            format,
            strategy: ColoringStrategy::Auto,
            h2_carry: true,
        }
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()
    }
}

/// Compresses `op` into the configured format.
pub fn compress(
    op: &dyn LinearOperator,
    tree: &Arc<BoxTree>,
    config: &PeelConfig,
) -> Result<(CompressedRep, RunReport)> {
    match config.format {
        Format::H1 => compress_h1(op, tree, config).map(|(r, rep)| (r.into(), rep)),
        Format::UnifH1 => compress_unif_h1(op, tree, config).map(|(r, rep)| (r.into(), rep)),
        Format::H1PlusUnif => {
            let (h1, mut report) = compress_h1(op, tree, config)?;
            let start = Instant::now();
            let tally = FlopTally::new();
            let unif = uniformize_h1(&h1, &config.spec, &tally)?;
            let wall = start.elapsed();
            report.flops += tally.get();
            report.wall_total += wall;
            report.wall_net += wall;
            report.format = Format::H1PlusUnif;
            report
                .rows
                .push(PhaseRow::new("uniformize", 0, 0, wall, wall));
            Ok((unif.into(), report))
        }
        Format::H2 => compress_h2(op, tree, config).map(|(r, rep)| (r.into(), rep)),
    }
}

/// Shared machinery of the drivers: the counted operator, the flop tally
/// and the report under construction.
pub(crate) struct Session<'a> {
    op: CountingOperator<&'a dyn LinearOperator>,
    pub tree: &'a Arc<BoxTree>,
    pub config: &'a PeelConfig,
    pub flops: FlopTally,
    pub report: RunReport,
    start: Instant,
}

/// Samples of one plan in tree order, `width` columns per test matrix.
pub(crate) struct Samples {
    pub yp: Mat,
    pub width: usize,
}

impl Samples {
    /// Rows of `box_id` in the columns of matrix `color`, first `cols`
    /// columns.
    pub fn block(&self, tree: &BoxTree, box_id: usize, color: usize, cols: usize) -> Mat {
        let rg = tree.range(box_id);
        self.yp
            .view((rg.start, color * self.width), (rg.len(), cols))
            .into_owned()
    }
}

/// Snapshot taken at the start of a phase.
pub(crate) struct PhaseStart {
    wall: Instant,
    counts: MatvecCounts,
}

impl<'a> Session<'a> {
    pub fn new(
        op: &'a dyn LinearOperator,
        tree: &'a Arc<BoxTree>,
        config: &'a PeelConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = tree.n_points();
        if op.nrows() != n || op.ncols() != n {
            return Err(Error::dims(
                format!("{n}x{n} operator"),
                format!("{}x{}", op.nrows(), op.ncols()),
            ));
        }
        Ok(Self {
            op: with_counter(op),
            tree,
            config,
            flops: FlopTally::new(),
            report: RunReport::new(config.format),
            start: Instant::now(),
        })
    }

    pub fn phase(&self) -> PhaseStart {
        PhaseStart {
            wall: Instant::now(),
            counts: self.op.counts(),
        }
    }

    pub fn end_phase(&mut self, start: PhaseStart, name: &str, level: usize, colors: usize) {
        let wall = start.wall.elapsed();
        let delta = self.op.counts().since(&start.counts);
        let net = wall.saturating_sub(delta.total_time());
        let mut row = PhaseRow::new(name, level, colors, wall, net);
        row.forward_cols = delta.forward_cols;
        row.adjoint_cols = delta.adjoint_cols;
        log::debug!(
            "{name} level {level}: {colors} colors, {} + {} columns, {:.3}s",
            row.forward_cols,
            row.adjoint_cols,
            wall.as_secs_f64()
        );
        self.report.rows.push(row);
    }

    pub fn plan(&mut self, level: usize, mode: ConstraintMode, width: usize) -> Result<ProbePlan> {
        let plan = ProbePlan::build(
            self.tree,
            level,
            mode,
            self.config.strategy,
            width,
            self.config.seed,
        )?;
        self.report.plans.push(PlanRecord::new(&plan));
        Ok(plan)
    }

    /// Plan for adjoint samples: the forward matrices when the constraint
    /// sets coincide, a fresh coloring otherwise.
    pub fn adjoint_plan(&mut self, forward: &ProbePlan, mode: ConstraintMode) -> Result<ProbePlan> {
        match ProbePlan::reuse(self.tree, forward.level, mode, forward)? {
            Some(plan) => {
                self.report.plans.push(PlanRecord::new(&plan));
                Ok(plan)
            }
            None => self.plan(
                forward.level,
                mode,
                forward.matrices.first().map_or(0, |m| m.width),
            ),
        }
    }

    /// `(A − A^{(level)}) Ω` (or the adjoint) for every matrix of `plan`,
    /// concatenated and permuted into tree order.
    pub fn sample(
        &self,
        plan: &ProbePlan,
        rep: &dyn HierarchicalRep,
        peeled: usize,
        adjoint: bool,
        bases: Option<&HashMap<usize, Mat>>,
    ) -> Result<Samples> {
        let n = self.tree.n_points();
        let width = plan.matrices.first().map_or(0, |m| m.width);
        let mut omega = Mat::zeros(n, width * plan.matrices.len());
        for (c, m) in plan.matrices.iter().enumerate() {
            let block = m.realize(self.tree, bases)?;
            omega.columns_mut(c * width, width).copy_from(&block);
        }
        if omega.ncols() == 0 {
            return Ok(Samples {
                yp: Mat::zeros(n, 0),
                width,
            });
        }
        let mut y = if adjoint {
            self.op.apply_adjoint(&omega)?
        } else {
            self.op.apply(&omega)?
        };
        if y.shape() != omega.shape() {
            return Err(Error::Operator(format!(
                "operator returned {}x{} for a {}x{} block",
                y.nrows(),
                y.ncols(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Operator(
                "operator returned non-finite values".into(),
            ));
        }
        if peeled >= 2 {
            y -= rep.apply_truncated_counted(peeled, &omega, adjoint, &self.flops)?;
            self.flops.add((n * omega.ncols()) as u64);
        }
        Ok(Samples {
            yp: to_tree_order(self.tree, &y),
            width,
        })
    }

    pub fn finish(mut self) -> RunReport {
        let counts = self.op.counts();
        self.report.wall_total = self.start.elapsed();
        self.report.wall_net = self.report.wall_total.saturating_sub(counts.total_time());
        self.report.flops = self.flops.get();
        log::info!(
            "{} done: {} columns, {:.3e} flops, {:.2}s",
            self.config.format.name(),
            self.report.total_cols(),
            self.report.flops as f64,
            self.report.wall_total.as_secs_f64()
        );
        self.report
    }
}

/// Relative residual of projecting `y` onto the span of `q`.
pub(crate) fn capture_residual(q: &Mat, y: &Mat) -> f64 {
    let ny = y.norm();
    if ny == 0.0 {
        return 0.0;
    }
    (y - q * q.tr_mul(y)).norm() / ny
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::synth_rank_structured;
    use crate::linalg::max_principal_angle_sine;
    use crate::operator::DenseOperator;
    use crate::random::gaussian_matrix;
    use crate::rep::testing::*;

    fn dense(rep: &CompressedRep) -> Mat {
        rep.as_dyn().to_dense().unwrap()
    }

    #[test]
    fn exact_recovery_in_every_format() {
        let tree = tree_random_2d(700, 12, 4);
        assert!(tree.depth() >= 4);
        for format in Format::ALL {
            let truth = synth_rank_structured(&tree, format, 4, 9).unwrap();
            let config = PeelConfig::new(format, 4, 4, 17);
            let (rep, report) = compress(&truth, &tree, &config).unwrap();
            let err = rel_diff(&dense(&rep), &dense(&truth));
            assert!(err < 1e-9, "{}: {err:e}", format.name());
            assert!(report.max_residual() < 1e-9);
        }
    }

    #[test]
    fn h1_recovers_uniform_operators() {
        let tree = tree_random_2d(500, 10, 1);
        let truth = synth_rank_structured(&tree, Format::UnifH1, 3, 2).unwrap();
        let (rep, _) = compress(&truth, &tree, &PeelConfig::new(Format::H1, 3, 3, 5)).unwrap();
        assert!(rel_diff(&dense(&rep), &dense(&truth)) < 1e-9);
    }

    #[test]
    fn one_dimensional_column_counts() {
        let tree = tree_1d(64, 8);
        assert_eq!(tree.depth(), 3);
        let truth = synth_rank_structured(&tree, Format::H1, 2, 3).unwrap();
        let mut config = PeelConfig::new(Format::H1, 2, 2, 1);
        config.strategy = ColoringStrategy::Graph;
        let (_, report) = compress(&truth, &tree, &config).unwrap();
        let row = |name: &str, level: usize| {
            report
                .rows
                .iter()
                .find(|r| r.phase == name && r.level == level)
                .unwrap()
                .clone()
        };
        assert_eq!(row("h1-forward", 3).forward_cols, 6 * 4);
        assert_eq!(row("h1-adjoint", 3).adjoint_cols, 6 * 4);
        assert_eq!(row("leaf", 3).forward_cols, 3 * 8);
        assert_eq!(
            report.total_cols() as usize,
            report.forward_cols() as usize + report.adjoint_cols() as usize
        );
    }

    #[test]
    fn diagonal_operator_has_empty_far_field() {
        let tree = tree_random_2d(300, 10, 6);
        let diag = Mat::from_diagonal(&gaussian_matrix(300, 1, 3).column(0).into_owned());
        let op = DenseOperator::new(diag.clone());
        for format in Format::ALL {
            let (rep, _) = compress(&op, &tree, &PeelConfig::new(format, 3, 2, 8)).unwrap();
            assert!(rel_diff(&dense(&rep), &diag) < 1e-12, "{}", format.name());
        }
    }

    #[test]
    fn h2_on_a_two_level_tree_matches_uniform() {
        let tree = tree_1d(32, 8);
        assert_eq!(tree.depth(), 2);
        let op = DenseOperator::new(gaussian_matrix(32, 32, 4));
        let (u, _) = compress(&op, &tree, &PeelConfig::new(Format::UnifH1, 3, 2, 6)).unwrap();
        let (h, _) = compress(&op, &tree, &PeelConfig::new(Format::H2, 3, 2, 6)).unwrap();
        assert!(rel_diff(&dense(&h), &dense(&u)) < 1e-10);
    }

    #[test]
    fn carry_toggle_keeps_exact_subspaces() {
        let tree = tree_random_2d(700, 12, 8);
        let truth = synth_rank_structured(&tree, Format::H2, 3, 1).unwrap();
        let mut with = PeelConfig::new(Format::H2, 3, 3, 2);
        let (a, _) = compress_h2(&truth, &tree, &with).unwrap();
        with.h2_carry = false;
        let (b, _) = compress_h2(&truth, &tree, &with).unwrap();
        for level in 2..=tree.depth() {
            for id in tree.level(level) {
                let (ua, ub) = (a.long_u(id), b.long_u(id));
                if ua.ncols() == ub.ncols() && ua.ncols() > 0 && tree.interactions(id).len() > 0 {
                    assert!(max_principal_angle_sine(&ua, &ub) < 1e-7);
                }
            }
        }
    }

    #[test]
    fn uniformizing_a_uniform_operator_is_lossless() {
        let tree = tree_random_2d(500, 10, 3);
        let truth = synth_rank_structured(&tree, Format::UnifH1, 3, 7).unwrap();
        let config = PeelConfig::new(Format::H1, 3, 3, 1);
        let (h1, _) = compress_h1(&truth, &tree, &config).unwrap();
        let tally = FlopTally::new();
        let once = uniformize_h1(&h1, &config.spec, &tally).unwrap();
        assert!(tally.get() > 0);
        assert!(rel_diff(&once.to_dense().unwrap(), &dense(&truth)) < 1e-9);
    }

    #[test]
    fn uniform_peeling_uses_fewer_products_than_h1() {
        let tree = tree_random_2d(1500, 16, 5);
        let truth = synth_rank_structured(&tree, Format::UnifH1, 4, 3).unwrap();
        let (_, unif) = compress(&truth, &tree, &PeelConfig::new(Format::UnifH1, 4, 4, 1)).unwrap();
        let (_, both) =
            compress(&truth, &tree, &PeelConfig::new(Format::H1PlusUnif, 4, 4, 1)).unwrap();
        assert!(unif.total_cols() < both.total_cols());
        let summary = count_matvecs(&unif);
        assert_eq!(summary.total(), unif.total_cols());
    }

    #[test]
    fn tolerance_mode_stays_within_tolerance() {
        let tree = tree_random_2d(500, 10, 2);
        let truth = synth_rank_structured(&tree, Format::H1, 3, 4).unwrap();
        let mut config = PeelConfig::new(Format::H1, 8, 2, 3);
        config.spec = TruncationSpec::relative(8, 2, 1e-10);
        let (rep, _) = compress(&truth, &tree, &config).unwrap();
        if let CompressedRep::H1(h1) = &rep {
            assert!(h1.max_rank() <= 3);
        } else {
            panic!("expected an H1 representation");
        }
        assert!(rel_diff(&dense(&rep), &dense(&truth)) < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tree = tree_1d(32, 8);
        let op = DenseOperator::new(Mat::zeros(31, 31));
        assert!(compress(&op, &tree, &PeelConfig::new(Format::H1, 2, 2, 0)).is_err());
    }

    #[test]
    fn format_names_round_trip() {
        for f in Format::ALL {
            assert_eq!(f.name().parse::<Format>().unwrap(), f);
        }
        assert!("h3".parse::<Format>().is_err());
    }
}
