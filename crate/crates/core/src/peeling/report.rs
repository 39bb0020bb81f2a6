use std::collections::BTreeMap;
use std::time::Duration;

use super::Format;
use crate::coloring::{ConstraintMode, ProbePlan};

/// One phase of a run: its black-box columns and its timing.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRow {
    pub phase: String,
    pub level: usize,
    pub colors: usize,
    pub forward_cols: u64,
    pub adjoint_cols: u64,
    pub wall_total: Duration,
    /// Wall time minus the time spent inside the operator.
    pub wall_net: Duration,
    /// Largest relative residual of a sample outside its fitted basis.
    pub residual: f64,
}

impl PhaseRow {
    pub fn new(
        phase: &str,
        level: usize,
        colors: usize,
        wall_total: Duration,
        wall_net: Duration,
    ) -> Self {
        Self {
            phase: phase.to_string(),
            level,
            colors,
            forward_cols: 0,
            adjoint_cols: 0,
            wall_total,
            wall_net,
            residual: 0.0,
        }
    }
}

/// Coloring diagnostics of one plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanRecord {
    pub level: usize,
    pub mode: ConstraintMode,
    pub n_blocks: usize,
    pub n_vertices: usize,
    pub n_edges: u64,
    pub n_colors: usize,
    pub graph_colors: Option<usize>,
    pub used_pattern: bool,
    pub wall: Duration,
}

impl PlanRecord {
    pub fn new(plan: &ProbePlan) -> Self {
        let s = &plan.stats;
        Self {
            level: plan.level,
            mode: plan.mode,
            n_blocks: s.n_blocks,
            n_vertices: s.n_vertices,
            n_edges: s.n_edges,
            n_colors: s.n_colors,
            graph_colors: s.graph_colors,
            used_pattern: s.used_pattern,
            wall: s.wall,
        }
    }
}

/// What a compression run consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub format: Format,
    pub rows: Vec<PhaseRow>,
    pub plans: Vec<PlanRecord>,
    /// Floating point operations outside the black box.
    pub flops: u64,
    pub wall_total: Duration,
    pub wall_net: Duration,
}

impl RunReport {
    pub fn new(format: Format) -> Self {
        Self {
            format,
            rows: Vec::new(),
            plans: Vec::new(),
            flops: 0,
            wall_total: Duration::ZERO,
            wall_net: Duration::ZERO,
        }
    }

    pub fn forward_cols(&self) -> u64 {
        self.rows.iter().map(|r| r.forward_cols).sum()
    }

    pub fn adjoint_cols(&self) -> u64 {
        self.rows.iter().map(|r| r.adjoint_cols).sum()
    }

    pub fn total_cols(&self) -> u64 {
        self.forward_cols() + self.adjoint_cols()
    }

    /// Most test matrices used by any plan.
    pub fn max_colors(&self) -> usize {
        self.plans.iter().map(|p| p.n_colors).max().unwrap_or(0)
    }

    /// Largest sample residual over all phases.
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

/// Black-box columns of one level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LevelMatvecs {
    pub forward: u64,
    pub adjoint: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatvecSummary {
    /// Keyed by level; leaf extraction is counted on the leaf level.
    pub per_level: BTreeMap<usize, LevelMatvecs>,
    /// Columns by phase name.
    pub per_phase: BTreeMap<String, LevelMatvecs>,
    pub forward: u64,
    pub adjoint: u64,
}

impl MatvecSummary {
    pub fn total(&self) -> u64 {
        self.forward + self.adjoint
    }
}

/// Per-level and total column counts of a run.
pub fn count_matvecs(report: &RunReport) -> MatvecSummary {
    let mut out = MatvecSummary::default();
    for row in &report.rows {
        let lv = out.per_level.entry(row.level).or_default();
        lv.forward += row.forward_cols;
        lv.adjoint += row.adjoint_cols;
        let ph = out.per_phase.entry(row.phase.clone()).or_default();
        ph.forward += row.forward_cols;
        ph.adjoint += row.adjoint_cols;
        out.forward += row.forward_cols;
        out.adjoint += row.adjoint_cols;
    }
    out
}
