//! The subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use hpeel::coloring::{ColoringStrategy, ConstraintMode, ProbePlan};
use hpeel::gallery::Geometry;
use hpeel::linalg::rel_error_power_method;
use hpeel::operator::adjoint_residual;
use hpeel::peeling::{compress, Format, PeelConfig};
use hpeel::rep::io::{read_rep, write_matrix, write_rep};
use hpeel::rep::{Category, CompressedRep, HierarchicalRep, RepKind};
use hpeel::{BoxTree, TruncationSpec};

use crate::config::{Experiment, RunConfig};
use crate::experiment::{build, Setup};

pub const RESULTS_FILE: &str = "results.csv";
pub const COLORING_FILE: &str = "coloring.csv";
const POWER_ITERS: usize = 20;
/// Keeps the power-method start vector apart from the test matrices.
const PROBE_SEED_OFFSET: u64 = 0x5eed;

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub format: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub m: usize,
    pub seed: u64,
    pub t_total_s: f64,
    pub t_net_s: f64,
    pub apply_cols: u64,
    pub adjoint_cols: u64,
    pub rel_err_power20: f64,
    pub scalars_per_dof: f64,
    pub colors_max: usize,
}

/// One line of `coloring.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoringRow {
    pub d: usize,
    pub sigma: f64,
    pub level: usize,
    pub n_colors: usize,
}

fn peel_config(config: &RunConfig) -> PeelConfig {
    let mut peel = PeelConfig::new(config.format, config.rank, config.oversample, config.seed);
    if let Some(tol) = config.tol {
        peel.spec = TruncationSpec::relative(config.rank, config.oversample, tol);
    }
    peel
}

fn rep_path(out: &Path, experiment: Experiment, format: Format, n: usize) -> PathBuf {
    out.join(format!("{}-{}-n{n}.rep", experiment.name(), format.name()))
}

fn create_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub fn cmd_compress(config: &RunConfig, dump_mirror: bool) -> anyhow::Result<Vec<ResultRow>> {
    if config.experiment == Experiment::ColoringStudy {
        bail!("use the coloring-study subcommand for the coloring experiment");
    }
    create_out(&config.out)?;
    let mut writer = csv::Writer::from_path(config.out.join(RESULTS_FILE))?;
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let Setup { operator, tree } = build(config, n, config.format)?;
        let op = operator.as_dyn();
        log::info!(
            "{} N={n} depth {} format {}",
            config.experiment.name(),
            tree.depth(),
            config.format.name()
        );
        let (rep, report) = compress(op, &tree, &peel_config(config))?;
        let err = rel_error_power_method(
            &rep,
            op,
            POWER_ITERS,
            config.seed.wrapping_add(PROBE_SEED_OFFSET),
        )?;
        let row = ResultRow {
            experiment: config.experiment.name().into(),
            format: config.format.name().into(),
            n,
            k: config.rank,
            p: config.oversample,
            m: config.leaf,
            seed: config.seed,
            t_total_s: report.wall_total.as_secs_f64(),
            t_net_s: report.wall_net.as_secs_f64(),
            apply_cols: report.forward_cols(),
            adjoint_cols: report.adjoint_cols(),
            rel_err_power20: err,
            scalars_per_dof: rep.storage_stats().per_dof(),
            colors_max: report.max_colors(),
        };
        println!(
            "{} {} N={n}: rel_err {:.3e}, {} + {} columns, {:.1} scalars/dof, {:.2}s",
            row.experiment,
            row.format,
            err,
            row.apply_cols,
            row.adjoint_cols,
            row.scalars_per_dof,
            row.t_total_s
        );
        writer.serialize(&row)?;
        writer.flush()?;
        write_rep(
            rep_path(&config.out, config.experiment, config.format, n),
            &rep,
        )?;
        if dump_mirror {
            match operator.dense_mirror()? {
                Some(m) => write_matrix(
                    config
                        .out
                        .join(format!("{}-n{n}.mat", config.experiment.name())),
                    &m,
                )?,
                None => log::warn!("N={n} is above the dense mirror cap; no mirror written"),
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Settings of the line-with-noise coloring study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub n: usize,
    pub leaf: usize,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub out: PathBuf,
}

impl StudyConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|d| !(1..=6).contains(d)) {
            bail!("dimensions must lie in 1..=6, got {:?}", self.dims);
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            bail!(
                "noise levels must be finite and >= 0, got {:?}",
                self.sigmas
            );
        }
        if self.leaf == 0 || self.n == 0 {
            bail!("N and the leaf size must be positive");
        }
        Ok(())
    }
}

/// H1 color counts per level for one noisy line.
pub fn line_colors(
    n: usize,
    leaf: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
) -> anyhow::Result<Vec<(usize, usize)>> {
    let points = Geometry::LineWithNoise { dim, sigma }.generate(n, seed)?;
    let tree = BoxTree::build(&points.cloud()?, leaf)?;
    (2..=tree.depth())
        .map(|level| {
            let plan = ProbePlan::build(
                &tree,
                level,
                ConstraintMode::H1,
                ColoringStrategy::Graph,
                1,
                seed,
            )?;
            Ok((level, plan.stats.n_colors))
        })
        .collect()
}

pub fn cmd_coloring_study(study: &StudyConfig) -> anyhow::Result<Vec<ColoringRow>> {
    study.validate()?;
    create_out(&study.out)?;
    let mut writer = csv::Writer::from_path(study.out.join(COLORING_FILE))?;
    let mut rows = Vec::new();
    for &d in &study.dims {
        for &sigma in &study.sigmas {
            let start = Instant::now();
            let levels = line_colors(study.n, study.leaf, d, sigma, study.seed)?;
            let max = levels.iter().map(|&(_, c)| c).max().unwrap_or(0);
            println!(
                "d={d} sigma={sigma}: max {max} colors over {} levels ({:.2}s)",
                levels.len(),
                start.elapsed().as_secs_f64()
            );
            for (level, n_colors) in levels {
                let row = ColoringRow {
                    d,
                    sigma,
                    level,
                    n_colors,
                };
                writer.serialize(&row)?;
                rows.push(row);
            }
        }
    }
    writer.flush()?;
    Ok(rows)
}

/// What `verify` measured.
#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub rel_err: f64,
    pub adjoint_residual: f64,
    pub scalars: u64,
    pub scalars_per_dof: f64,
}

fn truth_format(kind: RepKind) -> Format {
    match kind {
        RepKind::H1 => Format::H1,
        RepKind::UnifH1 => Format::UnifH1,
        RepKind::H2 => Format::H2,
    }
}

pub fn cmd_verify(
    config: &RunConfig,
    rep_file: &Path,
    iters: usize,
    format_given: bool,
) -> anyhow::Result<Verification> {
    if iters == 0 {
        bail!("the power method needs at least one iteration");
    }
    let rep: CompressedRep = read_rep(rep_file)?;
    let format = if format_given {
        config.format
    } else {
        truth_format(rep.kind())
    };
    let Setup { operator, .. } = build(config, config.n(), format)?;
    let op = operator.as_dyn();
    let rel_err =
        rel_error_power_method(&rep, op, iters, config.seed.wrapping_add(PROBE_SEED_OFFSET))?;
    let stats = rep.storage_stats();
    let v = Verification {
        rel_err,
        adjoint_residual: adjoint_residual(&rep, config.seed)?,
        scalars: stats.total(),
        scalars_per_dof: stats.per_dof(),
    };
    println!("rel_err_power{iters}={:.6e}", v.rel_err);
    println!("adjoint_residual={:.3e}", v.adjoint_residual);
    println!("scalars={}", v.scalars);
    println!("scalars_per_dof={:.3}", v.scalars_per_dof);
    for category in Category::ALL {
        println!("scalars_{category}={}", stats.by_category(category));
    }
    Ok(v)
}

/// Writes a synthetic ground truth and, below the mirror cap, its dense
/// matrix. Returns the paths written.
pub fn cmd_synth(config: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let mut config = config.clone();
    config.experiment = Experiment::Synthetic;
    create_out(&config.out)?;
    let mut written = Vec::new();
    for &n in &config.sizes {
        let setup = build(&config, n, config.format)?;
        let crate::experiment::Operator::Synthetic(rep) = &setup.operator else {
            unreachable!()
        };
        let path = config
            .out
            .join(format!("synth-{}-n{n}.rep", config.format.name()));
        write_rep(&path, rep)?;
        written.push(path);
        if let Some(m) = setup.operator.dense_mirror()? {
            let path = config
                .out
                .join(format!("synth-{}-n{n}.mat", config.format.name()));
            write_matrix(&path, &m)?;
            written.push(path);
        }
        println!(
            "synthetic {} N={n} depth {}: {} scalars",
            config.format.name(),
            setup.tree.depth(),
            rep.storage_stats().total()
        );
    }
    Ok(written)
}
