//! Run settings from flags, an optional TOML file and the environment.
//! Flags win over the file; `HPEEL_SEED` is used when neither sets a seed.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::Args;
use serde::Deserialize;

use hpeel::peeling::Format;

pub const SEED_ENV: &str = "HPEEL_SEED";
const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Bie,
    N2d,
    Fmm3d,
    Frontal,
    ColoringStudy,
    Synthetic,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Bie,
        Experiment::N2d,
        Experiment::Fmm3d,
        Experiment::Frontal,
        Experiment::ColoringStudy,
        Experiment::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Bie => "bie",
            Experiment::N2d => "n2d",
            Experiment::Fmm3d => "fmm3d",
            Experiment::Frontal => "frontal",
            Experiment::ColoringStudy => "coloring-study",
            Experiment::Synthetic => "synthetic",
        }
    }

    fn default_leaf(self) -> usize {
        match self {
            Experiment::Bie | Experiment::N2d => 200,
            Experiment::Fmm3d | Experiment::Frontal => 50,
            Experiment::ColoringStudy => 16,
            Experiment::Synthetic => 64,
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!(
                    "unknown experiment {s:?} (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

pub fn parse_format(s: &str) -> Result<Format, String> {
    s.parse::<Format>().map_err(|e| e.to_string())
}

pub fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse()
}

/// Flags shared by the subcommands. Every field is optional so that the
/// config file can fill the gaps.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// bie, n2d, fmm3d, frontal, coloring-study or synthetic
    #[arg(long, value_parser = parse_experiment)]
    pub experiment: Option<Experiment>,
    /// h1, unif-h1, h1-plus-unif or h2
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Number of points
    #[arg(long)]
    pub n: Option<usize>,
    /// Strictly increasing list of N, comma separated
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    /// Target rank k
    #[arg(long)]
    pub rank: Option<usize>,
    /// Oversampling p
    #[arg(long)]
    pub oversample: Option<usize>,
    /// Relative truncation tolerance (rank becomes the upper bound)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Maximum points per leaf box
    #[arg(long)]
    pub leaf: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ambient dimension (synthetic points and the coloring study)
    #[arg(long)]
    pub dim: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The same keys as the flags, read from a TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    experiment: Option<String>,
    format: Option<String>,
    n: Option<usize>,
    sweep: Option<Vec<usize>>,
    rank: Option<usize>,
    oversample: Option<usize>,
    tol: Option<f64>,
    leaf: Option<usize>,
    seed: Option<u64>,
    dim: Option<usize>,
    out: Option<PathBuf>,
    pub dims: Option<Vec<usize>>,
    pub sigmas: Option<Vec<f64>>,
    pub iters: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fills every flag left unset from the file.
    pub fn merge_into(&self, args: &mut RunArgs) -> anyhow::Result<()> {
        if args.experiment.is_none() {
            if let Some(s) = &self.experiment {
                args.experiment = Some(s.parse().map_err(anyhow::Error::msg)?);
            }
        }
        if args.format.is_none() {
            if let Some(s) = &self.format {
                args.format = Some(parse_format(s).map_err(anyhow::Error::msg)?);
            }
        }
        macro_rules! fill {
            ($($field:ident),*) => {$(
                if args.$field.is_none() {
                    args.$field = self.$field.clone();
                }
            )*};
        }
        fill!(n, sweep, rank, oversample, tol, leaf, seed, dim, out);
        Ok(())
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub format: Format,
    pub sizes: Vec<usize>,
    pub rank: usize,
    pub oversample: usize,
    pub tol: Option<f64>,
    pub leaf: usize,
    pub seed: u64,
    pub dim: usize,
    pub out: PathBuf,
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => {
            Ok(Some(s.trim().parse().with_context(|| {
                format!("{SEED_ENV}={s:?} is not a u64")
            })?))
        }
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    pub fn resolve(args: RunArgs, default_experiment: Experiment) -> anyhow::Result<Self> {
        let experiment = args.experiment.unwrap_or(default_experiment);
        let sizes = match (args.sweep, args.n) {
            (Some(sweep), _) => sweep,
            (None, Some(n)) => vec![n],
            (None, None) => vec![2048],
        };
        if sizes.is_empty() {
            bail!("sweep list is empty");
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            bail!("sweep list must be strictly increasing, got {sizes:?}");
        }
        let seed = match args.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(DEFAULT_SEED),
        };
        let config = Self {
            experiment,
            format: args.format.unwrap_or(Format::H1),
            sizes,
            rank: args.rank.unwrap_or(10),
            oversample: args.oversample.unwrap_or(10),
            tol: args.tol,
            leaf: args.leaf.unwrap_or(experiment.default_leaf()),
            seed,
            dim: args.dim.unwrap_or(1),
            out: args.out.unwrap_or_else(|| PathBuf::from("hpeel-out")),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.rank == 0 {
            bail!("rank must be at least 1");
        }
        if self.leaf == 0 {
            bail!("leaf size must be at least 1");
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 1.0) {
                bail!("tolerance must lie in (0, 1), got {tol}");
            }
        }
        if !(1..=6).contains(&self.dim) {
            bail!("dimension must lie in 1..=6, got {}", self.dim);
        }
        if self.sizes.contains(&0) {
            bail!("N must be positive");
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.sizes[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file: FileConfig = toml::from_str("n = 512\nrank = 4\nformat = \"h2\"").unwrap();
        let mut args = RunArgs {
            rank: Some(7),
            ..Default::default()
        };
        file.merge_into(&mut args).unwrap();
        assert_eq!(args.rank, Some(7));
        assert_eq!(args.n, Some(512));
        assert_eq!(args.format, Some(Format::H2));
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("rnak = 3").is_err());
    }

    #[test]
    fn sweep_must_increase() {
        let args = RunArgs {
            sweep: Some(vec![1024, 1024]),
            seed: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::resolve(args, Experiment::Bie).is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("fmm".parse::<Experiment>().is_err());
    }
}
