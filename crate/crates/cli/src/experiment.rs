//! Geometry, operator and tree for one experiment.

use std::sync::Arc;

use anyhow::bail;

use hpeel::gallery::{
    op_double_layer_2d, op_laplace3d_kernel, op_n2d_product, op_schur_frontal,
    synth_rank_structured, ContourParams, DoubleLayer2d, FrontalSchur, Geometry, Laplace3d,
    NeumannToDirichlet, MIRROR_CAP,
};
use hpeel::peeling::Format;
use hpeel::random::NormalStream;
use hpeel::rep::{CompressedRep, HierarchicalRep};
use hpeel::{BoxTree, LinearOperator, Mat, PointCloud};

use crate::config::{Experiment, RunConfig};

/// Grid width of the frontal experiment (separator in the middle column).
pub const FRONTAL_WIDTH: usize = 51;

pub enum Operator {
    Bie(DoubleLayer2d),
    N2d(NeumannToDirichlet),
    Fmm3d(Laplace3d),
    Frontal(FrontalSchur),
    Synthetic(CompressedRep),
}

pub struct Setup {
    pub operator: Operator,
    pub tree: Arc<BoxTree>,
}

impl Operator {
    pub fn as_dyn(&self) -> &dyn LinearOperator {
        match self {
            Operator::Bie(op) => op,
            Operator::N2d(op) => op,
            Operator::Fmm3d(op) => op,
            Operator::Frontal(op) => op,
            Operator::Synthetic(op) => op,
        }
    }

    /// Dense copy for offline oracles; `None` above the mirror cap.
    pub fn dense_mirror(&self) -> anyhow::Result<Option<Mat>> {
        Ok(match self {
            Operator::Bie(op) => op.dense_mirror().cloned(),
            Operator::N2d(op) => op.dense_mirror(),
            Operator::Fmm3d(op) => op.dense_mirror().cloned(),
            Operator::Frontal(op) => op.dense_mirror(),
            Operator::Synthetic(rep) => {
                if rep.tree().n_points() <= MIRROR_CAP {
                    Some(rep.to_dense()?)
                } else {
                    None
                }
            }
        })
    }
}

/// Points of the synthetic experiment: a uniform grid when `n` is a
/// perfect power of the dimension, uniformly random points otherwise.
fn synthetic_cloud(n: usize, dim: usize, seed: u64) -> anyhow::Result<PointCloud> {
    match (Geometry::UniformGrid { dim }).generate(n, seed) {
        Ok(points) => Ok(points.cloud()?),
        Err(_) => {
            let mut rng = NormalStream::new(seed);
            let coords = (0..n * dim).map(|_| rng.next_uniform()).collect();
            Ok(PointCloud::new(dim, coords)?)
        }
    }
}

/// Builds the operator and tree of `config` at size `n`. `truth_format`
/// picks the structure of the synthetic ground truth.
pub fn build(config: &RunConfig, n: usize, truth_format: Format) -> anyhow::Result<Setup> {
    let params = ContourParams::default();
    let tree_of = |cloud: PointCloud| -> anyhow::Result<Arc<BoxTree>> {
        Ok(Arc::new(BoxTree::build(&cloud, config.leaf)?))
    };
    Ok(match config.experiment {
        Experiment::Bie => {
            let op = op_double_layer_2d(&params, n)?;
            let tree = tree_of(op.cloud()?)?;
            Setup {
                operator: Operator::Bie(op),
                tree,
            }
        }
        Experiment::N2d => {
            let op = op_n2d_product(&params, n)?;
            let tree = tree_of(op.cloud()?)?;
            Setup {
                operator: Operator::N2d(op),
                tree,
            }
        }
        Experiment::Fmm3d => {
            let points = Geometry::Sphere3d.generate(n, config.seed)?;
            let tree = tree_of(points.cloud()?)?;
            Setup {
                operator: Operator::Fmm3d(op_laplace3d_kernel(&points)?),
                tree,
            }
        }
        Experiment::Frontal => {
            let op = op_schur_frontal(n, FRONTAL_WIDTH)?;
            let tree = tree_of(op.cloud()?)?;
            Setup {
                operator: Operator::Frontal(op),
                tree,
            }
        }
        Experiment::Synthetic => {
            let tree = tree_of(synthetic_cloud(n, config.dim, config.seed)?)?;
            let rep = synth_rank_structured(&tree, truth_format, config.rank, config.seed)?;
            Setup {
                operator: Operator::Synthetic(rep),
                tree,
            }
        }
        Experiment::ColoringStudy => bail!("the coloring study has no operator"),
    })
}
