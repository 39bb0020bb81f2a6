//! Test operators: boundary integral operators on a star contour, a 3D
//! Laplace kernel, frontal Schur complements and synthetic rank-structured
//! matrices.

mod bie;
mod frontal;
mod geometry;
mod kernel;
mod synth;

pub use bie::{op_double_layer_2d, op_n2d_product, DoubleLayer2d, NeumannToDirichlet, N2D_CAP};
pub use frontal::{op_schur_frontal, BandCholesky, FrontalSchur};
pub use geometry::{ContourNodes, ContourParams, Geometry, Points};
pub use kernel::{op_laplace3d_kernel, Laplace3d};
pub use synth::synth_rank_structured;

/// Largest size for which dense mirrors are produced.
pub const MIRROR_CAP: usize = 4096;
