//! Black-box compression of rank-structured matrices.
//!
//! A matrix available only through products with blocks of vectors is
//! recovered level by level ("peeling") into one of four hierarchical
//! formats: H1, uniform H1, H1 with a uniformized basis, and H2. Test
//! matrices for each level are built from a graph coloring of the
//! sampling constraints, so the number of products does not grow with the
//! number of boxes.

pub mod coloring;
pub mod error;
pub mod flops;
pub mod gallery;
pub mod linalg;
pub mod operator;
pub mod peeling;
pub mod random;
pub mod rep;
pub mod tree;

pub use error::{Error, Result};
pub use linalg::{LowRank, Mat, TruncationSpec};
pub use operator::{CountingOperator, DenseOperator, LinearOperator};
pub use tree::{BoxNode, BoxTree, PointCloud};
