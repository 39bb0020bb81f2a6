use std::f64::consts::PI;

use nalgebra::LU;

use super::geometry::{ContourNodes, ContourParams};
use super::MIRROR_CAP;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::{check_input, LinearOperator};
use crate::tree::PointCloud;

/// Largest size for which the factorization-backed operator is built.
pub const N2D_CAP: usize = 8192;

/// How the singular diagonal of the double-layer matrix is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Diagonal {
    /// `D·1 = −½·1`.
    NullField,
    /// The smooth limit `−κ(x)/(8π)` of the kernel times the weight.
    CurvatureLimit,
}

/// Nyström matrix of the double layer with kernel
/// `((x − y)·n(y)) / (4π |x − y|²)`.
fn double_layer(nodes: &ContourNodes, diagonal: Diagonal) -> Mat {
    let n = nodes.len();
    let mut d = Mat::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let (x, y, ny) = (nodes.points[i], nodes.points[j], nodes.normals[j]);
        let r = [x[0] - y[0], x[1] - y[1]];
        let r2 = r[0] * r[0] + r[1] * r[1];
        (r[0] * ny[0] + r[1] * ny[1]) / (4.0 * PI * r2) * nodes.weights[j]
    });
    for i in 0..n {
        d[(i, i)] = match diagonal {
            Diagonal::NullField => -0.5 - d.row(i).sum(),
            Diagonal::CurvatureLimit => -nodes.curvature[i] / (8.0 * PI) * nodes.weights[i],
        };
    }
    d
}

/// Single layer `−log|x − y| / (2π)` with a zero diagonal.
fn single_layer(nodes: &ContourNodes) -> Mat {
    let n = nodes.len();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let (x, y) = (nodes.points[i], nodes.points[j]);
        -(x[0] - y[0]).hypot(x[1] - y[1]).ln() / (2.0 * PI) * nodes.weights[j]
    })
}

/// `½I + D` on a star contour, stored densely.
#[derive(Clone, Debug)]
pub struct DoubleLayer2d {
    nodes: ContourNodes,
    mat: Mat,
}

pub fn op_double_layer_2d(params: &ContourParams, n: usize) -> Result<DoubleLayer2d> {
    if n < 16 {
        return Err(Error::InvalidConfig(format!(
            "double layer needs N >= 16, got {n}"
        )));
    }
    let nodes = params.discretize(n)?;
    let mut mat = double_layer(&nodes, Diagonal::NullField);
    for i in 0..n {
        mat[(i, i)] += 0.5;
    }
    Ok(DoubleLayer2d { nodes, mat })
}

impl DoubleLayer2d {
    pub fn nodes(&self) -> &ContourNodes {
        &self.nodes
    }

    pub fn cloud(&self) -> Result<PointCloud> {
        self.nodes.cloud()
    }

    pub fn dense_mirror(&self) -> Option<&Mat> {
        (self.mat.nrows() <= MIRROR_CAP).then_some(&self.mat)
    }
}

impl LinearOperator for DoubleLayer2d {
    fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    fn apply(&self, x: &Mat) -> Result<Mat> {
        check_input(self.mat.ncols(), x)?;
        Ok(&self.mat * x)
    }

    fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
        check_input(self.mat.nrows(), x)?;
        Ok(self.mat.tr_mul(x))
    }
}

/// Neumann-to-Dirichlet map `S (½I + Dᵀ)⁻¹` on a star contour.
pub struct NeumannToDirichlet {
    nodes: ContourNodes,
    single: Mat,
    /// LU of `½I + Dᵀ`.
    forward: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// LU of `½I + D`.
    adjoint: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

pub fn op_n2d_product(params: &ContourParams, n: usize) -> Result<NeumannToDirichlet> {
    if n < 16 || n > N2D_CAP {
        return Err(Error::InvalidConfig(format!(
            "Neumann-to-Dirichlet operator needs 16 <= N <= {N2D_CAP}, got {n}"
        )));
    }
    let nodes = params.discretize(n)?;
    let mut m = double_layer(&nodes, Diagonal::CurvatureLimit);
    for i in 0..n {
        m[(i, i)] += 0.5;
    }
    let adjoint = m.clone().lu();
    let forward = m.transpose().lu();
    if !forward.is_invertible() || !adjoint.is_invertible() {
        return Err(Error::Factorization("½I + Dᵀ is singular".into()));
    }
    Ok(NeumannToDirichlet {
        single: single_layer(&nodes),
        nodes,
        forward,
        adjoint,
    })
}

fn solve(lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>, b: &Mat) -> Result<Mat> {
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Factorization("triangular solve failed".into()))?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Factorization("non-finite solution".into()));
    }
    Ok(x)
}

impl NeumannToDirichlet {
    pub fn nodes(&self) -> &ContourNodes {
        &self.nodes
    }

    pub fn cloud(&self) -> Result<PointCloud> {
        self.nodes.cloud()
    }

    pub fn single_layer(&self) -> &Mat {
        &self.single
    }

    /// Dense matrix from `N` applies.
    pub fn dense_mirror(&self) -> Option<Mat> {
        let n = self.single.nrows();
        (n <= MIRROR_CAP)
            .then(|| self.apply(&Mat::identity(n, n)).ok())
            .flatten()
    }
}

impl LinearOperator for NeumannToDirichlet {
    fn nrows(&self) -> usize {
        self.single.nrows()
    }

    fn ncols(&self) -> usize {
        self.single.ncols()
    }

    fn apply(&self, x: &Mat) -> Result<Mat> {
        check_input(self.ncols(), x)?;
        Ok(&self.single * solve(&self.forward, x)?)
    }

    fn apply_adjoint(&self, x: &Mat) -> Result<Mat> {
        check_input(self.nrows(), x)?;
        solve(&self.adjoint, &self.single.tr_mul(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::adjoint_residual;
    use crate::random::gaussian_matrix;

    #[test]
    fn null_field_diagonal_annihilates_constants() {
        let op = op_double_layer_2d(&ContourParams::default(), 128).unwrap();
        let y = op.apply(&Mat::from_element(128, 1, 1.0)).unwrap();
        assert!(y.amax() < 1e-13);
        assert!(adjoint_residual(&op, 3).unwrap() < 1e-10);
        assert!(op_double_layer_2d(&ContourParams::default(), 8).is_err());
    }

    #[test]
    fn curvature_limit_matches_neighboring_entries() {
        let nodes = ContourParams::default().discretize(4096).unwrap();
        let d = double_layer(&nodes, Diagonal::CurvatureLimit);
        let scale = nodes.curvature.iter().fold(0.0, |a: f64, k| a.max(k.abs())) / (8.0 * PI);
        for i in [1, 700, 2000, 3001] {
            let per_weight = |j: usize| d[(i, j)] / nodes.weights[j];
            let neighbors = 0.5 * (per_weight(i - 1) + per_weight(i + 1));
            assert!((per_weight(i) - neighbors).abs() < 1e-4 * scale);
        }
    }

    #[test]
    fn n2d_matches_dense_composition() {
        let params = ContourParams::default();
        let op = op_n2d_product(&params, 200).unwrap();
        let nodes = params.discretize(200).unwrap();
        let mut m = double_layer(&nodes, Diagonal::CurvatureLimit);
        for i in 0..200 {
            m[(i, i)] += 0.5;
        }
        let inv = m.transpose().try_inverse().unwrap();
        let x = gaussian_matrix(200, 3, 1);
        let expected = single_layer(&nodes) * (inv * &x);
        let got = op.apply(&x).unwrap();
        assert!((got - &expected).norm() <= 1e-11 * expected.norm());
        assert!(adjoint_residual(&op, 2).unwrap() < 1e-10);
    }

    #[test]
    fn n2d_is_linear() {
        let op = op_n2d_product(&ContourParams::default(), 64).unwrap();
        let (x, y) = (gaussian_matrix(64, 1, 1), gaussian_matrix(64, 1, 2));
        let lhs = op.apply(&(&x * 2.0 + &y)).unwrap();
        let rhs = op.apply(&x).unwrap() * 2.0 + op.apply(&y).unwrap();
        assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm());
    }
}
