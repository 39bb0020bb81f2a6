use super::geometry::Points;
use super::MIRROR_CAP;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::{check_input, LinearOperator};

/// `A_ij = 1/‖x_i − x_j‖` for `i ≠ j`, zero on the diagonal.
#[derive(Clone, Debug)]
pub struct Laplace3d {
    points: Points,
    mat: Mat,
}

pub fn op_laplace3d_kernel(points: &Points) -> Result<Laplace3d> {
    if points.dim != 3 {
        return Err(Error::dims(
            "3-dimensional points",
            format!("{} dimensions", points.dim),
        ));
    }
    let n = points.len();
    let mut mat = Mat::zeros(n, n);
    for i in 0..n {
        let x = points.point(i);
        for j in i + 1..n {
            let y = points.point(j);
            let r = x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if r == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "points {i} and {j} coincide"
                )));
            }
            mat[(i, j)] = 1.0 / r;
            mat[(j, i)] = 1.0 / r;
        }
    }
    Ok(Laplace3d {
        points: points.clone(),
        mat,
    })
}

impl Laplace3d {
    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn dense_mirror(&self) -> Option<&Mat> {
        (self.mat.nrows() <= MIRROR_CAP).then_some(&self.mat)
    }
}

impl LinearOperator for Laplace3d {
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
        self.apply(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::Geometry;
    use crate::operator::adjoint_residual;
    use crate::random::gaussian_matrix;

    #[test]
    fn two_body() {
        let pts = Points {
            dim: 3,
            coords: vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.0],
        };
        let op = op_laplace3d_kernel(&pts).unwrap();
        let a = op.apply(&Mat::identity(2, 2)).unwrap();
        assert_eq!(a, Mat::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0]));
    }

    #[test]
    fn symmetric_and_rejects_duplicates() {
        let pts = Geometry::Sphere3d.generate(300, 1).unwrap();
        let op = op_laplace3d_kernel(&pts).unwrap();
        let x = gaussian_matrix(300, 2, 4);
        assert!((op.apply(&x).unwrap() - op.apply_adjoint(&x).unwrap()).amax() <= 1e-12);
        assert!(adjoint_residual(&op, 1).unwrap() < 1e-10);
        let mut dup = pts.clone();
        dup.coords.extend_from_slice(&pts.coords[..3]);
        assert!(matches!(
            op_laplace3d_kernel(&dup),
            Err(Error::DegenerateGeometry(_))
        ));
    }
}
