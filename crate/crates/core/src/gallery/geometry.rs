use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::random::{derive_seed, tag, NormalStream};
use crate::tree::PointCloud;

/// Star-shaped contour `r(θ) = radius · (1 + amplitude · cos(lobes · θ))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourParams {
    pub radius: f64,
    pub amplitude: f64,
    pub lobes: u32,
}

impl Default for ContourParams {
    fn default() -> Self {
        Self {
            radius: 1.0,
            amplitude: 0.3,
            lobes: 5,
        }
    }
}

/// Trapezoidal nodes on a closed contour, counterclockwise.
#[derive(Clone, Debug)]
pub struct ContourNodes {
    pub points: Vec<[f64; 2]>,
    /// Outward unit normals.
    pub normals: Vec<[f64; 2]>,
    /// Quadrature weights `|γ'(θ_j)| · 2π / N`.
    pub weights: Vec<f64>,
    /// Signed curvature, positive on convex arcs.
    pub curvature: Vec<f64>,
}

impl ContourNodes {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cloud(&self) -> Result<PointCloud> {
        let coords: Vec<f64> = self.points.iter().flatten().copied().collect();
        normalized_cloud(2, coords)
    }
}

impl ContourParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && self.radius.is_finite()
            && self.amplitude >= 0.0
            && self.amplitude < 1.0
            && self.lobes > 0;
        if !ok {
            return Err(Error::DegenerateGeometry(format!(
                "contour needs radius > 0, 0 <= amplitude < 1 and lobes > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn discretize(&self, n: usize) -> Result<ContourNodes> {
        self.validate()?;
        if n < 3 {
            return Err(Error::InvalidConfig(format!(
                "contour needs at least 3 nodes, got {n}"
            )));
        }
        let (a, q, r0) = (self.amplitude, self.lobes as f64, self.radius);
        let mut nodes = ContourNodes {
            points: Vec::with_capacity(n),
            normals: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
            curvature: Vec::with_capacity(n),
        };
        for j in 0..n {
            let t = 2.0 * PI * j as f64 / n as f64;
            let (s, c) = t.sin_cos();
            let r = r0 * (1.0 + a * (q * t).cos());
            let dr = -r0 * a * q * (q * t).sin();
            let ddr = -r0 * a * q * q * (q * t).cos();
            let (x, y) = (r * c, r * s);
            let (dx, dy) = (dr * c - r * s, dr * s + r * c);
            let (ddx, ddy) = (
                ddr * c - 2.0 * dr * s - r * c,
                ddr * s + 2.0 * dr * c - r * s,
            );
            let speed = dx.hypot(dy);
            nodes.points.push([x, y]);
            nodes.normals.push([dy / speed, -dx / speed]);
            nodes.weights.push(speed * 2.0 * PI / n as f64);
            nodes.curvature.push((dx * ddy - dy * ddx) / speed.powi(3));
        }
        let spacing = min_spacing(&nodes.points);
        if spacing <= 1e-12 * r0 {
            return Err(Error::DegenerateGeometry(format!(
                "contour nodes coincide (minimum spacing {spacing:e})"
            )));
        }
        Ok(nodes)
    }
}

fn min_spacing(points: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    best
}

/// Point sets for the experiments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    Contour2d(ContourParams),
    /// Uniform random points on the unit sphere.
    Sphere3d,
    /// Equispaced points on a randomly oriented line in `dim` dimensions,
    /// perturbed by Gaussian noise of standard deviation `sigma`.
    LineWithNoise {
        dim: usize,
        sigma: f64,
    },
    /// Tensor grid with `n^(1/dim)` points per side.
    UniformGrid {
        dim: usize,
    },
}

/// Physical coordinates, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl Points {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// The points as a tree input. Points outside the unit cube are shifted
    /// and uniformly scaled into it.
    pub fn cloud(&self) -> Result<PointCloud> {
        if self.coords.iter().all(|x| (0.0..=1.0).contains(x)) {
            return PointCloud::new(self.dim, self.coords.clone());
        }
        normalized_cloud(self.dim, self.coords.clone())
    }
}

fn normalized_cloud(dim: usize, mut coords: Vec<f64>) -> Result<PointCloud> {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in coords.chunks(dim) {
        for j in 0..dim {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let span = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    let scale = if span > 0.0 { 1.0 / span } else { 1.0 };
    for p in coords.chunks_mut(dim) {
        for j in 0..dim {
            let centered = (p[j] - lo[j]) * scale + 0.5 * (1.0 - (hi[j] - lo[j]) * scale);
            p[j] = centered.clamp(0.0, 1.0);
        }
    }
    PointCloud::new(dim, coords)
}

impl Geometry {
    pub fn name(&self) -> &'static str {
        match self {
            Geometry::Contour2d(_) => "contour2d",
            Geometry::Sphere3d => "sphere3d",
            Geometry::LineWithNoise { .. } => "line-with-noise",
            Geometry::UniformGrid { .. } => "uniform-grid",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Geometry::Contour2d(_) => 2,
            Geometry::Sphere3d => 3,
            Geometry::LineWithNoise { dim, .. } | Geometry::UniformGrid { dim } => dim,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Points> {
        if n == 0 {
            return Err(Error::InvalidConfig(
                "geometry needs at least one point".into(),
            ));
        }
        if self.dim() == 0 {
            return Err(Error::InvalidConfig(
                "geometry dimension must be positive".into(),
            ));
        }
        let mut rng = NormalStream::new(derive_seed(seed, &[tag::GEOMETRY]));
        let coords = match *self {
            Geometry::Contour2d(params) => {
                params.discretize(n)?.points.into_iter().flatten().collect()
            }
            Geometry::Sphere3d => {
                let mut out = Vec::with_capacity(3 * n);
                for _ in 0..n {
                    let v = loop {
                        let v = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 1e-8 {
                            break v.map(|x| x / norm);
                        }
                    };
                    out.extend_from_slice(&v);
                }
                out
            }
            Geometry::LineWithNoise { dim, sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "noise level must be >= 0, got {sigma}"
                    )));
                }
                let mut dir: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
                let norm = dir
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                dir.iter_mut().for_each(|x| *x /= norm);
                let mut out = Vec::with_capacity(dim * n);
                for i in 0..n {
                    let t = (i as f64 + 0.5) / n as f64 - 0.5;
                    for d in &dir {
                        out.push(t * d + sigma * rng.next_normal());
                    }
                }
                out
            }
            Geometry::UniformGrid { dim } => {
                let side = (n as f64).powf(1.0 / dim as f64).round() as usize;
                if side.checked_pow(dim as u32) != Some(n) {
                    return Err(Error::InvalidConfig(format!(
                        "a {dim}-dimensional uniform grid needs a perfect power point count, got {n}"
                    )));
                }
                let mut out = Vec::with_capacity(dim * n);
                for i in 0..n {
                    let mut rest = i;
                    for _ in 0..dim {
                        out.push(((rest % side) as f64 + 0.5) / side as f64);
                        rest /= side;
                    }
                }
                out
            }
        };
        Ok(Points {
            dim: self.dim(),
            coords,
        })
    }
}
