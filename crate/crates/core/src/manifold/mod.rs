//! Analytic manifolds with closed-form Laplace–Beltrami spectra.
//!
//! Every manifold carries the normalized volume measure `μ`, so continuum
//! eigenvalues are those of `−(1/Vol) div ∇` and eigenfunctions are
//! orthonormal in `L²(M, μ)`.

mod gap;
mod harmonics;
mod spectrum;

pub use gap::{product_sphere_gap_scan, GapRecord, GapReport};
pub use harmonics::real_spherical_harmonic;
pub use spectrum::{Mode, SpectrumTable};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Relative tolerance for the on-manifold check of geodesic inputs.
pub const ON_MANIFOLD_TOL: f64 = 1e-8;

/// Shape of the manifold with its size parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle { radius: f64 },
    Sphere2 { radius: f64 },
    FlatTorus2 { lengths: [f64; 2] },
}

/// Analytic manifold together with the geometric constants of the graph
/// bandwidth conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldModel {
    pub kind: ManifoldKind,
    /// Intrinsic dimension `m`.
    pub m: usize,
    /// Riemannian volume.
    pub volume: f64,
    /// Sectional curvature bound `K`.
    pub curvature_bound: f64,
    /// Reach `R` of the embedding.
    pub reach: f64,
    /// Injectivity radius `i0`.
    pub injectivity_radius: f64,
}

impl ManifoldModel {
    pub fn new(kind: ManifoldKind) -> Result<Self> {
        match kind {
            ManifoldKind::Circle { radius: r } => {
                check_positive("radius", r)?;
                Ok(Self {
                    kind,
                    m: 1,
                    volume: 2.0 * PI * r,
                    curvature_bound: 0.0,
                    reach: r,
                    injectivity_radius: PI * r,
                })
            }
            ManifoldKind::Sphere2 { radius: r } => {
                check_positive("radius", r)?;
                Ok(Self {
                    kind,
                    m: 2,
                    volume: 4.0 * PI * r * r,
                    curvature_bound: 1.0 / (r * r),
                    reach: r,
                    injectivity_radius: PI * r,
                })
            }
            ManifoldKind::FlatTorus2 { lengths: [l1, l2] } => {
                check_positive("lengths[0]", l1)?;
                check_positive("lengths[1]", l2)?;
                Ok(Self {
                    kind,
                    m: 2,
                    volume: l1 * l2,
                    curvature_bound: 0.0,
                    reach: l1.min(l2) / (2.0 * PI),
                    injectivity_radius: l1.min(l2) / 2.0,
                })
            }
        }
    }

    pub fn circle(radius: f64) -> Result<Self> {
        Self::new(ManifoldKind::Circle { radius })
    }

    pub fn sphere2(radius: f64) -> Result<Self> {
        Self::new(ManifoldKind::Sphere2 { radius })
    }

    pub fn flat_torus2(l1: f64, l2: f64) -> Result<Self> {
        Self::new(ManifoldKind::FlatTorus2 { lengths: [l1, l2] })
    }

    /// Dimension of the ambient Euclidean space.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle { .. } => 2,
            ManifoldKind::Sphere2 { .. } => 3,
            ManifoldKind::FlatTorus2 { .. } => 4,
        }
    }

    /// Short name used in reports.
    pub fn name(&self) -> &'static str {
        match self.kind {
            ManifoldKind::Circle { .. } => "circle",
            ManifoldKind::Sphere2 { .. } => "sphere2",
            ManifoldKind::FlatTorus2 { .. } => "flat_torus2",
        }
    }

    /// Embeds intrinsic coordinates: an angle for the circle, (polar, azimuth)
    /// for the sphere, arc-length coordinates `(s1, s2)` for the torus.
    pub fn embed(&self, coords: &[f64]) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Circle { radius } => vec![radius * coords[0].cos(), radius * coords[0].sin()],
            ManifoldKind::Sphere2 { radius } => {
                let (t, p) = (coords[0], coords[1]);
                vec![radius * t.sin() * p.cos(), radius * t.sin() * p.sin(), radius * t.cos()]
            }
            ManifoldKind::FlatTorus2 { lengths } => {
                let mut out = Vec::with_capacity(4);
                for (s, l) in coords.iter().zip(lengths) {
                    let rho = l / (2.0 * PI);
                    let t = s / rho;
                    out.push(rho * t.cos());
                    out.push(rho * t.sin());
                }
                out
            }
        }
    }

    /// Residual of the defining equations at an ambient point.
    pub fn constraint_residual(&self, x: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Circle { radius } | ManifoldKind::Sphere2 { radius } => {
                (norm(x) - radius).abs() / radius.max(1.0)
            }
            ManifoldKind::FlatTorus2 { lengths } => {
                let r1 = lengths[0] / (2.0 * PI);
                let r2 = lengths[1] / (2.0 * PI);
                let e1 = (x[0].hypot(x[1]) - r1).abs() / r1.max(1.0);
                let e2 = (x[2].hypot(x[3]) - r2).abs() / r2.max(1.0);
                e1.max(e2)
            }
        }
    }

    /// Geodesic distance between two ambient points on the manifold.
    pub fn geodesic_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.ambient_dim();
        if x.len() != d || y.len() != d {
            return Err(invalid(format!("expected points of dimension {d}")));
        }
        for p in [x, y] {
            let res = self.constraint_residual(p);
            if !(res <= ON_MANIFOLD_TOL) {
                return Err(invalid(format!("point off manifold (residual {res:e})")));
            }
        }
        Ok(self.geodesic_unchecked(x, y))
    }

    /// Geodesic distance without the on-manifold check.
    pub fn geodesic_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Circle { radius } => {
                let cross = x[0] * y[1] - x[1] * y[0];
                let dot = x[0] * y[0] + x[1] * y[1];
                radius * cross.abs().atan2(dot)
            }
            ManifoldKind::Sphere2 { radius } => {
                let c = [
                    x[1] * y[2] - x[2] * y[1],
                    x[2] * y[0] - x[0] * y[2],
                    x[0] * y[1] - x[1] * y[0],
                ];
                let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
                radius * norm(&c).atan2(dot)
            }
            ManifoldKind::FlatTorus2 { lengths } => {
                let mut s = 0.0;
                for (i, l) in lengths.iter().enumerate() {
                    let rho = l / (2.0 * PI);
                    let (a, b) = (&x[2 * i..2 * i + 2], &y[2 * i..2 * i + 2]);
                    let cross = a[0] * b[1] - a[1] * b[0];
                    let dot = a[0] * b[0] + a[1] * b[1];
                    let arc = rho * cross.abs().atan2(dot);
                    s += arc * arc;
                }
                s.sqrt()
            }
        }
    }

    /// Draws `n` i.i.d. points from `μ`.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<PointCloud> {
        if n < 2 {
            return Err(invalid("sample_points needs n >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.ambient_dim();
        let mut coords = Vec::with_capacity(n * dim);
        for _ in 0..n {
            match self.kind {
                ManifoldKind::Circle { radius } => {
                    let t: f64 = rng.random::<f64>() * 2.0 * PI;
                    coords.extend([radius * t.cos(), radius * t.sin()]);
                }
                ManifoldKind::Sphere2 { radius } => loop {
                    let g: [f64; 3] = [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ];
                    let r = norm(&g);
                    if r > 1e-12 {
                        coords.extend(g.iter().map(|v| radius * v / r));
                        break;
                    }
                },
                ManifoldKind::FlatTorus2 { lengths } => {
                    for l in lengths {
                        let rho = l / (2.0 * PI);
                        let t: f64 = rng.random::<f64>() * 2.0 * PI;
                        coords.extend([rho * t.cos(), rho * t.sin()]);
                    }
                }
            }
        }
        Ok(PointCloud { dim, coords })
    }

    /// Default quadrature grid: trapezoidal tensor grids for the circle and the
    /// torus, an equal-weight Fibonacci lattice for the sphere.
    pub fn default_quadrature(&self) -> QuadratureGrid {
        match self.kind {
            ManifoldKind::Circle { .. } => self.quadrature(4096),
            ManifoldKind::Sphere2 { .. } => self.quadrature(65536),
            ManifoldKind::FlatTorus2 { .. } => self.quadrature(128 * 128),
        }
    }

    /// Quadrature grid with about `q` nodes (the torus uses a square grid of
    /// side `⌊√q⌋`).
    pub fn quadrature(&self, q: usize) -> QuadratureGrid {
        let q = q.max(1);
        let mut coords = Vec::new();
        match self.kind {
            ManifoldKind::Circle { .. } => {
                for i in 0..q {
                    coords.extend(self.embed(&[2.0 * PI * i as f64 / q as f64]));
                }
            }
            ManifoldKind::Sphere2 { .. } => {
                let golden = (1.0 + 5f64.sqrt()) / 2.0;
                for i in 0..q {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / q as f64;
                    let az = 2.0 * PI * (i as f64 / golden).fract();
                    coords.extend(self.embed(&[z.acos(), az]));
                }
            }
            ManifoldKind::FlatTorus2 { lengths } => {
                let side = ((q as f64).sqrt().floor() as usize).max(1);
                for i in 0..side {
                    for j in 0..side {
                        let s1 = lengths[0] * i as f64 / side as f64;
                        let s2 = lengths[1] * j as f64 / side as f64;
                        coords.extend(self.embed(&[s1, s2]));
                    }
                }
            }
        }
        let points = PointCloud { dim: self.ambient_dim(), coords };
        let len = points.len();
        QuadratureGrid { points, weights: vec![1.0 / len as f64; len] }
    }

    /// First `count` continuum eigenpairs (the table is extended to the end of
    /// the block containing index `count`).
    pub fn continuum_spectrum(&self, count: usize) -> SpectrumTable {
        SpectrumTable::new(self, count.max(1))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Points stored row-major in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(invalid("coordinate buffer does not match dimension"));
        }
        Ok(Self { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Quadrature rule for `μ`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub points: PointCloud,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `∫ f g dμ` for values sampled on the grid.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }
}
