//! Closed-form spectra, multiplicity blocks and eigenfunction evaluation.

use std::f64::consts::{PI, SQRT_2};

use faer::Mat;

use super::{harmonics::real_spherical_harmonic, ManifoldKind, ManifoldModel, PointCloud};
use crate::error::{GcnnError, Result};

/// Label of one real eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Constant,
    /// `√2 cos(jθ)` or `√2 sin(jθ)`.
    Circle { j: usize, sine: bool },
    /// Real spherical harmonic of degree `l`, order `m` (negative = sine).
    Sphere { l: usize, m: i64 },
    /// `√2 cos(p t1 + q t2)` or the sine, over a half-plane of `(p, q)`.
    Torus { p: i64, q: i64, sine: bool },
}

impl Mode {
    /// Value of the eigenfunction at an ambient point of `kind`.
    pub fn eval(&self, kind: &ManifoldKind, x: &[f64]) -> f64 {
        match (*self, kind) {
            (Mode::Constant, _) => 1.0,
            (Mode::Circle { j, sine }, _) => {
                let t = x[1].atan2(x[0]) * j as f64;
                SQRT_2 * if sine { t.sin() } else { t.cos() }
            }
            (Mode::Sphere { l, m }, ManifoldKind::Sphere2 { radius }) => {
                let u = [x[0] / radius, x[1] / radius, x[2] / radius];
                real_spherical_harmonic(l, m, &u)
            }
            (Mode::Torus { p, q, sine }, _) => {
                let t = p as f64 * x[1].atan2(x[0]) + q as f64 * x[3].atan2(x[2]);
                SQRT_2 * if sine { t.sin() } else { t.cos() }
            }
            (Mode::Sphere { .. }, _) => f64::NAN,
        }
    }
}

/// Ordered continuum eigenvalues with multiplicity blocks.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    pub kind: ManifoldKind,
    /// Volume-normalized eigenvalues, nondecreasing, `λ_1 = 0`.
    pub eigenvalues: Vec<f64>,
    /// Un-normalized eigenvalues of `−div ∇`.
    pub raw_eigenvalues: Vec<f64>,
    /// First index (0-based) of every multiplicity block.
    pub block_starts: Vec<usize>,
    /// Multiplicity of the block containing each index.
    pub multiplicities: Vec<usize>,
    /// Distance of each eigenvalue to its nearest distinct neighbors within the table.
    pub gaps: Vec<f64>,
    /// Gap-decay exponent estimated from the table.
    pub beta_star: f64,
    pub modes: Vec<Mode>,
    pub intrinsic_dim: usize,
    pub volume: f64,
}

impl SpectrumTable {
    pub(super) fn new(manifold: &ManifoldModel, count: usize) -> Self {
        let blocks = match manifold.kind {
            ManifoldKind::Circle { radius } => circle_blocks(radius, count),
            ManifoldKind::Sphere2 { radius } => sphere_blocks(radius, count),
            ManifoldKind::FlatTorus2 { lengths } => torus_blocks(lengths, count),
        };
        let mut eigenvalues = Vec::new();
        let mut raw_eigenvalues = Vec::new();
        let mut block_starts = Vec::new();
        let mut multiplicities = Vec::new();
        let mut modes = Vec::new();
        for (raw, block_modes) in &blocks {
            block_starts.push(modes.len());
            for mode in block_modes {
                raw_eigenvalues.push(*raw);
                eigenvalues.push(raw / manifold.volume);
                multiplicities.push(block_modes.len());
                modes.push(*mode);
            }
        }
        let distinct: Vec<f64> = blocks.iter().map(|(raw, _)| raw / manifold.volume).collect();
        let block_gaps: Vec<f64> = (0..distinct.len())
            .map(|b| {
                let lo = if b > 0 { distinct[b] - distinct[b - 1] } else { f64::INFINITY };
                let hi = if b + 1 < distinct.len() { distinct[b + 1] - distinct[b] } else { f64::INFINITY };
                lo.min(hi)
            })
            .collect();
        let mut gaps = Vec::with_capacity(modes.len());
        for (b, (_, block_modes)) in blocks.iter().enumerate() {
            gaps.extend(std::iter::repeat_n(block_gaps[b], block_modes.len()));
        }
        let beta_star = estimate_beta_star(&block_starts, &block_gaps);
        Self {
            kind: manifold.kind,
            eigenvalues,
            raw_eigenvalues,
            block_starts,
            multiplicities,
            gaps,
            beta_star,
            modes,
            intrinsic_dim: manifold.m,
            volume: manifold.volume,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Index of the block containing the 0-based index `k`.
    pub fn block_of(&self, k: usize) -> usize {
        self.block_starts.partition_point(|&s| s <= k) - 1
    }

    /// Half-open index range of block `b`.
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let end = self.block_starts.get(b + 1).copied().unwrap_or(self.len());
        self.block_starts[b]..end
    }

    /// Number of indices up to and including the block containing the 1-based
    /// index `k`.
    pub fn block_end(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.len() {
            return Err(GcnnError::OutOfRange { index: k, len: self.len() });
        }
        Ok(self.block_range(self.block_of(k - 1)).end)
    }

    /// Counting function `N(λ)` over the table (volume-normalized argument).
    pub fn counting(&self, lambda: f64) -> usize {
        let tol = 1e-12 * (1.0 + lambda.abs());
        self.eigenvalues.partition_point(|&l| l <= lambda + tol)
    }

    /// `N(λ_k) λ_k^{−m/2}` on raw eigenvalues divided by `ω_m Vol/(2π)^m`, for
    /// the last index of every block after the first.
    pub fn weyl_ratios(&self) -> Vec<f64> {
        let m = self.intrinsic_dim as i32;
        let omega = if m == 1 { 2.0 } else { PI };
        let limit = omega * self.volume / (2.0 * PI).powi(m);
        (1..self.block_starts.len())
            .map(|b| {
                let end = self.block_range(b).end;
                let raw = self.raw_eigenvalues[end - 1];
                end as f64 * raw.powf(-(m as f64) / 2.0) / limit
            })
            .collect()
    }

    /// Evaluates `φ_k` for 0-based `indices` at every point of `points`
    /// (rows = points, columns = indices).
    pub fn eval_eigenfunctions(&self, indices: &[usize], points: &PointCloud) -> Result<Mat<f64>> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.len()) {
            return Err(GcnnError::OutOfRange { index: bad, len: self.len() });
        }
        Ok(Mat::from_fn(points.len(), indices.len(), |i, j| {
            self.modes[indices[j]].eval(&self.kind, points.point(i))
        }))
    }

    /// Evaluates the first `count` eigenfunctions at every point.
    pub fn eval_leading(&self, count: usize, points: &PointCloud) -> Result<Mat<f64>> {
        let idx: Vec<usize> = (0..count).collect();
        self.eval_eigenfunctions(&idx, points)
    }
}

/// Least-squares slope of `log(1/γ)` against `log k` over blocks, floored at 0.
fn estimate_beta_star(block_starts: &[usize], block_gaps: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = block_starts
        .iter()
        .zip(block_gaps)
        .filter(|(_, g)| g.is_finite())
        .map(|(&s, &g)| (((s + 1) as f64).ln(), (1.0 / g).ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx <= 0.0 {
        0.0
    } else {
        (sxy / sxx).max(0.0)
    }
}

type Blocks = Vec<(f64, Vec<Mode>)>;

fn circle_blocks(radius: f64, count: usize) -> Blocks {
    let mut blocks = vec![(0.0, vec![Mode::Constant])];
    let mut total = 1;
    let mut j = 1;
    while total < count {
        blocks.push((
            (j * j) as f64 / (radius * radius),
            vec![Mode::Circle { j, sine: false }, Mode::Circle { j, sine: true }],
        ));
        total += 2;
        j += 1;
    }
    blocks
}

fn sphere_blocks(radius: f64, count: usize) -> Blocks {
    let mut blocks = vec![(0.0, vec![Mode::Constant])];
    let mut total = 1;
    let mut l = 1usize;
    while total < count {
        let mut modes = vec![Mode::Sphere { l, m: 0 }];
        for m in 1..=l as i64 {
            modes.push(Mode::Sphere { l, m });
            modes.push(Mode::Sphere { l, m: -m });
        }
        total += modes.len();
        blocks.push(((l * (l + 1)) as f64 / (radius * radius), modes));
        l += 1;
    }
    blocks
}

fn torus_blocks(lengths: [f64; 2], count: usize) -> Blocks {
    let c1 = (2.0 * PI / lengths[0]).powi(2);
    let c2 = (2.0 * PI / lengths[1]).powi(2);
    let mut reach = 4i64;
    loop {
        let mut pairs: Vec<(f64, i64, i64)> = Vec::new();
        for p in 0..=reach {
            for q in -reach..=reach {
                if p > 0 || q > 0 {
                    pairs.push((c1 * (p * p) as f64 + c2 * (q * q) as f64, p, q));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let complete_below = c1.min(c2) * ((reach + 1) * (reach + 1)) as f64;
        let mut blocks: Blocks = vec![(0.0, vec![Mode::Constant])];
        let mut total = 1;
        for (raw, p, q) in pairs {
            if raw >= complete_below {
                break;
            }
            let modes = [Mode::Torus { p, q, sine: false }, Mode::Torus { p, q, sine: true }];
            let last = blocks.last_mut().expect("nonempty");
            if (raw - last.0).abs() <= 1e-10 * raw {
                last.1.extend(modes);
            } else {
                if total >= count {
                    return blocks;
                }
                blocks.push((raw, modes.to_vec()));
            }
            total += 2;
        }
        if total >= count {
            return blocks;
        }
        reach *= 2;
    }
}
