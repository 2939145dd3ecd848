//! Low graph spectra, block detection and blockwise eigenspace alignment.

use std::ops::Range;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GcnnError, Result};
use crate::graph::SparseLaplacian;
use crate::manifold::SpectrumTable;
use crate::transport::TransportPlan;

/// Largest size solved densely by [`lowest_eigenpairs`].
pub const DENSE_LIMIT: usize = 2048;
/// Relative tolerance grouping discrete eigenvalues into clusters.
pub const CLUSTER_TOL: f64 = 1e-6;
/// Singular values of a block cross-Gram below this make alignment meaningless.
pub const RANK_TOL: f64 = 1e-10;

const RITZ_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 2000;
const START_SEED: u64 = 0x5eed_0f_b10c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dense,
    ShiftInvert,
}

/// Lowest eigenpairs of a graph Laplacian with eigenvectors of unit norm in
/// `L²(μ_n)`, i.e. Euclidean norm `√n`.
#[derive(Debug, Clone)]
pub struct DiscreteSpectrum {
    pub eigenvalues: Vec<f64>,
    /// `n × count`, one eigenvector per column.
    pub vectors: Mat<f64>,
    pub solver: SolverKind,
    pub iterations: usize,
}

impl DiscreteSpectrum {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `max_k ‖Δ_n φ_k − λ_k φ_k‖_{μ_n} / (1 + λ_k)`.
    pub fn max_relative_residual(&self, lap: &SparseLaplacian) -> f64 {
        let n = self.n() as f64;
        (0..self.len())
            .map(|k| {
                let v = self.vectors.col_as_slice(k);
                let lv = lap.apply(v);
                let r: f64 = lv.iter().zip(v).map(|(a, b)| (a - self.eigenvalues[k] * b).powi(2)).sum();
                (r / n).sqrt() / (1.0 + self.eigenvalues[k])
            })
            .fold(0.0, f64::max)
    }

    /// Largest entry of `|G − I|` for the `μ_n` Gram matrix.
    pub fn gram_error(&self) -> f64 {
        let n = self.n() as f64;
        let g = self.vectors.transpose() * &self.vectors;
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..self.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] / n - target).abs());
            }
        }
        worst
    }
}

/// Smallest `count` eigenpairs; dense for `n ≤ DENSE_LIMIT`, shift-invert
/// subspace iteration otherwise.
pub fn lowest_eigenpairs(lap: &SparseLaplacian, count: usize) -> Result<DiscreteSpectrum> {
    let kind = if lap.n <= DENSE_LIMIT { SolverKind::Dense } else { SolverKind::ShiftInvert };
    lowest_eigenpairs_with(lap, count, kind)
}

pub fn lowest_eigenpairs_with(lap: &SparseLaplacian, count: usize, kind: SolverKind) -> Result<DiscreteSpectrum> {
    if count == 0 || count > lap.n {
        return Err(invalid(format!("count {count} must lie in 1..={}", lap.n)));
    }
    let (eigenvalues, mut vectors, iterations) = match kind {
        SolverKind::Dense => {
            let evd = lap
                .to_dense()
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| GcnnError::NumericalFailure(format!("dense eigensolver: {e:?}")))?;
            let s = evd.S().column_vector();
            let vals: Vec<f64> = (0..count).map(|k| s[k]).collect();
            let u = evd.U();
            (vals, Mat::from_fn(lap.n, count, |i, j| u[(i, j)]), 0)
        }
        SolverKind::ShiftInvert => shift_invert(lap, count)?,
    };
    let scale = (lap.n as f64).sqrt();
    for k in 0..count {
        let col = vectors.col_as_slice_mut(k);
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sign = if col[argmax_abs(col)] < 0.0 { -1.0 } else { 1.0 };
        col.iter_mut().for_each(|x| *x *= sign * scale / norm);
    }
    Ok(DiscreteSpectrum { eigenvalues, vectors, solver: kind, iterations })
}

fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn apply_cols(lap: &SparseLaplacian, x: &Mat<f64>) -> Mat<f64> {
    let mut out = Mat::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let y = lap.apply(x.col_as_slice(j));
        out.col_as_slice_mut(j).copy_from_slice(&y);
    }
    out
}

/// Subspace iteration on `(Δ_n + sI)^{-1}` with Rayleigh–Ritz extraction.
fn shift_invert(lap: &SparseLaplacian, count: usize) -> Result<(Vec<f64>, Mat<f64>, usize)> {
    let n = lap.n;
    let p = (count + count.max(8)).min(n);
    let diag_mean = lap.diagonal().iter().sum::<f64>() / n as f64;
    let shift = 1e-3 * diag_mean.max(1e-300);
    let llt = lap
        .shifted_lower(shift)?
        .sp_cholesky(Side::Lower)
        .map_err(|e| GcnnError::NumericalFailure(format!("sparse Cholesky: {e:?}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut x = Mat::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let mut worst = f64::INFINITY;
    for it in 1..=MAX_ITERS {
        llt.solve_in_place(x.as_mut());
        let q = x.qr().compute_thin_Q();
        let lq = apply_cols(lap, &q);
        let mut h = q.transpose() * &lq;
        for i in 0..p {
            for j in 0..i {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let evd = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| GcnnError::NumericalFailure(format!("Ritz eigensolver: {e:?}")))?;
        let theta: Vec<f64> = (0..p).map(|k| evd.S().column_vector()[k]).collect();
        x = &q * evd.U();
        let lx = &lq * evd.U();
        worst = (0..count)
            .map(|k| {
                let r: f64 = (0..n).map(|i| (lx[(i, k)] - theta[k] * x[(i, k)]).powi(2)).sum();
                r.sqrt() / (1.0 + theta[k].abs())
            })
            .fold(0.0, f64::max);
        if worst <= RITZ_TOL {
            let vecs = Mat::from_fn(n, count, |i, j| x[(i, j)]);
            return Ok((theta[..count].to_vec(), vecs, it));
        }
    }
    Err(GcnnError::NumericalFailure(format!(
        "shift-invert iteration did not converge in {MAX_ITERS} iterations (residual {worst:.3e}, tolerance {RITZ_TOL:.0e})"
    )))
}

/// Partition of `0..k_n` induced by the continuum multiplicity blocks.
pub fn detect_blocks(discrete: &[f64], table: &SpectrumTable, k_n: usize) -> Result<Vec<Range<usize>>> {
    if k_n == 0 || k_n > discrete.len() || k_n > table.len() {
        return Err(GcnnError::OutOfRange { index: k_n, len: discrete.len().min(table.len()) });
    }
    if table.block_end(k_n)? != k_n {
        return Err(invalid(format!("K_n = {k_n} splits a continuum multiplicity block")));
    }
    Ok((0..=table.block_of(k_n - 1)).map(|b| table.block_range(b)).collect())
}

/// Maximal runs of discrete eigenvalues within [`CLUSTER_TOL`] of their
/// predecessor.
pub fn discrete_clusters(eigenvalues: &[f64]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=eigenvalues.len() {
        let split = i == eigenvalues.len()
            || (eigenvalues[i] - eigenvalues[i - 1]).abs() > CLUSTER_TOL * (1.0 + eigenvalues[i - 1].abs());
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Blockwise orthogonal alignment of a discrete eigenbasis with the
/// continuum reference basis.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    /// First `k_n` discrete eigenpairs, with degenerate clusters rotated to a
    /// canonical basis.
    pub discrete: DiscreteSpectrum,
    /// Continuum eigenvalues `λ_1..λ_{k_n}`.
    pub continuum_eigenvalues: Vec<f64>,
    pub blocks: Vec<Range<usize>>,
    /// Per block, `R` with `φ_k^{(·,n)} = Σ_l φ_l R[l, k]` inside the block.
    pub mixing: Vec<Mat<f64>>,
    pub sigma_min: Vec<f64>,
    /// `‖P_n*φ_k^{(n)} − φ_k^{(·,n)}‖_{L²}` for `k < k_n`.
    pub residuals: Vec<f64>,
    pub delta_phi: f64,
    pub k_n: usize,
    /// Discrete clusters that touch more than one continuum block.
    pub straddles: usize,
}

impl SpectralFrame {
    /// Block-diagonal `k_n × k_n` assembly of the mixing matrices.
    pub fn mixing_matrix(&self) -> Mat<f64> {
        let mut r = Mat::zeros(self.k_n, self.k_n);
        for (b, block) in self.blocks.iter().enumerate() {
            for (i, l) in block.clone().enumerate() {
                for (j, k) in block.clone().enumerate() {
                    r[(l, k)] = self.mixing[b][(i, j)];
                }
            }
        }
        r
    }

    /// Largest `|RᵀR − I|` entry over all blocks.
    pub fn orthogonality_error(&self) -> f64 {
        self.mixing
            .iter()
            .map(|r| {
                let g = r.transpose() * r;
                let mut w: f64 = 0.0;
                for i in 0..g.nrows() {
                    for j in 0..g.ncols() {
                        w = w.max((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
                    }
                }
                w
            })
            .fold(0.0, f64::max)
    }
}

/// Transport-cell moments of the continuum eigenfunctions.
#[derive(Debug, Clone)]
pub struct CellMoments {
    /// `P_n φ_l` in column `l`, one row per cloud point.
    pub means: Mat<f64>,
    /// Within-cell covariance `⟨φ_l − P_n*P_nφ_l, φ_j − P_n*P_nφ_j⟩` on
    /// pairs inside one continuum block, zero elsewhere.
    pub covariance: Mat<f64>,
}

impl CellMoments {
    /// Moments of the first `k` eigenfunctions over the cells of `plan`,
    /// integrating on its auxiliary sample.
    pub fn from_plan(plan: &TransportPlan, table: &SpectrumTable, k: usize) -> Result<Self> {
        let k = table.block_end(k)?;
        let values = table.eval_leading(k, &plan.aux)?;
        let mut means = Mat::zeros(plan.n, k);
        for l in 0..k {
            let m = plan.discretize(values.col_as_slice(l));
            means.col_as_slice_mut(l).copy_from_slice(&m);
        }
        let g = plan.g() as f64;
        let mut covariance = Mat::zeros(k, k);
        for b in 0..=table.block_of(k - 1) {
            let block = table.block_range(b);
            for l in block.clone() {
                for j in block.start..=l {
                    let s: f64 = (0..plan.g())
                        .map(|y| {
                            let c = plan.assignment[y];
                            (values[(y, l)] - means[(c, l)]) * (values[(y, j)] - means[(c, j)])
                        })
                        .sum();
                    covariance[(l, j)] = s / g;
                    covariance[(j, l)] = s / g;
                }
            }
        }
        Ok(Self { means, covariance })
    }

    /// Point evaluations treated as cell means of singleton cells.
    pub fn pointwise(values: Mat<f64>) -> Self {
        let k = values.ncols();
        Self { means: values, covariance: Mat::zeros(k, k) }
    }
}

/// Cross-Gram `C[l, k] = ⟨P_n φ_l, φ_k^{(n)}⟩_{μ_n}`.
pub fn cross_gram(cell_means: MatRef<'_, f64>, vectors: MatRef<'_, f64>) -> Mat<f64> {
    let n = vectors.nrows() as f64;
    let mut c = cell_means.transpose() * vectors;
    c.col_iter_mut().for_each(|col| col.iter_mut().for_each(|x| *x /= n));
    c
}

/// Aligns the first `k_n` discrete eigenvectors with the continuum basis.
///
/// The squared residual of index `k` splits into the discrete misfit
/// `‖φ_k^{(n)} − P_n f_k‖²_{μ_n}` and the within-cell variance of the aligned
/// continuum function `f_k`, which avoids cancellation in `2 − 2⟨·,·⟩`.
pub fn align_blocks(
    discrete: &DiscreteSpectrum,
    moments: &CellMoments,
    table: &SpectrumTable,
    k_n: usize,
) -> Result<SpectralFrame> {
    let blocks = detect_blocks(&discrete.eigenvalues, table, k_n)?;
    let n = discrete.n();
    let cell_means = moments.means.as_ref();
    if cell_means.nrows() != n || cell_means.ncols() < k_n || moments.covariance.nrows() < k_n {
        return Err(invalid(format!(
            "cell means are {}×{}, need {n}×{k_n}",
            cell_means.nrows(),
            cell_means.ncols()
        )));
    }
    let means = cell_means.subcols(0, k_n);
    let mut vectors = Mat::from_fn(n, k_n, |i, j| discrete.vectors[(i, j)]);
    let mut eigenvalues = discrete.eigenvalues[..k_n].to_vec();
    let mut c = cross_gram(means, vectors.as_ref());

    let mut straddles = 0;
    for cluster in discrete_clusters(&eigenvalues) {
        let first = table.block_of(cluster.start);
        let last = table.block_of(cluster.end - 1);
        if first != last {
            straddles += 1;
        }
        if cluster.len() < 2 {
            continue;
        }
        let rows = blocks[first].start..blocks[last].end;
        let sub = Mat::from_fn(rows.len(), cluster.len(), |i, j| c[(rows.start + i, cluster.start + j)]);
        let svd = sub.svd().map_err(|e| GcnnError::NumericalFailure(format!("cluster SVD: {e:?}")))?;
        let (u, v) = (svd.U(), svd.V());
        let w = cluster.len();
        let mut rot = Mat::from_fn(w, w, |i, j| v[(i, j)]);
        let basis = Mat::from_fn(n, w, |i, j| vectors[(i, cluster.start + j)]);
        let mut fresh = &basis * &rot;
        for j in 0..w {
            let negative = if j < rows.len() {
                let col: Vec<f64> = (0..rows.len()).map(|i| u[(i, j)]).collect();
                col[argmax_abs(&col)] < 0.0
            } else {
                let col = fresh.col_as_slice(j);
                col[argmax_abs(col)] < 0.0
            };
            if negative {
                fresh.col_as_slice_mut(j).iter_mut().for_each(|x| *x = -*x);
                (0..w).for_each(|i| rot[(i, j)] = -rot[(i, j)]);
            }
        }
        let lam: Vec<f64> = eigenvalues[cluster.clone()].to_vec();
        for j in 0..w {
            eigenvalues[cluster.start + j] = (0..w).map(|i| rot[(i, j)].powi(2) * lam[i]).sum();
            vectors.col_as_slice_mut(cluster.start + j).copy_from_slice(fresh.col_as_slice(j));
        }
    }
    c = cross_gram(means, vectors.as_ref());

    let mut mixing = Vec::with_capacity(blocks.len());
    let mut sigma_min = Vec::with_capacity(blocks.len());
    let mut residuals = vec![0.0; k_n];
    for block in &blocks {
        let w = block.len();
        let sub = Mat::from_fn(w, w, |i, j| c[(block.start + i, block.start + j)]);
        let svd = sub.svd().map_err(|e| GcnnError::NumericalFailure(format!("block SVD: {e:?}")))?;
        let s = svd.S().column_vector();
        let smin = (0..w).map(|i| s[i]).fold(f64::INFINITY, f64::min);
        if smin <= RANK_TOL {
            return Err(GcnnError::DegenerateAlignment { block_start: block.start, sigma_min: smin });
        }
        let r = svd.U() * svd.V().transpose();
        let fitted = means.subcols(block.start, w) * &r;
        let cov = moments.covariance.as_ref().submatrix(block.start, block.start, w, w);
        let spread = r.transpose() * cov * &r;
        for j in 0..w {
            let misfit: f64 = (0..n)
                .map(|i| (vectors[(i, block.start + j)] - fitted[(i, j)]).powi(2))
                .sum::<f64>()
                / n as f64;
            residuals[block.start + j] = (misfit + spread[(j, j)].max(0.0)).sqrt();
        }
        mixing.push(r);
        sigma_min.push(smin);
    }
    let delta_phi = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(SpectralFrame {
        discrete: DiscreteSpectrum {
            eigenvalues,
            vectors,
            solver: discrete.solver,
            iterations: discrete.iterations,
        },
        continuum_eigenvalues: table.eigenvalues[..k_n].to_vec(),
        blocks,
        mixing,
        sigma_min,
        residuals,
        delta_phi,
        k_n,
        straddles,
    })
}

/// `δ(ε, h, λ) = ε/h + (1 + √λ) h + (K + 1/R²) h²`.
pub fn delta_bound(eps: f64, h: f64, lambda: f64, curvature: f64, reach: f64) -> Result<f64> {
    if !(h > 0.0) || !(reach > 0.0) || eps < 0.0 || lambda < 0.0 {
        return Err(invalid(format!("delta_bound needs h > 0, R > 0, ε ≥ 0, λ ≥ 0 (h={h}, R={reach})")));
    }
    Ok(eps / h + (1.0 + lambda.sqrt()) * h + (curvature + 1.0 / (reach * reach)) * h * h)
}

/// One row of the eigenvalue report; `k` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenRecord {
    pub k: usize,
    pub lambda_disc: f64,
    pub lambda_cont: f64,
    /// Relative error for `k ≥ 2`, absolute error for `k = 1`.
    pub rel_err: f64,
    pub delta: f64,
    pub ratio: f64,
}

pub fn eigenvalue_report(
    discrete: &[f64],
    table: &SpectrumTable,
    k_n: usize,
    eps: f64,
    h: f64,
    curvature: f64,
    reach: f64,
) -> Result<Vec<EigenRecord>> {
    if k_n > discrete.len() || k_n > table.len() {
        return Err(GcnnError::OutOfRange { index: k_n, len: discrete.len().min(table.len()) });
    }
    (0..k_n)
        .map(|i| {
            let (ld, lc) = (discrete[i], table.eigenvalues[i]);
            let err = (ld - lc).abs();
            let rel_err = if i == 0 { err } else { err / lc };
            let delta = delta_bound(eps, h, lc, curvature, reach)?;
            Ok(EigenRecord { k: i + 1, lambda_disc: ld, lambda_cont: lc, rel_err, delta, ratio: rel_err / delta })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, KernelShape, KernelSpec};
    use crate::manifold::{ManifoldModel, PointCloud};
    use rand::Rng;
    use std::f64::consts::PI;

    fn circle_grid(n: usize, phase: f64) -> PointCloud {
        let coords = (0..n)
            .flat_map(|i| {
                let t = phase + 2.0 * PI * i as f64 / n as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        PointCloud::new(2, coords).unwrap()
    }

    fn circle_laplacian(cloud: &PointCloud, h: f64) -> SparseLaplacian {
        build_graph(cloud, h, KernelSpec::new(KernelShape::Indicator, 1).unwrap()).unwrap().laplacian()
    }

    fn random_rotation(w: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        let g = Mat::from_fn(w, w, |_, _| -> f64 { StandardNormal.sample(rng) });
        g.qr().compute_thin_Q()
    }

    #[test]
    fn complete_graph_closed_form() {
        for n in 2..=6 {
            // all points within h of each other
            let cloud = PointCloud::new(2, (0..n).flat_map(|i| [0.01 * i as f64, 0.0]).collect()).unwrap();
            let h = 1.0;
            let lap = circle_laplacian(&cloud, h);
            let w = 0.5 / (n as f64 * h);
            let sigma = 1.0 / 3.0;
            let top = 2.0 / (sigma * h * h) * n as f64 * w;
            let spec = lowest_eigenpairs(&lap, n).unwrap();
            assert!(spec.eigenvalues[0].abs() < 1e-12);
            for &l in &spec.eigenvalues[1..] {
                assert!((l - top).abs() < 1e-12, "n={n}: {l} vs {top}");
            }
        }
    }

    #[test]
    fn constant_ground_state() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let cloud = m.sample_points(300, 3).unwrap();
        let lap = circle_laplacian(&cloud, 0.3);
        let spec = lowest_eigenpairs(&lap, 5).unwrap();
        assert!(spec.eigenvalues[0].abs() < 1e-10);
        assert!(spec.vectors.col_as_slice(0).iter().all(|&x| (x - 1.0).abs() < 1e-10));
        assert!(spec.max_relative_residual(&lap) < 1e-8);
        assert!(spec.gram_error() < 1e-10);
    }

    #[test]
    fn dense_and_shift_invert_agree() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let cloud = m.sample_points(512, 11).unwrap();
        let lap = circle_laplacian(&cloud, 0.25);
        let dense = lowest_eigenpairs_with(&lap, 12, SolverKind::Dense).unwrap();
        let iter = lowest_eigenpairs_with(&lap, 12, SolverKind::ShiftInvert).unwrap();
        for (a, b) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(iter.max_relative_residual(&lap) < 1e-8);
        assert!(iter.gram_error() < 1e-10);
    }

    #[test]
    fn rejects_bad_count() {
        let lap = circle_laplacian(&circle_grid(10, 0.0), 1.0);
        assert!(lowest_eigenpairs(&lap, 0).is_err());
        assert!(lowest_eigenpairs(&lap, 11).is_err());
    }

    #[test]
    fn blocks_follow_continuum() {
        let circle = ManifoldModel::circle(1.0).unwrap().continuum_spectrum(9);
        let b = detect_blocks(&[0.0; 9], &circle, 9).unwrap();
        assert_eq!(b, vec![0..1, 1..3, 3..5, 5..7, 7..9]);
        assert!(detect_blocks(&[0.0; 9], &circle, 8).is_err());
        let sphere = ManifoldModel::sphere2(1.0).unwrap().continuum_spectrum(16);
        let sizes: Vec<usize> = detect_blocks(&[0.0; 16], &sphere, 16).unwrap().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![1, 3, 5, 7]);
    }

    #[test]
    fn continuum_aligned_with_itself() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(7);
        let n = 256;
        let grid = circle_grid(n, 0.3);
        let phi = table.eval_leading(7, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // rotate each block to hide the reference basis
        let mut mixed = phi.clone();
        for b in 1..4 {
            let r = table.block_range(b);
            let q = random_rotation(2, &mut rng);
            for i in 0..n {
                for j in 0..2 {
                    mixed[(i, r.start + j)] = (0..2).map(|l| phi[(i, r.start + l)] * q[(l, j)]).sum();
                }
            }
        }
        let spec = DiscreteSpectrum {
            eigenvalues: table.eigenvalues.clone(),
            vectors: mixed,
            solver: SolverKind::Dense,
            iterations: 0,
        };
        let frame = align_blocks(&spec, &CellMoments::pointwise(phi), &table, 7).unwrap();
        assert!(frame.orthogonality_error() < 1e-12);
        assert!(frame.delta_phi < 1e-12, "{}", frame.delta_phi);
        assert_eq!(frame.straddles, 0);
    }

    fn point_frame(cloud: &PointCloud, table: &SpectrumTable, k_n: usize) -> SpectralFrame {
        let lap = circle_laplacian(cloud, 0.3);
        let spec = lowest_eigenpairs(&lap, k_n).unwrap();
        let means = table.eval_leading(k_n, cloud).unwrap();
        align_blocks(&spec, &CellMoments::pointwise(means), table, k_n).unwrap()
    }

    #[test]
    fn residuals_invariant_under_rotation() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(5);
        let cloud = model.sample_points(400, 21).unwrap();
        let theta: f64 = 0.7;
        let (c, s) = (theta.cos(), theta.sin());
        let rotated = PointCloud::new(
            2,
            cloud.iter().flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect(),
        )
        .unwrap();
        let a = point_frame(&cloud, &table, 5);
        let b = point_frame(&rotated, &table, 5);
        for (x, y) in a.residuals.iter().zip(&b.residuals) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        assert!(a.residuals[0] < 1e-6);
    }

    #[test]
    fn procrustes_is_optimal() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(5);
        let cloud = model.sample_points(300, 5).unwrap();
        let frame = point_frame(&cloud, &table, 5);
        let means = table.eval_leading(5, &cloud).unwrap();
        let c = cross_gram(means.as_ref(), frame.discrete.vectors.as_ref());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (b, block) in frame.blocks.iter().enumerate() {
            let w = block.len();
            let sub = Mat::from_fn(w, w, |i, j| c[(block.start + i, block.start + j)]);
            let cost = |r: &Mat<f64>| {
                let fit = r.transpose() * &sub;
                (0..w).map(|j| 2.0 - 2.0 * fit[(j, j)]).sum::<f64>()
            };
            let best = cost(&frame.mixing[b]);
            for _ in 0..20 {
                // small orthogonal factor via Cayley transform of a skew matrix
                let a = Mat::from_fn(w, w, |_, _| 0.05 * rng.random::<f64>());
                let skew = Mat::from_fn(w, w, |i, j| a[(i, j)] - a[(j, i)]);
                let eye = Mat::<f64>::identity(w, w);
                let lhs = &eye - &skew;
                let q = lhs.partial_piv_lu().solve(&eye + &skew);
                let perturbed = &frame.mixing[b] * &q;
                assert!(cost(&perturbed) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_basis_choice_is_irrelevant() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(7);
        let cloud = circle_grid(90, 0.1);
        let lap = circle_laplacian(&cloud, 0.4);
        let spec = lowest_eigenpairs(&lap, 7).unwrap();
        let moments = CellMoments::pointwise(table.eval_leading(7, &cloud).unwrap());
        let base = align_blocks(&spec, &moments, &table, 7).unwrap();
        let clusters = discrete_clusters(&spec.eigenvalues);
        assert_eq!(clusters.iter().filter(|c| c.len() == 2).count(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let mut other = spec.clone();
            for cl in &clusters {
                let q = random_rotation(cl.len(), &mut rng);
                let sub = Mat::from_fn(90, cl.len(), |i, j| spec.vectors[(i, cl.start + j)]);
                let rot = &sub * &q;
                for j in 0..cl.len() {
                    other.vectors.col_as_slice_mut(cl.start + j).copy_from_slice(rot.col_as_slice(j));
                }
            }
            let f = align_blocks(&other, &moments, &table, 7).unwrap();
            assert!((f.delta_phi - base.delta_phi).abs() < 1e-10);
            for (x, y) in f.residuals.iter().zip(&base.residuals) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_block_is_reported() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(3);
        let grid = circle_grid(64, 0.0);
        let phi = table.eval_leading(3, &grid).unwrap();
        // the discrete block {2,3} is orthogonal to the continuum one
        let five = ManifoldModel::circle(1.0).unwrap().continuum_spectrum(11).eval_eigenfunctions(&[0, 9, 10], &grid).unwrap();
        let spec = DiscreteSpectrum { eigenvalues: vec![0.0, 1.0, 1.0], vectors: five, solver: SolverKind::Dense, iterations: 0 };
        match align_blocks(&spec, &CellMoments::pointwise(phi), &table, 3) {
            Err(GcnnError::DegenerateAlignment { block_start, .. }) => assert_eq!(block_start, 1),
            other => panic!("expected degenerate alignment, got {other:?}"),
        }
    }

    #[test]
    fn delta_bound_substitution() {
        assert!((delta_bound(0.01, 0.1, 4.0, 0.0, 1.0).unwrap() - 0.41).abs() < 1e-15);
        let h = 0.2;
        assert!((delta_bound(0.0, h, 0.0, 1.0, 2.0).unwrap() - (h + 1.25 * h * h)).abs() < 1e-15);
        assert!(delta_bound(0.1, 0.0, 1.0, 0.0, 1.0).is_err());
        assert!(delta_bound(0.1, 0.1, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn identical_spectra_report_zero_error() {
        let table = ManifoldModel::sphere2(1.0).unwrap().continuum_spectrum(9);
        let rep = eigenvalue_report(&table.eigenvalues, &table, 9, 0.01, 0.1, 1.0, 1.0).unwrap();
        assert!(rep.iter().all(|r| r.rel_err == 0.0 && r.ratio == 0.0 && r.delta.is_finite()));
        assert_eq!(rep[0].k, 1);
    }

    #[test]
    fn cell_moments_split_the_aux_gram() {
        let model = ManifoldModel::sphere2(1.0).unwrap();
        let table = model.continuum_spectrum(9);
        let cloud = model.sample_points(40, 2).unwrap();
        let plan = crate::transport::balanced_cells(&cloud, &model, 16, 3).unwrap();
        let mo = CellMoments::from_plan(&plan, &table, 9).unwrap();
        let values = table.eval_leading(9, &plan.aux).unwrap();
        for b in 0..3 {
            for l in table.block_range(b) {
                for j in table.block_range(b) {
                    let aux: f64 = (0..plan.g()).map(|y| values[(y, l)] * values[(y, j)]).sum::<f64>() / plan.g() as f64;
                    let disc: f64 = (0..40).map(|i| mo.means[(i, l)] * mo.means[(i, j)]).sum::<f64>() / 40.0;
                    assert!((aux - disc - mo.covariance[(l, j)]).abs() < 1e-12);
                }
            }
        }
        assert_eq!(mo.covariance[(0, 1)], 0.0);
    }
}
