//! Eigenvalue errors, cutoffs and eigenspace alignment per ladder level.

use std::sync::Arc;

use faer::Mat;
use manifold_gcnn::manifold::SpectrumTable;
use manifold_gcnn::spectra::{
    align_blocks, discrete_clusters, eigenvalue_report, CellMoments, DiscreteSpectrum, SolverKind, SpectralFrame,
};
use manifold_gcnn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::context::{Context, LevelCell};
use crate::seed::Purpose;
use crate::stats::median;

#[derive(Debug, Clone, Serialize)]
pub struct EigenRow {
    pub n: usize,
    pub seed: u64,
    pub k: usize,
    pub lambda_disc: f64,
    pub lambda_cont: f64,
    pub rel_err: f64,
    pub delta: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub n: usize,
    pub seed: u64,
    #[serde(rename = "G")]
    pub g: usize,
    pub eps_hat: f64,
    pub eps_lower: f64,
    pub max_cell_diam: f64,
    pub h: f64,
    pub avg_degree: f64,
    pub components: usize,
    pub solver: SolverKind,
    pub eig_residual: f64,
    pub k_tilde: usize,
    pub k_n: usize,
    pub admissible: bool,
    /// Median of `rel_err` over `k = 2..eig_count`.
    pub median_rel_err: f64,
    pub median_ratio: f64,
    pub delta_phi: f64,
    pub sigma_min: f64,
    pub straddles: usize,
    /// Largest change of the aligned basis and residuals under random
    /// rotations of degenerate discrete eigenvectors.
    pub align_invariance: f64,
}

#[derive(Debug, Clone)]
pub struct SpectraOutput {
    pub eigen: Vec<EigenRow>,
    pub levels: Vec<LevelRow>,
}

/// `Φ R`, the discrete basis expressed in continuum-aligned coordinates.
pub fn aligned_basis(frame: &SpectralFrame) -> Mat<f64> {
    &frame.discrete.vectors * frame.mixing_matrix()
}

fn random_orthogonal(w: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let g = Mat::from_fn(w, w, |_, _| rng.random_range(-1.0..1.0));
    g.qr().compute_thin_Q()
}

/// Re-aligns after random rotations (signs for simple eigenvalues) inside
/// every discrete cluster and reports the largest change of the aligned basis,
/// the residuals and `δ^φ`.
pub fn alignment_invariance(
    spec: &DiscreteSpectrum,
    moments: &CellMoments,
    table: &SpectrumTable,
    frame: &SpectralFrame,
    seed: u64,
    trials: usize,
) -> Result<f64> {
    let k_n = frame.k_n;
    let n = spec.n();
    let base = aligned_basis(frame);
    let clusters = discrete_clusters(&spec.eigenvalues[..k_n]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut other = spec.clone();
        for cl in &clusters {
            let q = random_orthogonal(cl.len(), &mut rng);
            let sub = Mat::from_fn(n, cl.len(), |i, j| spec.vectors[(i, cl.start + j)]);
            let rot = &sub * &q;
            for j in 0..cl.len() {
                other.vectors.col_as_slice_mut(cl.start + j).copy_from_slice(rot.col_as_slice(j));
            }
        }
        let f = align_blocks(&other, moments, table, k_n)?;
        let basis = aligned_basis(&f);
        for j in 0..k_n {
            for i in 0..n {
                worst = worst.max((basis[(i, j)] - base[(i, j)]).abs());
            }
            worst = worst.max((f.residuals[j] - frame.residuals[j]).abs());
        }
        worst = worst.max((f.delta_phi - frame.delta_phi).abs());
    }
    Ok(worst)
}

fn level_rows(ctx: &Context, cell: &LevelCell) -> Result<(Vec<EigenRow>, LevelRow)> {
    let lvl = &cell.level;
    let report = eigenvalue_report(
        &lvl.spectrum.eigenvalues,
        &ctx.table,
        ctx.cfg.eig_count,
        lvl.plan.eps_hat,
        lvl.h,
        ctx.model.curvature_bound,
        ctx.model.reach,
    )?;
    let eigen = report
        .iter()
        .map(|r| EigenRow {
            n: cell.n,
            seed: cell.seed,
            k: r.k,
            lambda_disc: r.lambda_disc,
            lambda_cont: r.lambda_cont,
            rel_err: r.rel_err,
            delta: r.delta,
            ratio: r.ratio,
        })
        .collect();
    let tail = &report[1..];
    let row = LevelRow {
        n: cell.n,
        seed: cell.seed,
        g: lvl.plan.g(),
        eps_hat: lvl.plan.eps_hat,
        eps_lower: lvl.plan.diagnostics.infeasible_below,
        max_cell_diam: lvl.plan.max_cell_diam,
        h: lvl.h,
        avg_degree: lvl.graph.average_degree(),
        components: lvl.graph.component_count(),
        solver: lvl.spectrum.solver,
        eig_residual: lvl.spectrum.max_relative_residual(&lvl.laplacian),
        k_tilde: cell.cutoff.k_tilde,
        k_n: cell.cutoff.k_n,
        admissible: cell.cutoff.admissible,
        median_rel_err: median(&tail.iter().map(|r| r.rel_err).collect::<Vec<_>>()),
        median_ratio: median(&tail.iter().map(|r| r.ratio).collect::<Vec<_>>()),
        delta_phi: cell.frame.delta_phi,
        sigma_min: cell.frame.sigma_min.iter().cloned().fold(f64::INFINITY, f64::min),
        straddles: cell.frame.straddles,
        align_invariance: alignment_invariance(
            &lvl.spectrum,
            &cell.moments,
            &ctx.table,
            &cell.frame,
            ctx.seed(Purpose::Rotation, cell.n, cell.seed),
            3,
        )?,
    };
    Ok((eigen, row))
}

pub fn run(ctx: &mut Context) -> Result<SpectraOutput> {
    let keys = ctx.ladder_keys(&ctx.cfg.seeds.clone());
    let cells: Vec<Arc<LevelCell>> = ctx.ensure(&keys)?;
    let ctx = &*ctx;
    let rows: Vec<(Vec<EigenRow>, LevelRow)> = cells.par_iter().map(|c| level_rows(ctx, c)).collect::<Result<_>>()?;
    let mut out = SpectraOutput { eigen: Vec::new(), levels: Vec::new() };
    for (eigen, level) in rows {
        out.eigen.extend(eigen);
        out.levels.push(level);
    }
    Ok(out)
}
