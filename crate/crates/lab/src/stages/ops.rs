//! Randomized identity checks of the discretization operators and the
//! small-instance eigensolver oracles.

use manifold_gcnn::graph::{build_graph, KernelShape, KernelSpec};
use manifold_gcnn::manifold::PointCloud;
use manifold_gcnn::network::sample_parameters;
use manifold_gcnn::spectra::{lowest_eigenpairs_with, SolverKind};
use manifold_gcnn::spectral_ops::{
    h_alpha_inner, param_extend, param_project, spectral_discretize, spectral_extend, Basis, SpectralSignal,
};
use manifold_gcnn::transport::balanced_cells;
use manifold_gcnn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::context::Context;
use crate::seed::Purpose;

pub const IDENTITY_TOL: f64 = 1e-9;
pub const COMPLETE_GRAPH_TOL: f64 = 1e-12;
pub const SOLVER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct OpsRow {
    pub check: String,
    pub n: usize,
    pub seed: u64,
    pub draws: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn row(check: &str, n: usize, seed: u64, draws: usize, max_residual: f64, tolerance: f64) -> OpsRow {
    OpsRow { check: check.into(), n, seed, draws, max_residual, tolerance, pass: max_residual < tolerance }
}

fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity_suite(ctx: &mut Context) -> Result<Vec<OpsRow>> {
    let (n, seed, draws) = (ctx.cfg.ops.n, ctx.cfg.seeds[0], ctx.cfg.ops.draws);
    let cell = ctx.ensure(&[(n, seed)])?.remove(0);
    let (plan, frame) = (&cell.level.plan, &cell.frame);
    let k_n = frame.k_n;
    let (_, k_cont) = ctx.modes(std::slice::from_ref(&cell))?;
    let alpha = ctx.cfg.alpha;
    let disc_eigs = &frame.discrete.eigenvalues;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed(Purpose::Draws, n, seed));
    let mut worst = [0.0f64; 6];
    for _ in 0..draws {
        let f = uniform(&mut rng, plan.g());
        let v = uniform(&mut rng, n);
        let ext = plan.extend(&v);

        let lhs = dot(&plan.discretize(&f), &v) / n as f64;
        worst[0] = worst[0].max((lhs - plan.aux_inner(&f, &ext)).abs());

        let norm_n = (dot(&v, &v) / n as f64).sqrt();
        worst[1] = worst[1].max((plan.aux_inner(&ext, &ext).sqrt() - norm_n).abs());

        let sv: Vec<f64> = v.iter().map(|&x| ctx.act.eval(x)).collect();
        let commuted = plan.extend(&sv);
        let gap = ext.iter().zip(&commuted).map(|(&x, y)| (ctx.act.eval(x) - y).abs()).fold(0.0, f64::max);
        worst[2] = worst[2].max(gap);

        let vc = SpectralSignal::new(Basis::Continuum { k: k_cont }, uniform(&mut rng, k_cont))?;
        let wd = SpectralSignal::new(Basis::Discrete { n, k: k_n }, uniform(&mut rng, k_n))?;
        let s_v = spectral_discretize(&vc, alpha, frame)?;
        let st_w = spectral_extend(&wd, alpha, frame, k_cont)?;
        let a = h_alpha_inner(&s_v, &wd, alpha, disc_eigs)?;
        let b = h_alpha_inner(&vc, &st_w, alpha, &ctx.table.eigenvalues)?;
        worst[3] = worst[3].max((a - b).abs());

        let sts = spectral_extend(&s_v, alpha, frame, k_cont)?;
        let trunc = (0..k_cont)
            .map(|k| (sts.coeffs[k] - if k < k_n { vc.coeffs[k] } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        worst[4] = worst[4].max(trunc);

        let theta = sample_parameters(disc_eigs, Basis::Discrete { n, k: k_n }, alpha, 1, rng.random(), ctx.cfg.response.decay)?
            .remove(0);
        let back = param_project(&param_extend(&theta, frame, k_cont)?, frame)?;
        let dev = [(&back.a, &theta.a), (&back.b, &theta.b), (&back.c, &theta.c)]
            .iter()
            .flat_map(|(x, y)| x.coeffs.iter().zip(&y.coeffs).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        worst[5] = worst[5].max(dev);
    }
    let names = [
        "pn_adjoint",
        "pn_star_isometry",
        "activation_commutes_with_pn_star",
        "s_adjoint",
        "s_star_s_truncation",
        "q_q_star_identity",
    ];
    Ok(names.iter().zip(worst).map(|(name, w)| row(name, n, seed, draws, w, IDENTITY_TOL)).collect())
}

/// Equal-weight complete graphs: spectrum `{0, c·n·w}` with `c = 2/(σ_η h²)`.
fn complete_graphs(ctx: &Context) -> Result<Vec<OpsRow>> {
    let kernel = KernelSpec::new(KernelShape::Indicator, 1)?;
    let h = 1.0;
    (2..=ctx.cfg.ops.complete_max)
        .map(|n| {
            let cloud = PointCloud::new(2, (0..n).flat_map(|i| [0.01 * i as f64, 0.0]).collect())?;
            let lap = build_graph(&cloud, h, kernel)?.laplacian();
            let w = kernel.normalization / (n as f64 * h);
            let top = 2.0 / (kernel.surface_tension * h * h) * n as f64 * w;
            let spec = lowest_eigenpairs_with(&lap, n, SolverKind::Dense)?;
            let err = spec
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(i, &l)| (l - if i == 0 { 0.0 } else { top }).abs())
                .fold(0.0, f64::max);
            Ok(row("complete_graph_closed_form", n, ctx.cfg.seeds[0], 1, err, COMPLETE_GRAPH_TOL))
        })
        .collect()
}

fn solver_agreement(ctx: &Context) -> Result<OpsRow> {
    let (n, seed) = (ctx.cfg.ops.solver_n, ctx.cfg.seeds[0]);
    let cloud = ctx.model.sample_points(n, ctx.seed(Purpose::Sample, n, seed))?;
    let plan = balanced_cells(&cloud, &ctx.model, ctx.cfg.g_factor, ctx.seed(Purpose::Aux, n, seed))?;
    let kernel = KernelSpec::new(ctx.cfg.kernel, ctx.model.m)?;
    let lap = build_graph(&cloud, plan.eps_hat.sqrt(), kernel)?.laplacian();
    let dense = lowest_eigenpairs_with(&lap, ctx.cfg.eig_count, SolverKind::Dense)?;
    let iter = lowest_eigenpairs_with(&lap, ctx.cfg.eig_count, SolverKind::ShiftInvert)?;
    let err = dense.eigenvalues.iter().zip(&iter.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(row("dense_vs_shift_invert", n, seed, 1, err, SOLVER_TOL))
}

pub fn run(ctx: &mut Context) -> Result<Vec<OpsRow>> {
    let mut rows = identity_suite(ctx)?;
    rows.extend(complete_graphs(ctx)?);
    rows.push(solver_agreement(ctx)?);
    Ok(rows)
}
