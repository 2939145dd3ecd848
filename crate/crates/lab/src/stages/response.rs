//! Uniform convergence of single-neuron responses along the ladder.

use std::sync::Arc;

use manifold_gcnn::erm::{Restriction, Restrictor, SignalSampler};
use manifold_gcnn::network::{sample_parameters, SynthesisGrid};
use manifold_gcnn::spectral_ops::{param_project, Basis, ParameterTriple, SpectralSignal};
use manifold_gcnn::Result;
use rayon::prelude::*;
use serde::Serialize;

use crate::context::{Context, LevelCell};
use crate::seed::Purpose;

/// Slack of the high-frequency bound.
pub const HF_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct ResponseRow {
    pub n: usize,
    pub seed: u64,
    pub restriction: &'static str,
    pub signal: usize,
    pub u_norm: f64,
    pub k_n: usize,
    /// `max_θ |ψ_n(R_n u, Qθ) − ψ(u, θ)|` over the dictionary.
    pub sup_err: f64,
}

/// `|ψ(φ_k, θ) − ⟨a, σ(c)⟩|` against `‖a‖ L_σ |b_k|` on the continuum (`n = 0`).
#[derive(Debug, Clone, Serialize)]
pub struct HfRow {
    pub n: usize,
    pub seed: u64,
    pub atom: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct ResponseOutput {
    pub k_dict: usize,
    pub k_cont: usize,
    pub rows: Vec<ResponseRow>,
    pub hf: Vec<HfRow>,
}

struct Shared<'a> {
    ctx: &'a Context,
    dict: Vec<ParameterTriple>,
    signals: Vec<SpectralSignal>,
    reference: Vec<Vec<f64>>,
    k_cont: usize,
}

fn cell_rows(sh: &Shared<'_>, cell: &LevelCell) -> Result<Vec<ResponseRow>> {
    let ctx = sh.ctx;
    let frame = &cell.frame;
    let aux = SynthesisGrid::on_aux(&ctx.table, sh.k_cont, &cell.level.plan)?;
    let proj: Vec<ParameterTriple> = sh.dict.iter().map(|t| param_project(t, frame)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for kind in [Restriction::Projection, Restriction::Spectral] {
        let r = Restrictor::new(kind, frame, &cell.level.plan, Some(aux.clone()), ctx.cfg.convolution)?;
        for (i, (u, reference)) in sh.signals.iter().zip(&sh.reference).enumerate() {
            let disc = r.nodes.responses(&r.apply(u)?, &proj, &ctx.act)?;
            let sup_err = disc.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            rows.push(ResponseRow {
                n: cell.n,
                seed: cell.seed,
                restriction: kind.name(),
                signal: i,
                u_norm: u.l2_norm(),
                k_n: frame.k_n,
                sup_err,
            });
        }
    }
    Ok(rows)
}

fn high_frequency(ctx: &Context, grid: &SynthesisGrid, k_cont: usize) -> Result<Vec<HfRow>> {
    let basis = Basis::Continuum { k: k_cont };
    let dict = sample_parameters(
        &ctx.table.eigenvalues,
        basis,
        ctx.cfg.alpha,
        ctx.cfg.response.dictionary_size,
        ctx.seed(Purpose::WideDictionary, 0, 0),
        ctx.cfg.response.decay,
    )?;
    let zero = SpectralSignal::zeros(basis);
    let base = grid.responses(&zero, &dict, &ctx.act)?;
    let mut rows = Vec::new();
    for k in (k_cont / 2).max(1)..=k_cont {
        let u = SpectralSignal::unit(basis, k - 1)?;
        let psi = grid.responses(&u, &dict, &ctx.act)?;
        for (atom, theta) in dict.iter().enumerate() {
            rows.push(HfRow {
                n: 0,
                seed: ctx.cfg.master_seed,
                atom,
                k,
                lhs: (psi[atom] - base[atom]).abs(),
                rhs: theta.a.l2_norm() * ctx.act.lipschitz * theta.b.coeffs[k - 1].abs(),
            });
        }
    }
    Ok(rows)
}

pub fn run(ctx: &mut Context) -> Result<ResponseOutput> {
    let keys = ctx.ladder_keys(&ctx.cfg.seeds.clone());
    let cells: Vec<Arc<LevelCell>> = ctx.ensure(&keys)?;
    let ctx = &*ctx;
    let (k_dict, k_cont) = ctx.modes(&cells)?;
    let cfg = &ctx.cfg.response;
    let dict = sample_parameters(
        &ctx.table.eigenvalues,
        Basis::Continuum { k: k_dict },
        ctx.cfg.alpha,
        cfg.dictionary_size,
        ctx.seed(Purpose::Dictionary, 0, 0),
        cfg.decay,
    )?;
    let sampler = SignalSampler { k: k_cont, decay: cfg.decay, amplitude: 1.0 };
    let signals = sampler.sample(&ctx.table.eigenvalues, cfg.signals, ctx.seed(Purpose::Signals, 0, 0))?;
    let grid = ctx.continuum_grid(k_cont)?;
    let reference: Vec<Vec<f64>> =
        signals.par_iter().map(|u| grid.responses(u, &dict, &ctx.act)).collect::<Result<_>>()?;
    let shared = Shared { ctx, dict, signals, reference, k_cont };
    let rows: Vec<Vec<ResponseRow>> = cells.par_iter().map(|c| cell_rows(&shared, c)).collect::<Result<_>>()?;
    let hf = high_frequency(ctx, &grid, k_cont)?;
    Ok(ResponseOutput { k_dict, k_cont, rows: rows.into_iter().flatten().collect(), hf })
}
