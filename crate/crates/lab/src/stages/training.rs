//! Sparse ERM on a shared dictionary at every level against the continuum
//! problem.

use std::sync::Arc;

use manifold_gcnn::erm::{
    assemble_continuum, assemble_discrete, lift_network, make_training_set, network_from_weights, project_network,
    solve_l1, Restriction, Restrictor, SignalSampler, SolverOptions,
};
use manifold_gcnn::network::{sample_parameters, MeasureNetwork, SynthesisGrid};
use manifold_gcnn::spectral_ops::{Basis, ParameterTriple, SpectralSignal};
use manifold_gcnn::Result;
use rayon::prelude::*;
use serde::Serialize;

use crate::context::{Context, LevelCell};
use crate::seed::Purpose;

#[derive(Debug, Clone, Serialize)]
pub struct TrainRow {
    pub n: usize,
    pub seed: u64,
    pub restriction: &'static str,
    pub k_n: usize,
    pub zeta: f64,
    pub j_min: f64,
    pub j_cont: f64,
    pub j_gap: f64,
    pub support: usize,
    pub heldout_gap_max: f64,
    pub label_scale: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Per-level entry of `train_ladder.json`.
#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub n: usize,
    pub seed: u64,
    pub restriction: &'static str,
    #[serde(rename = "K_n")]
    pub k_n: usize,
    #[serde(rename = "J_min")]
    pub j_min: f64,
    pub support: usize,
    pub zeta: f64,
    pub heldout_gaps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuumReport {
    #[serde(rename = "J_min")]
    pub j_min: f64,
    pub support: usize,
    pub zeta: f64,
    pub zeta_max: f64,
    pub label_scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingOutput {
    pub primary: &'static str,
    pub k_dict: usize,
    pub k_cont: usize,
    pub continuum: ContinuumReport,
    pub levels: Vec<LevelReport>,
    #[serde(skip)]
    pub rows: Vec<TrainRow>,
}

struct Shared<'a> {
    ctx: &'a Context,
    dict: Vec<ParameterTriple>,
    set: manifold_gcnn::erm::TrainingSet,
    heldout: Vec<SpectralSignal>,
    grid: SynthesisGrid,
    reference: Vec<f64>,
    j_cont: f64,
    zeta: f64,
    k_dict: usize,
    k_cont: usize,
}

fn cell_runs(sh: &Shared<'_>, cell: &LevelCell) -> Result<Vec<(TrainRow, LevelReport)>> {
    let ctx = sh.ctx;
    let frame = &cell.frame;
    let aux = SynthesisGrid::on_aux(&ctx.table, sh.k_cont, &cell.level.plan)?;
    let basis = Basis::Continuum { k: sh.k_dict };
    let mut out = Vec::new();
    for kind in [Restriction::Projection, Restriction::Spectral] {
        let r = Restrictor::new(kind, frame, &cell.level.plan, Some(aux.clone()), ctx.cfg.convolution)?;
        let mut p = assemble_discrete(&sh.set, &sh.dict, &r, &ctx.act, ctx.cfg.training.loss)?;
        p.zeta = sh.zeta;
        let sol = solve_l1(&p, &SolverOptions::default())?;
        let net = network_from_weights(&sh.dict, &sol.omega, &sol.support, basis, ctx.cfg.alpha)?;
        let lifted = lift_network(&project_network(&net, frame)?, frame, sh.k_dict)?;
        let gaps: Vec<f64> = sh
            .heldout
            .iter()
            .zip(&sh.reference)
            .map(|(u, y)| Ok((lifted.eval(&sh.grid, u, &ctx.act)? - y).abs()))
            .collect::<Result<_>>()?;
        let row = TrainRow {
            n: cell.n,
            seed: cell.seed,
            restriction: kind.name(),
            k_n: frame.k_n,
            zeta: sh.zeta,
            j_min: sol.objective,
            j_cont: sh.j_cont,
            j_gap: (sol.objective - sh.j_cont).abs(),
            support: sol.support.len(),
            heldout_gap_max: gaps.iter().cloned().fold(0.0, f64::max),
            label_scale: sh.set.label_scale(),
            iterations: sol.iterations,
            restarts: sol.restarts,
            converged: sol.converged,
            kkt_residual: sol.kkt_residual,
        };
        let report = LevelReport {
            n: cell.n,
            seed: cell.seed,
            restriction: kind.name(),
            k_n: frame.k_n,
            j_min: sol.objective,
            support: sol.support.len(),
            zeta: sh.zeta,
            heldout_gaps: gaps,
        };
        out.push((row, report));
    }
    Ok(out)
}

pub fn run(ctx: &mut Context) -> Result<TrainingOutput> {
    let keys = ctx.ladder_keys(&ctx.cfg.training.seeds.clone());
    let cells: Vec<Arc<LevelCell>> = ctx.ensure(&keys)?;
    let ctx = &*ctx;
    let tc = &ctx.cfg.training;
    let (k_dict, k_cont) = ctx.modes(&cells)?;
    let basis = Basis::Continuum { k: k_dict };
    let eigs = &ctx.table.eigenvalues;
    let decay = ctx.cfg.response.decay;
    let dict = sample_parameters(eigs, basis, ctx.cfg.alpha, tc.dictionary_size, ctx.seed(Purpose::Dictionary, 0, 1), decay)?;
    let atoms = sample_parameters(
        eigs,
        basis,
        ctx.cfg.alpha,
        tc.teacher_weights.len(),
        ctx.seed(Purpose::Teacher, 0, 0),
        decay,
    )?;
    let mut teacher = MeasureNetwork::new(basis, ctx.cfg.alpha);
    for (w, theta) in tc.teacher_weights.iter().zip(atoms) {
        teacher.push(*w, theta)?;
    }
    let sampler = SignalSampler { k: k_cont, decay, amplitude: 1.0 };
    let grid = ctx.continuum_grid(k_cont)?;
    let set = make_training_set(&teacher, &grid, &ctx.act, eigs, &sampler, tc.l, ctx.seed(Purpose::TrainingSignals, 0, 0))?;
    let heldout = sampler.sample(eigs, tc.heldout, ctx.seed(Purpose::Heldout, 0, 0))?;

    let mut pc = assemble_continuum(&set, &dict, &grid, &ctx.act, tc.loss)?;
    let zeta_max = pc.zeta_max();
    pc.zeta = tc.zeta_rel * zeta_max;
    let sol = solve_l1(&pc, &SolverOptions::default())?;
    let net_cont = network_from_weights(&dict, &sol.omega, &sol.support, basis, ctx.cfg.alpha)?;
    let reference: Vec<f64> =
        heldout.iter().map(|u| net_cont.eval(&grid, u, &ctx.act)).collect::<Result<_>>()?;
    let continuum = ContinuumReport {
        j_min: sol.objective,
        support: sol.support.len(),
        zeta: pc.zeta,
        zeta_max,
        label_scale: set.label_scale(),
        iterations: sol.iterations,
        converged: sol.converged,
    };
    let shared = Shared {
        ctx,
        dict,
        set,
        heldout,
        grid,
        reference,
        j_cont: sol.objective,
        zeta: pc.zeta,
        k_dict,
        k_cont,
    };
    let runs: Vec<Vec<(TrainRow, LevelReport)>> =
        cells.par_iter().map(|c| cell_runs(&shared, c)).collect::<Result<_>>()?;
    let (rows, levels): (Vec<_>, Vec<_>) = runs.into_iter().flatten().unzip();
    Ok(TrainingOutput { primary: tc.restriction.name(), k_dict, k_cont, continuum, levels, rows })
}
