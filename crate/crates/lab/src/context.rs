//! Shared state of a run: the continuum model and a cache of built levels.

use std::collections::BTreeMap;
use std::sync::Arc;

use manifold_gcnn::graph::KernelSpec;
use manifold_gcnn::manifold::{ManifoldModel, SpectrumTable};
use manifold_gcnn::network::{Activation, SynthesisGrid};
use manifold_gcnn::pipeline::{build_level, BandwidthRule, Level, LevelOptions};
use manifold_gcnn::spectra::{align_blocks, CellMoments, SpectralFrame};
use manifold_gcnn::spectral_ops::{cutoff_schedule, fixed_cutoff_schedule, CutoffRecord};
use manifold_gcnn::{GcnnError, Result};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, HRule};
use crate::seed::{mix, Purpose};

/// One built `(n, seed)` level with its cutoff and aligned frame.
#[derive(Debug)]
pub struct LevelCell {
    pub n: usize,
    pub seed: u64,
    pub level: Level,
    pub cutoff: CutoffRecord,
    pub warnings: Vec<String>,
    pub moments: CellMoments,
    pub frame: SpectralFrame,
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub model: ManifoldModel,
    pub table: SpectrumTable,
    pub act: Activation,
    cells: BTreeMap<(usize, u64), Arc<LevelCell>>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let model = ManifoldModel::new(cfg.manifold)?;
        let count = (4 * cfg.eig_count + 8).max(cfg.cutoff.k_cont.unwrap_or(0));
        let table = model.continuum_spectrum(count);
        let act = Activation::new(cfg.activation);
        Ok(Self { cfg, model, table, act, cells: BTreeMap::new() })
    }

    pub fn seed(&self, purpose: Purpose, n: usize, rep: u64) -> u64 {
        mix(self.cfg.master_seed, purpose, n, rep)
    }

    fn bandwidth(&self, n: usize) -> BandwidthRule {
        match &self.cfg.h_rule {
            HRule::SqrtEps => BandwidthRule::SqrtEps,
            HRule::Explicit { values } => match self.cfg.ladder.iter().position(|&m| m == n) {
                Some(i) => BandwidthRule::Fixed(values[i]),
                None => BandwidthRule::SqrtEps,
            },
        }
    }

    fn build(&self, n: usize, seed: u64) -> Result<LevelCell> {
        let opts = LevelOptions {
            g_factor: self.cfg.g_factor,
            kernel: KernelSpec::new(self.cfg.kernel, self.model.m)?,
            bandwidth: self.bandwidth(n),
            eig_count: self.cfg.eig_count,
            solver: self.cfg.solver,
        };
        let level = build_level(
            &self.model,
            n,
            self.seed(Purpose::Sample, n, seed),
            self.seed(Purpose::Aux, n, seed),
            &opts,
        )?;
        let spec = [level.spec()];
        let schedule = match self.cfg.cutoff.k_tilde {
            Some(k) => fixed_cutoff_schedule(&spec, &self.model, k, &self.table)?,
            None => cutoff_schedule(&spec, &self.model, self.table.beta_star, &self.table)?,
        };
        let cutoff = schedule.records[0];
        if cutoff.k_n > self.cfg.eig_count {
            return Err(GcnnError::InvalidState(format!(
                "K(n) = {} at n = {n} exceeds eig_count = {}",
                cutoff.k_n, self.cfg.eig_count
            )));
        }
        let warnings = schedule.warnings.iter().map(|w| format!("n={n} seed={seed}: {w}")).collect();
        let moments = CellMoments::from_plan(&level.plan, &self.table, cutoff.k_n)?;
        let frame = align_blocks(&level.spectrum, &moments, &self.table, cutoff.k_n)?;
        Ok(LevelCell { n, seed, level, cutoff, warnings, moments, frame })
    }

    /// Builds every missing `(n, seed)` cell, independent cells in parallel.
    pub fn ensure(&mut self, keys: &[(usize, u64)]) -> Result<Vec<Arc<LevelCell>>> {
        let mut missing: Vec<(usize, u64)> = keys.iter().copied().filter(|k| !self.cells.contains_key(k)).collect();
        missing.sort();
        missing.dedup();
        let built: Vec<LevelCell> = {
            let this = &*self;
            missing.par_iter().map(|&(n, s)| this.build(n, s)).collect::<Result<_>>()?
        };
        for cell in built {
            self.cells.insert((cell.n, cell.seed), Arc::new(cell));
        }
        Ok(keys.iter().map(|k| Arc::clone(&self.cells[k])).collect())
    }

    /// Ladder cells ordered by `(n, seed)`.
    pub fn ladder_keys(&self, seeds: &[u64]) -> Vec<(usize, u64)> {
        self.cfg.ladder.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect()
    }

    /// Warnings of all built cells in `(n, seed)` order.
    pub fn warnings(&self) -> Vec<String> {
        self.cells.values().flat_map(|c| c.warnings.iter().cloned()).collect()
    }

    /// Frequency window shared by a set of cells: dictionary modes `K`
    /// (smallest `K(n)`) and signal modes `K_cont`.
    pub fn modes(&self, cells: &[Arc<LevelCell>]) -> Result<(usize, usize)> {
        let k = cells.iter().map(|c| c.cutoff.k_n).min().unwrap_or(1);
        let k_max = cells.iter().map(|c| c.cutoff.k_n).max().unwrap_or(1);
        let k_cont = match self.cfg.cutoff.k_cont {
            Some(kc) => self.table.block_end(kc)?,
            None => self.table.block_end(4 * k_max)?,
        };
        if k_cont < k_max {
            return Err(GcnnError::InvalidArgument(format!("k_cont = {k_cont} below K(n) = {k_max}")));
        }
        Ok((k, k_cont))
    }

    /// Continuum synthesis grid on the default quadrature.
    pub fn continuum_grid(&self, k: usize) -> Result<SynthesisGrid> {
        SynthesisGrid::continuum(&self.table, k, &self.model.default_quadrature())
    }
}
