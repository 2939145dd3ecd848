//! One resolution level: sample, transport cells, proximity graph and the
//! low graph spectrum.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::{build_graph, KernelSpec, SparseLaplacian, WeightedGraph};
use crate::manifold::{ManifoldModel, PointCloud, SpectrumTable};
use crate::spectra::{align_blocks, lowest_eigenpairs_with, CellMoments, DiscreteSpectrum, SolverKind, SpectralFrame};
use crate::spectral_ops::LevelSpec;
use crate::transport::{balanced_cells, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `h = √ε̂` with `ε̂` from the transport plan.
    SqrtEps,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOptions {
    pub g_factor: usize,
    pub kernel: KernelSpec,
    pub bandwidth: BandwidthRule,
    /// Number of discrete eigenpairs to compute.
    pub eig_count: usize,
    pub solver: SolverKind,
}

#[derive(Debug, Clone)]
pub struct Level {
    pub n: usize,
    pub cloud: PointCloud,
    pub plan: TransportPlan,
    pub h: f64,
    pub graph: WeightedGraph,
    pub laplacian: SparseLaplacian,
    pub spectrum: DiscreteSpectrum,
}

pub fn build_level(model: &ManifoldModel, n: usize, sample_seed: u64, aux_seed: u64, opts: &LevelOptions) -> Result<Level> {
    if opts.eig_count == 0 || opts.eig_count > n {
        return Err(invalid(format!("eigenpair count {} outside 1..={n}", opts.eig_count)));
    }
    let cloud = model.sample_points(n, sample_seed)?;
    let plan = balanced_cells(&cloud, model, opts.g_factor, aux_seed)?;
    let h = match opts.bandwidth {
        BandwidthRule::SqrtEps => plan.eps_hat.sqrt(),
        BandwidthRule::Fixed(h) => h,
    };
    let graph = build_graph(&cloud, h, opts.kernel)?;
    let laplacian = graph.laplacian();
    let spectrum = lowest_eigenpairs_with(&laplacian, opts.eig_count, opts.solver)?;
    Ok(Level { n, cloud, plan, h, graph, laplacian, spectrum })
}

impl Level {
    pub fn spec(&self) -> LevelSpec {
        LevelSpec { n: self.n, h: self.h, eps_hat: self.plan.eps_hat }
    }

    /// Frame aligning the first `k_n` eigenvectors with the continuum basis.
    pub fn frame(&self, table: &SpectrumTable, k_n: usize) -> Result<SpectralFrame> {
        let moments = CellMoments::from_plan(&self.plan, table, k_n)?;
        align_blocks(&self.spectrum, &moments, table, k_n)
    }
}
