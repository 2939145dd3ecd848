//! Combined-spectrum gap arithmetic for products of spheres.

use manifold_gcnn::manifold::{product_sphere_gap_scan, GapReport};
use manifold_gcnn::Result;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    /// Always 0: the scan is resolution-free.
    pub n: usize,
    pub seed: u64,
    pub a_sq_inv: f64,
    pub lambda_max: f64,
    pub distinct_values: usize,
    pub min_gap: f64,
    pub min_pair_i1: usize,
    pub min_pair_j1: usize,
    pub min_pair_i2: usize,
    pub min_pair_j2: usize,
    pub family_i: usize,
    pub family_j: usize,
    pub family_gap: f64,
}

#[derive(Debug, Clone)]
pub struct GapOutput {
    pub rows: Vec<GapRow>,
    pub reports: Vec<GapReport>,
}

pub fn scan(values: &[f64], lambda_max: f64, seed: u64) -> Result<GapOutput> {
    let reports: Vec<GapReport> = values.iter().map(|&a| product_sphere_gap_scan(a, lambda_max)).collect::<Result<_>>()?;
    let rows = reports
        .iter()
        .map(|r| GapRow {
            n: 0,
            seed,
            a_sq_inv: r.a_sq_inv,
            lambda_max: r.lambda_max,
            distinct_values: r.distinct_values,
            min_gap: r.min_gap,
            min_pair_i1: r.min_gap_pairs[0].0,
            min_pair_j1: r.min_gap_pairs[0].1,
            min_pair_i2: r.min_gap_pairs[1].0,
            min_pair_j2: r.min_gap_pairs[1].1,
            family_i: r.family_min.i,
            family_j: r.family_min.j,
            family_gap: r.family_min.gap,
        })
        .collect();
    Ok(GapOutput { rows, reports })
}
