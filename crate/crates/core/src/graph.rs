//! Kernel-weighted proximity graphs and the unnormalized graph Laplacian.

use std::collections::HashMap;

use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GcnnError, Result};
use crate::manifold::PointCloud;

/// Radial profile of the interaction kernel `η`, supported on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    #[default]
    Indicator,
    /// `η(t) = c (1 − t)`.
    Triangle,
}

/// Normalized kernel in intrinsic dimension `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub m: usize,
    /// `c_η` such that `∫_{ℝ^m} η(|x|) dx = 1`.
    pub normalization: f64,
    /// `σ_η = ∫ |x·e_1|² η(|x|) dx`.
    pub surface_tension: f64,
}

impl KernelSpec {
    pub fn new(shape: KernelShape, m: usize) -> Result<Self> {
        let normalization = normalization_constant(shape, m)?;
        Ok(Self { shape, m, normalization, surface_tension: surface_tension(shape, m)? })
    }

    /// `η(t)` including the normalization constant.
    pub fn eval(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self.shape {
            KernelShape::Indicator => self.normalization,
            KernelShape::Triangle => self.normalization * (1.0 - t),
        }
    }
}

fn normalization_constant(shape: KernelShape, m: usize) -> Result<f64> {
    use std::f64::consts::PI;
    match (shape, m) {
        (KernelShape::Indicator, 1) => Ok(0.5),
        (KernelShape::Indicator, 2) => Ok(1.0 / PI),
        (KernelShape::Triangle, 1) => Ok(1.0),
        (KernelShape::Triangle, 2) => Ok(3.0 / PI),
        _ => Err(invalid(format!("unsupported intrinsic dimension {m}"))),
    }
}

/// Closed-form `σ_η` of the normalized kernel.
pub fn surface_tension(shape: KernelShape, m: usize) -> Result<f64> {
    match (shape, m) {
        (KernelShape::Indicator, 1) => Ok(1.0 / 3.0),
        (KernelShape::Indicator, 2) => Ok(0.25),
        (KernelShape::Triangle, 1) => Ok(1.0 / 6.0),
        (KernelShape::Triangle, 2) => Ok(3.0 / 20.0),
        _ => Err(invalid(format!("unsupported intrinsic dimension {m}"))),
    }
}

/// Symmetric sparse weights `w_ij = η(|x_i − x_j|/h) / (n h^m)` in compressed rows,
/// off-diagonal entries only.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub kernel: KernelSpec,
    /// Self weight `η(0)/(n h^m)`; never enters Laplacian differences.
    pub self_weight: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl WeightedGraph {
    /// Neighbors and weights of vertex `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// Off-diagonal weight `w_ij` (zero when absent).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.self_weight;
        }
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(pos) => self.vals[r.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn average_degree(&self) -> f64 {
        self.nnz() as f64 / self.n as f64
    }

    /// Upper-triangular triplets `(i, j, w)` with `i < j`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).filter(move |&(j, _)| j > i).map(move |(j, w)| (i, j, w)))
            .collect()
    }

    /// Debug dump `{n, h, triplets}`.
    pub fn debug_json(&self) -> serde_json::Value {
        serde_json::json!({ "n": self.n, "h": self.h, "triplets": self.triplets() })
    }

    /// True iff the positive-weight graph is connected.
    pub fn is_connected(&self) -> bool {
        self.component_count() <= 1
    }

    /// Number of connected components (union-find).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut comps = self.n;
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                if w > 0.0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                        comps -= 1;
                    }
                }
            }
        }
        comps
    }

    /// Unnormalized graph Laplacian `(2/(σ_η h²)) (D − W)`.
    pub fn laplacian(&self) -> SparseLaplacian {
        self.laplacian_with(self.kernel.surface_tension)
    }

    pub fn laplacian_with(&self, sigma: f64) -> SparseLaplacian {
        let scale = 2.0 / (sigma * self.h * self.h);
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::with_capacity(self.nnz() + self.n);
        let mut vals = Vec::with_capacity(self.nnz() + self.n);
        row_ptr.push(0);
        for i in 0..self.n {
            let degree: f64 = self.row(i).map(|(_, w)| w).sum();
            let mut diag_done = false;
            for (j, w) in self.row(i) {
                if !diag_done && j > i {
                    cols.push(i);
                    vals.push(scale * degree);
                    diag_done = true;
                }
                cols.push(j);
                vals.push(-scale * w);
            }
            if !diag_done {
                cols.push(i);
                vals.push(scale * degree);
            }
            row_ptr.push(cols.len());
        }
        SparseLaplacian { n: self.n, row_ptr, cols, vals }
    }
}

/// Builds the proximity graph with a cell-list neighbor search on Euclidean
/// ambient distances.
pub fn build_graph(cloud: &PointCloud, h: f64, kernel: KernelSpec) -> Result<WeightedGraph> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("bandwidth must be positive, got {h}")));
    }
    let n = cloud.len();
    let dim = cloud.dim;
    if dim > 4 {
        return Err(invalid("ambient dimension above 4 is not supported"));
    }
    let scale = 1.0 / (n as f64 * h.powi(kernel.m as i32));
    let key = |p: &[f64]| {
        let mut k = [0i64; 4];
        for (d, v) in p.iter().enumerate() {
            k[d] = (v / h).floor() as i64;
        }
        k
    };
    let mut cells: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    let offsets: Vec<[i64; 4]> = (0..3usize.pow(dim as u32))
        .map(|mut code| {
            let mut o = [0i64; 4];
            for slot in o.iter_mut().take(dim) {
                *slot = (code % 3) as i64 - 1;
                code /= 3;
            }
            o
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    let mut nbrs: Vec<(usize, f64)> = Vec::new();
    for (i, p) in cloud.iter().enumerate() {
        let k = key(p);
        nbrs.clear();
        for o in &offsets {
            let c = [k[0] + o[0], k[1] + o[1], k[2] + o[2], k[3] + o[3]];
            if let Some(members) = cells.get(&c) {
                for &j in members {
                    if j == i {
                        continue;
                    }
                    let q = cloud.point(j);
                    let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    let t = d2.sqrt() / h;
                    let w = kernel.eval(t);
                    if w > 0.0 {
                        nbrs.push((j, w * scale));
                    }
                }
            }
        }
        nbrs.sort_by_key(|e| e.0);
        for &(j, w) in &nbrs {
            cols.push(j);
            vals.push(w);
        }
        row_ptr.push(cols.len());
    }
    Ok(WeightedGraph {
        n,
        m: kernel.m,
        h,
        kernel,
        self_weight: kernel.eval(0.0) * scale,
        row_ptr,
        cols,
        vals,
    })
}

/// Symmetric positive semidefinite sparse matrix in compressed rows.
#[derive(Debug, Clone)]
pub struct SparseLaplacian {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseLaplacian {
    /// `Δ_n v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1]).map(|e| self.vals[e] * v[self.cols[e]]).sum()
            })
            .collect()
    }

    /// Row sums (zero up to rounding).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&e| self.cols[e] == i)
                    .map_or(0.0, |e| self.vals[e])
            })
            .collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[e])] = self.vals[e];
            }
        }
        m
    }

    /// `Δ_n + shift·I` as a faer sparse matrix (lower triangle only).
    pub fn shifted_lower(&self, shift: f64) -> Result<SparseColMat<usize, f64>> {
        let mut trip = Vec::with_capacity(self.vals.len() / 2 + self.n);
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[e];
                if j < i {
                    trip.push(Triplet::new(i, j, self.vals[e]));
                } else if j == i {
                    trip.push(Triplet::new(i, i, self.vals[e] + shift));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| GcnnError::NumericalFailure(format!("sparse assembly: {e:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete_cloud(n: usize) -> PointCloud {
        // points on a tiny arc so that all pairwise distances are below 1
        let coords = (0..n).flat_map(|i| [0.1 * i as f64 / n as f64, 0.0]).collect();
        PointCloud::new(2, coords).unwrap()
    }

    #[test]
    fn surface_tension_closed_forms() {
        assert!((surface_tension(KernelShape::Indicator, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((surface_tension(KernelShape::Indicator, 2).unwrap() - 0.25).abs() < 1e-15);
        assert!(surface_tension(KernelShape::Indicator, 3).is_err());
        // midpoint-rule oracle for the triangle kernel in one dimension
        let steps = 200_000;
        let mut acc = 0.0;
        for s in 0..steps {
            let x = -1.0 + (s as f64 + 0.5) * 2.0 / steps as f64;
            acc += x * x * (1.0 - x.abs()) * 2.0 / steps as f64;
        }
        let tri = surface_tension(KernelShape::Triangle, 1).unwrap();
        assert!((tri - 1.0 / 6.0).abs() < 1e-15);
        assert!((acc - tri).abs() < 1e-9);
    }

    #[test]
    fn triangle_disk_moments_by_quadrature() {
        let k = KernelSpec::new(KernelShape::Triangle, 2).unwrap();
        let steps = 4000;
        let (mut mass, mut second) = (0.0, 0.0);
        for s in 0..steps {
            let r = (s as f64 + 0.5) / steps as f64;
            let ring = 2.0 * std::f64::consts::PI * r / steps as f64;
            mass += k.eval(r) * ring;
            second += k.eval(r) * r * r * 0.5 * ring;
        }
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((second - k.surface_tension).abs() < 1e-6);
    }

    #[test]
    fn three_point_complete_graph() {
        let k = KernelSpec::new(KernelShape::Indicator, 1).unwrap();
        let g = build_graph(&complete_cloud(3), 1.0, k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((g.weight(i, j) - 1.0 / 6.0).abs() < 1e-15);
                }
            }
        }
        let lap = g.laplacian();
        let v = lap.apply(&[1.0, 0.0, 0.0]);
        assert!((v[0] - 2.0).abs() < 1e-14);
        let c = lap.apply(&[1.0; 3]);
        assert!(c.iter().all(|x| x.abs() < 1e-14));
        let eig = lap.to_dense().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let expect = [0.0, 3.0, 3.0];
        for (a, b) in eig.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn far_points_disconnected() {
        let k = KernelSpec::new(KernelShape::Indicator, 1).unwrap();
        let cloud = PointCloud::new(2, vec![0.0, 0.0, 0.1, 0.0, 5.0, 0.0, 5.1, 0.0]).unwrap();
        let g = build_graph(&cloud, 0.5, k).unwrap();
        assert_eq!(g.weight(0, 2), 0.0);
        assert!(!g.is_connected());
        assert_eq!(g.component_count(), 2);
        let single = PointCloud::new(2, vec![0.0, 0.0]).unwrap();
        assert!(build_graph(&single, 0.5, k).unwrap().is_connected());
    }

    #[test]
    fn duplicated_cloud_halves_weights() {
        let k = KernelSpec::new(KernelShape::Indicator, 1).unwrap();
        let base = complete_cloud(3);
        let mut dup = base.coords.clone();
        dup.extend(base.coords.iter().map(|v| v + 1e-3));
        let g1 = build_graph(&base, 1.0, k).unwrap();
        let g2 = build_graph(&PointCloud::new(2, dup).unwrap(), 1.0, k).unwrap();
        assert!((g2.weight(0, 1) - g1.weight(0, 1) / 2.0).abs() < 1e-15);
    }
}
