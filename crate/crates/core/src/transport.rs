//! Balanced transport cells between the point cloud and an auxiliary sample
//! of `μ`, with the induced maps `P_n` (cell averages) and `P_n*` (step
//! functions).

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{invalid, GcnnError, Result};
use crate::manifold::{ManifoldModel, PointCloud};

/// Capacity-constrained assignment of `G = g_factor·n` auxiliary points to
/// the `n` cloud points, `g_factor` per center.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub n: usize,
    pub aux: PointCloud,
    /// Center index of every auxiliary point.
    pub assignment: Vec<usize>,
    /// Auxiliary indices of every cell, sorted.
    pub cells: Vec<Vec<usize>>,
    /// Largest geodesic distance between an auxiliary point and its center.
    pub eps_hat: f64,
    pub max_cell_diam: f64,
    pub diagnostics: TransportDiagnostics,
    centers: PointCloud,
    manifold: ManifoldModel,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransportDiagnostics {
    /// Threshold at which the greedy fill completed, and the auxiliary
    /// points the greedy pass itself left unassigned.
    pub fill_threshold: f64,
    pub greedy_unassigned: usize,
    /// Maximal assigned distance after the fill.
    pub fill_eps: f64,
    /// Largest threshold shown infeasible; the bottleneck optimum on the
    /// auxiliary sample lies in `(infeasible_below, eps_hat]`.
    pub infeasible_below: f64,
    /// Bisection steps taken after the fill.
    pub bisection_steps: usize,
}

/// Report summary `{n, G, eps_hat, max_cell_diam}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlanSummary {
    pub n: usize,
    #[serde(rename = "G")]
    pub g: usize,
    pub eps_hat: f64,
    pub max_cell_diam: f64,
}

struct Grid {
    cell: f64,
    dim: usize,
    buckets: HashMap<[i64; 4], Vec<usize>>,
}

impl Grid {
    fn new(points: &PointCloud, cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, dim: points.dim, buckets }
    }

    fn key(p: &[f64], cell: f64) -> [i64; 4] {
        let mut k = [0i64; 4];
        for (d, v) in p.iter().enumerate() {
            k[d] = (v / cell).floor() as i64;
        }
        k
    }

    /// Indices in the grid cells adjacent to the cell of `p`.
    fn near(&self, p: &[f64], out: &mut Vec<usize>) {
        out.clear();
        let k = Self::key(p, self.cell);
        for code in 0..3usize.pow(self.dim as u32) {
            let mut c = k;
            let mut code = code;
            for slot in c.iter_mut().take(self.dim) {
                *slot += (code % 3) as i64 - 1;
                code /= 3;
            }
            if let Some(v) = self.buckets.get(&c) {
                out.extend_from_slice(v);
            }
        }
    }
}

const FREE: u32 = u32::MAX;

/// Candidate centers of every auxiliary point within a radius, sorted by
/// geodesic distance.
struct Candidates {
    start: Vec<usize>,
    center: Vec<u32>,
    dist: Vec<f64>,
}

impl Candidates {
    fn build(aux: &PointCloud, cloud: &PointCloud, manifold: &ManifoldModel, radius: f64) -> Self {
        // chord length never exceeds geodesic length on the supported manifolds
        let grid = Grid::new(cloud, radius);
        let mut start = Vec::with_capacity(aux.len() + 1);
        let mut center = Vec::new();
        let mut dist = Vec::new();
        let mut near = Vec::new();
        let mut row: Vec<(f64, u32)> = Vec::new();
        start.push(0);
        for p in aux.iter() {
            grid.near(p, &mut near);
            row.clear();
            for &c in &near {
                let d = manifold.geodesic_unchecked(p, cloud.point(c));
                if d <= radius {
                    row.push((d, c as u32));
                }
            }
            row.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            center.extend(row.iter().map(|r| r.1));
            dist.extend(row.iter().map(|r| r.0));
            start.push(center.len());
        }
        Self { start, center, dist }
    }

    fn edges(&self, a: usize) -> std::ops::Range<usize> {
        self.start[a]..self.start[a + 1]
    }
}

/// Capacity-constrained assignment state plus, for every center `c`, the
/// cheapest move of one of its members to each other candidate center.
#[derive(Clone)]
struct Matching {
    cap: usize,
    assign: Vec<u32>,
    assign_d: Vec<f64>,
    members: Vec<Vec<u32>>,
    slot: Vec<u32>,
    /// `(target, distance, member)`, one entry per target within `limit`.
    out: Vec<Vec<(u32, f64, u32)>>,
    /// Centers whose `out` list must be rebuilt before use.
    dirty: Vec<bool>,
    limit: f64,
}

impl Matching {
    fn empty(g: usize, n: usize, cap: usize) -> Self {
        Self {
            cap,
            assign: vec![FREE; g],
            assign_d: vec![f64::INFINITY; g],
            members: vec![Vec::with_capacity(cap); n],
            slot: vec![0; g],
            out: vec![Vec::new(); n],
            dirty: vec![true; n],
            limit: 0.0,
        }
    }

    fn unassign(&mut self, a: usize) {
        let c = self.assign[a];
        if c == FREE {
            return;
        }
        let list = &mut self.members[c as usize];
        let pos = self.slot[a] as usize;
        list.swap_remove(pos);
        if pos < list.len() {
            let moved = list[pos] as usize;
            self.slot[moved] = pos as u32;
        }
        self.assign[a] = FREE;
        self.assign_d[a] = f64::INFINITY;
        self.dirty[c as usize] = true;
    }

    fn assign_to(&mut self, a: usize, c: u32, d: f64) {
        self.unassign(a);
        self.slot[a] = self.members[c as usize].len() as u32;
        self.members[c as usize].push(a as u32);
        self.assign[a] = c;
        self.assign_d[a] = d;
        self.dirty[c as usize] = true;
    }

    fn set_limit(&mut self, limit: f64) {
        self.limit = limit;
        self.dirty.iter_mut().for_each(|d| *d = true);
    }

    fn rebuild_out(&mut self, c: usize, cand: &Candidates, pos: &mut [u32]) {
        let mut out = std::mem::take(&mut self.out[c]);
        out.clear();
        for &y in &self.members[c] {
            for e in cand.edges(y as usize) {
                let t = cand.center[e];
                let d = cand.dist[e];
                if d > self.limit {
                    break;
                }
                if t as usize == c {
                    continue;
                }
                let p = pos[t as usize] as usize;
                if p < out.len() && out[p].0 == t {
                    if d < out[p].1 || (d == out[p].1 && y < out[p].2) {
                        out[p] = (t, d, y);
                    }
                } else {
                    pos[t as usize] = out.len() as u32;
                    out.push((t, d, y));
                }
            }
        }
        self.out[c] = out;
        self.dirty[c] = false;
    }
}

/// Breadth-first search over centers for a chain of moves that places the
/// free auxiliary point `a` and ends at a center with spare capacity; every
/// move has length at most `bound` (strictly below it when `strict`).
struct ChainSearch {
    stamp: Vec<u32>,
    round: u32,
    /// `(previous center or FREE, mover, edge distance)` that enters a center.
    parent: Vec<(u32, u32, f64)>,
    queue: Vec<usize>,
    pos: Vec<u32>,
}

impl ChainSearch {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            round: 0,
            parent: vec![(FREE, 0, 0.0); n],
            queue: Vec::new(),
            pos: vec![0; n],
        }
    }

    fn place(&mut self, m: &mut Matching, cand: &Candidates, a: usize, bound: f64, strict: bool) -> bool {
        let ok = |d: f64| if strict { d < bound } else { d <= bound };
        self.round += 1;
        let round = self.round;
        self.queue.clear();
        let mut target = None;
        for e in cand.edges(a) {
            let d = cand.dist[e];
            if !ok(d) {
                break;
            }
            let c = cand.center[e] as usize;
            if self.stamp[c] == round {
                continue;
            }
            self.stamp[c] = round;
            self.parent[c] = (FREE, a as u32, d);
            if m.members[c].len() < m.cap {
                target = Some(c);
                break;
            }
            self.queue.push(c);
        }
        let mut head = 0;
        while target.is_none() && head < self.queue.len() {
            let c = self.queue[head];
            head += 1;
            if m.dirty[c] {
                m.rebuild_out(c, cand, &mut self.pos);
            }
            for &(t, d, y) in &m.out[c] {
                let t = t as usize;
                if !ok(d) || self.stamp[t] == round {
                    continue;
                }
                self.stamp[t] = round;
                self.parent[t] = (c as u32, y, d);
                if m.members[t].len() < m.cap {
                    target = Some(t);
                    break;
                }
                self.queue.push(t);
            }
        }
        let Some(mut c) = target else {
            return false;
        };
        loop {
            let (prev, mover, d) = self.parent[c];
            m.assign_to(mover as usize, c as u32, d);
            if prev == FREE {
                break;
            }
            c = prev as usize;
        }
        true
    }
}

/// Relative width of the final bracket around the bottleneck optimum.
const BRACKET_TOL: f64 = 0.01;

/// Greedy fill by globally sorted geodesic distance under capacities, with
/// leftovers placed by augmenting chains under a threshold raised
/// geometrically from the covering radius; the maximal assigned distance is
/// then lowered by bisection, each step reassigning every pair above the
/// midpoint through chains of moves no longer than it.
pub fn balanced_cells(
    cloud: &PointCloud,
    manifold: &ManifoldModel,
    g_factor: usize,
    seed: u64,
) -> Result<TransportPlan> {
    if g_factor < 16 {
        return Err(invalid(format!("g_factor must be at least 16, got {g_factor}")));
    }
    let n = cloud.len();
    if n == 0 {
        return Err(invalid("empty cloud"));
    }
    let g = g_factor * n;
    let aux = manifold.sample_points(g, seed)?;
    let cap = g_factor;
    let diameter = manifold.injectivity_radius * 2.0f64.sqrt() * manifold.m as f64;
    let ceiling = diameter * 1.01;

    let covering = covering_radius(&aux, cloud, manifold, diameter).max(1e-12);
    let mut t = covering;
    let mut radius = (1.5 * t).min(ceiling);
    let mut cand = Candidates::build(&aux, cloud, manifold, radius);
    let mut search = ChainSearch::new(n);
    let mut m = Matching::empty(g, n, cap);
    let mut pairs: Vec<(f64, u32, u32)> = Vec::new();
    for a in 0..g {
        for e in cand.edges(a) {
            if cand.dist[e] > t {
                break;
            }
            pairs.push((cand.dist[e], a as u32, cand.center[e]));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for &(d, a, c) in &pairs {
        if m.assign[a as usize] == FREE && m.members[c as usize].len() < cap {
            m.assign_to(a as usize, c, d);
        }
    }
    drop(pairs);
    m.set_limit(t);
    let mut free: Vec<usize> = (0..g).filter(|&a| m.assign[a] == FREE).collect();
    let greedy_unassigned = free.len();
    let mut infeasible_below = 0.0;
    let mut next = 0;
    while next < free.len() {
        if search.place(&mut m, &cand, free[next], t, false) {
            next += 1;
            continue;
        }
        if t >= ceiling {
            return Err(GcnnError::NumericalFailure(
                "no balanced assignment within the manifold diameter".into(),
            ));
        }
        infeasible_below = t;
        t = (1.25 * t).min(ceiling);
        if t > radius {
            radius = (1.5 * t).min(ceiling);
            cand = Candidates::build(&aux, cloud, manifold, radius);
        }
        m.set_limit(t);
    }
    free.clear();
    let fill_threshold = t;
    let fill_eps = max_assigned(&m);

    let mut hi = fill_eps;
    let mut bisection_steps = 0;
    while hi - infeasible_below > BRACKET_TOL * hi {
        bisection_steps += 1;
        let mid = 0.5 * (infeasible_below + hi);
        let snapshot = m.clone();
        let lifted: Vec<usize> = (0..g).filter(|&a| m.assign_d[a] > mid).collect();
        for &a in &lifted {
            m.unassign(a);
        }
        if lifted.iter().all(|&a| search.place(&mut m, &cand, a, mid, false)) {
            hi = max_assigned(&m);
        } else {
            m = snapshot;
            infeasible_below = mid;
        }
    }
    let eps_hat = max_assigned(&m);

    let assignment: Vec<usize> = m.assign.iter().map(|&c| c as usize).collect();
    let mut cells: Vec<Vec<usize>> = m
        .members
        .iter()
        .map(|list| list.iter().map(|&a| a as usize).collect())
        .collect();
    cells.iter_mut().for_each(|c| c.sort_unstable());
    let max_cell_diam = cells
        .iter()
        .map(|cell| {
            let mut m: f64 = 0.0;
            for (i, &p) in cell.iter().enumerate() {
                for &q in &cell[i + 1..] {
                    m = m.max(manifold.geodesic_unchecked(aux.point(p), aux.point(q)));
                }
            }
            m
        })
        .fold(0.0, f64::max);
    Ok(TransportPlan {
        n,
        aux,
        assignment,
        cells,
        eps_hat,
        max_cell_diam,
        diagnostics: TransportDiagnostics {
            fill_threshold,
            greedy_unassigned,
            fill_eps,
            infeasible_below,
            bisection_steps,
        },
        centers: cloud.clone(),
        manifold: *manifold,
    })
}

fn max_assigned(m: &Matching) -> f64 {
    m.assign_d.iter().cloned().fold(0.0, f64::max)
}

/// Largest distance from an auxiliary point to its nearest center.
fn covering_radius(aux: &PointCloud, cloud: &PointCloud, manifold: &ManifoldModel, diameter: f64) -> f64 {
    let omega = if manifold.m == 1 { 2.0 } else { std::f64::consts::PI };
    let mut r = (2.0 * manifold.volume / (omega * cloud.len() as f64)).powf(1.0 / manifold.m as f64);
    let mut near = Vec::new();
    loop {
        let grid = Grid::new(cloud, r);
        let mut worst: f64 = 0.0;
        let mut all = true;
        for p in aux.iter() {
            grid.near(p, &mut near);
            let d = near
                .iter()
                .map(|&c| manifold.geodesic_unchecked(p, cloud.point(c)))
                .fold(f64::INFINITY, f64::min);
            if d > r {
                all = false;
                break;
            }
            worst = worst.max(d);
        }
        if all || r > diameter {
            return worst;
        }
        r *= 2.0;
    }
}

impl TransportPlan {
    /// Number of auxiliary points `G`.
    pub fn g(&self) -> usize {
        self.aux.len()
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary { n: self.n, g: self.g(), eps_hat: self.eps_hat, max_cell_diam: self.max_cell_diam }
    }

    /// `P_n`: cell means of values given on the auxiliary points.
    pub fn discretize(&self, aux_values: &[f64]) -> Vec<f64> {
        self.cells
            .iter()
            .map(|cell| cell.iter().map(|&a| aux_values[a]).sum::<f64>() / cell.len() as f64)
            .collect()
    }

    /// `P_n*`: step function values on the auxiliary points.
    pub fn extend(&self, v: &[f64]) -> Vec<f64> {
        self.assignment.iter().map(|&c| v[c]).collect()
    }

    /// `∫ f g dμ` with the auxiliary sample as equal-weight quadrature.
    pub fn aux_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
    }

    /// `‖u − P_n* v‖_{L²(μ)}` on the auxiliary grid.
    pub fn tl2_distance(&self, u_aux: &[f64], v: &[f64]) -> f64 {
        let s: f64 = u_aux
            .iter()
            .zip(&self.assignment)
            .map(|(u, &c)| (u - v[c]) * (u - v[c]))
            .sum();
        (s / u_aux.len() as f64).sqrt()
    }

    /// Step function value at an arbitrary point. Points outside the auxiliary
    /// set fall back to the nearest center; the flag reports the fallback.
    pub fn extension_at(&self, v: &[f64], x: &[f64]) -> (f64, bool) {
        if let Some(a) = self.aux.iter().position(|p| p == x) {
            return (v[self.assignment[a]], false);
        }
        let c = (0..self.n)
            .min_by(|&i, &j| {
                let di = self.manifold.geodesic_unchecked(x, self.centers.point(i));
                let dj = self.manifold.geodesic_unchecked(x, self.centers.point(j));
                di.total_cmp(&dj)
            })
            .expect("nonempty plan");
        (v[c], true)
    }
}
