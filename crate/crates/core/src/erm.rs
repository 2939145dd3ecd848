//! Regularized empirical risk over dictionary-supported measures.
//!
//! Minimizers are sought among finite signed measures on a fixed dictionary
//! of parameter triples, so the TV norm becomes the `ℓ1` norm of the atom
//! weights and the problem is a LASSO in the feature matrix
//! `Ψ[k, d] = ψ(u_k, θ_d)`.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GcnnError, Result};
use crate::network::{Activation, ConvolutionBasis, MeasureNetwork, SynthesisGrid};
use crate::spectra::SpectralFrame;
use crate::spectral_ops::{param_extend, param_project, spectral_discretize, Basis, ParameterTriple, SpectralSignal};
use crate::transport::TransportPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Squared,
    Logistic,
}

impl Loss {
    pub fn value(self, f: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => (f - y).powi(2),
            Loss::Logistic => softplus(-y * f),
        }
    }

    /// `∂ℓ/∂f`.
    pub fn derivative(self, f: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => 2.0 * (f - y),
            Loss::Logistic => -y / (1.0 + (y * f).exp()),
        }
    }

    /// Lipschitz constant of `∂ℓ/∂f` for labels bounded by `y_max`.
    fn curvature(self, y_max: f64) -> f64 {
        match self {
            Loss::Squared => 2.0,
            Loss::Logistic => 0.25 * y_max * y_max,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Random continuum signals with per-mode scale `amplitude·(1 + √λ_k)^{−decay}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSampler {
    pub k: usize,
    pub decay: f64,
    pub amplitude: f64,
}

impl SignalSampler {
    pub fn sample(&self, eigenvalues: &[f64], count: usize, seed: u64) -> Result<Vec<SpectralSignal>> {
        if eigenvalues.len() < self.k {
            return Err(GcnnError::OutOfRange { index: self.k, len: eigenvalues.len() });
        }
        let scale: Vec<f64> =
            eigenvalues[..self.k].iter().map(|&l| self.amplitude * (1.0 + l.max(0.0).sqrt()).powf(-self.decay)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let coeffs = scale
                    .iter()
                    .map(|s| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        s * z
                    })
                    .collect();
                SpectralSignal::new(Basis::Continuum { k: self.k }, coeffs)
            })
            .collect()
    }
}

/// Continuum training pairs `(u_k, y_k = g(u_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub signals: Vec<SpectralSignal>,
    pub labels: Vec<f64>,
    /// JSON description of the teacher `g`.
    pub teacher: serde_json::Value,
}

impl TrainingSet {
    pub fn new(signals: Vec<SpectralSignal>, labels: Vec<f64>, teacher: serde_json::Value) -> Result<Self> {
        if signals.is_empty() {
            return Err(invalid("training set needs at least one pair"));
        }
        if signals.len() != labels.len() {
            return Err(invalid(format!("{} signals but {} labels", signals.len(), labels.len())));
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(invalid("labels must be finite"));
        }
        Ok(Self { signals, labels, teacher })
    }

    pub fn l(&self) -> usize {
        self.signals.len()
    }

    pub fn label_scale(&self) -> f64 {
        self.labels.iter().fold(0.0, |m, y| m.max(y.abs()))
    }
}

/// Labels a fresh signal sample with a teacher network evaluated in the continuum.
pub fn make_training_set(
    teacher: &MeasureNetwork,
    grid: &SynthesisGrid,
    act: &Activation,
    eigenvalues: &[f64],
    sampler: &SignalSampler,
    l: usize,
    seed: u64,
) -> Result<TrainingSet> {
    if l == 0 {
        return Err(invalid("l must be at least 1"));
    }
    let signals = sampler.sample(eigenvalues, l, seed)?;
    let labels = signals.iter().map(|u| teacher.eval(grid, u, act)).collect::<Result<Vec<_>>>()?;
    TrainingSet::new(signals, labels, teacher.to_json())
}

/// Consistent discretization of continuum signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// Cell averages over the transport partition.
    #[default]
    Projection,
    /// Spectral truncation `S_n`.
    Spectral,
}

impl Restriction {
    pub fn name(self) -> &'static str {
        match self {
            Restriction::Projection => "P_n",
            Restriction::Spectral => "S_n",
        }
    }
}

/// Applies `R_n` to continuum signals and reports the discrete coefficients
/// in the aligned basis of a frame.
pub struct Restrictor<'a> {
    pub kind: Restriction,
    pub frame: &'a SpectralFrame,
    pub nodes: SynthesisGrid,
    plan: &'a TransportPlan,
    aux: Option<SynthesisGrid>,
}

impl<'a> Restrictor<'a> {
    /// `aux` must hold the continuum eigenfunctions on the plan's auxiliary
    /// points when `kind` is `Projection`.
    pub fn new(
        kind: Restriction,
        frame: &'a SpectralFrame,
        plan: &'a TransportPlan,
        aux: Option<SynthesisGrid>,
        conv: ConvolutionBasis,
    ) -> Result<Self> {
        if plan.n != frame.discrete.n() {
            return Err(invalid(format!("plan has n = {}, frame has n = {}", plan.n, frame.discrete.n())));
        }
        if kind == Restriction::Projection {
            match &aux {
                Some(g) if g.points() == plan.g() => {}
                _ => return Err(invalid("projection restriction needs the eigenfunctions on the auxiliary sample")),
            }
        }
        Ok(Self { kind, frame, nodes: SynthesisGrid::nodes(frame, conv), plan, aux })
    }

    pub fn basis(&self) -> Basis {
        self.nodes.basis
    }

    pub fn apply(&self, u: &SpectralSignal) -> Result<SpectralSignal> {
        match self.kind {
            Restriction::Spectral => spectral_discretize(u, 0.0, self.frame),
            Restriction::Projection => {
                let aux = self.aux.as_ref().expect("checked in new");
                if u.coeffs.len() > aux.k() {
                    return Err(invalid(format!("signal has {} modes, auxiliary grid {}", u.coeffs.len(), aux.k())));
                }
                let nodal = self.plan.discretize(&aux.synthesize(&u.coeffs));
                SpectralSignal::new(self.basis(), self.nodes.analyze(&nodal)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum Level {
    Continuum,
    Discrete { n: usize, k_n: usize, restriction: Restriction },
}

/// LASSO data `min_ω (1/l)Σ ℓ((Ψω)_k, y_k) + ζ‖ω‖₁`.
#[derive(Debug, Clone)]
pub struct ErmProblem {
    pub features: Mat<f64>,
    pub labels: Vec<f64>,
    pub zeta: f64,
    pub loss: Loss,
    pub level: Level,
}

impl ErmProblem {
    pub fn new(features: Mat<f64>, labels: Vec<f64>, zeta: f64, loss: Loss, level: Level) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(invalid(format!("{} feature rows but {} labels", features.nrows(), labels.len())));
        }
        if features.ncols() == 0 {
            return Err(invalid("dictionary is empty"));
        }
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(invalid(format!("zeta must be finite and non-negative, got {zeta}")));
        }
        for j in 0..features.ncols() {
            for i in 0..features.nrows() {
                if !features[(i, j)].is_finite() {
                    return Err(GcnnError::NumericalFailure(format!("feature ({i}, {j}) is not finite")));
                }
            }
        }
        Ok(Self { features, labels, zeta, loss, level })
    }

    pub fn l(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn predictions(&self, omega: &[f64]) -> Vec<f64> {
        (0..self.l()).map(|k| (0..self.d()).map(|j| self.features[(k, j)] * omega[j]).sum()).collect()
    }

    /// Gradient of the data term at `ω`.
    pub fn gradient(&self, omega: &[f64]) -> Vec<f64> {
        let pred = self.predictions(omega);
        let l = self.l() as f64;
        let r: Vec<f64> = pred.iter().zip(&self.labels).map(|(f, y)| self.loss.derivative(*f, *y) / l).collect();
        (0..self.d()).map(|j| (0..self.l()).map(|k| self.features[(k, j)] * r[k]).sum()).collect()
    }

    pub fn data_term(&self, omega: &[f64]) -> f64 {
        let pred = self.predictions(omega);
        pred.iter().zip(&self.labels).map(|(f, y)| self.loss.value(*f, *y)).sum::<f64>() / self.l() as f64
    }

    pub fn objective(&self, omega: &[f64]) -> f64 {
        self.data_term(omega) + self.zeta * omega.iter().map(|w| w.abs()).sum::<f64>()
    }

    /// Smallest `ζ` for which `ω = 0` is optimal.
    pub fn zeta_max(&self) -> f64 {
        self.gradient(&vec![0.0; self.d()]).iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// `‖Ψᵀy‖_∞`.
    pub fn label_correlation(&self) -> f64 {
        (0..self.d())
            .map(|j| (0..self.l()).map(|k| self.features[(k, j)] * self.labels[k]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the `ℓ1` subgradient optimality conditions.
    pub fn kkt_residual(&self, omega: &[f64]) -> f64 {
        self.gradient(omega)
            .iter()
            .zip(omega)
            .map(|(g, w)| if *w != 0.0 { (g + self.zeta * w.signum()).abs() } else { (g.abs() - self.zeta).max(0.0) })
            .fold(0.0, f64::max)
    }

    fn lipschitz_estimate(&self) -> Result<f64> {
        let svd = self.features.svd().map_err(|e| GcnnError::NumericalFailure(format!("feature SVD: {e:?}")))?;
        let s = svd.S().column_vector();
        let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
        let ymax = self.labels.iter().fold(1.0f64, |m, y| m.max(y.abs()));
        Ok((self.loss.curvature(ymax) * smax * smax / self.l() as f64).max(1e-12))
    }
}

/// `Ψ[k, d] = ψ(u_k, θ_d)` on a continuum grid.
pub fn continuum_features(
    grid: &SynthesisGrid,
    signals: &[SpectralSignal],
    dictionary: &[ParameterTriple],
    act: &Activation,
) -> Result<Mat<f64>> {
    if dictionary.is_empty() {
        return Err(invalid("dictionary is empty"));
    }
    let rows = signals.par_iter().map(|u| grid.responses(u, dictionary, act)).collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_fn(signals.len(), dictionary.len(), |k, d| rows[k][d]))
}

/// `Ψ[k, d] = ψ_n(R_n u_k, Q_{n,α} θ_d)`.
pub fn discrete_features(
    restrictor: &Restrictor<'_>,
    signals: &[SpectralSignal],
    dictionary: &[ParameterTriple],
    act: &Activation,
) -> Result<Mat<f64>> {
    if dictionary.is_empty() {
        return Err(invalid("dictionary is empty"));
    }
    let projected =
        dictionary.iter().map(|t| param_project(t, restrictor.frame)).collect::<Result<Vec<_>>>()?;
    let restricted = signals.iter().map(|u| restrictor.apply(u)).collect::<Result<Vec<_>>>()?;
    continuum_features(&restrictor.nodes, &restricted, &projected, act)
}

/// Continuum ERM problem for a training set.
pub fn assemble_continuum(
    set: &TrainingSet,
    dictionary: &[ParameterTriple],
    grid: &SynthesisGrid,
    act: &Activation,
    loss: Loss,
) -> Result<ErmProblem> {
    let features = continuum_features(grid, &set.signals, dictionary, act)?;
    ErmProblem::new(features, set.labels.clone(), 0.0, loss, Level::Continuum)
}

/// Discrete ERM problem at the resolution of `restrictor`.
pub fn assemble_discrete(
    set: &TrainingSet,
    dictionary: &[ParameterTriple],
    restrictor: &Restrictor<'_>,
    act: &Activation,
    loss: Loss,
) -> Result<ErmProblem> {
    let features = discrete_features(restrictor, &set.signals, dictionary, act)?;
    let level = Level::Discrete { n: restrictor.frame.discrete.n(), k_n: restrictor.frame.k_n, restriction: restrictor.kind };
    ErmProblem::new(features, set.labels.clone(), 0.0, loss, level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative objective change below which the certificate is checked.
    pub rel_tol: f64,
    /// Stationarity tolerance relative to `‖Ψᵀy‖_∞`.
    pub kkt_tol: f64,
    /// Weights below this fraction of the largest are outside the support.
    pub support_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 50_000, rel_tol: 1e-10, kkt_tol: 1e-7, support_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErmSolution {
    pub omega: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub support: Vec<usize>,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Objective after every accepted step.
    #[serde(skip)]
    pub history: Vec<f64>,
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

fn support_of(omega: &[f64], tol: f64) -> Vec<usize> {
    let max = omega.iter().fold(0.0, |m: f64, w| m.max(w.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    (0..omega.len()).filter(|&j| omega[j].abs() > tol * max).collect()
}

/// Accelerated proximal gradient with backtracking and objective-based
/// restarts, so the accepted objective sequence never increases.
fn accelerated(
    problem: &ErmProblem,
    opts: &SolverOptions,
    start: Vec<f64>,
    prox: impl Fn(&[f64], f64) -> Vec<f64>,
    objective: impl Fn(&[f64]) -> f64,
    stationarity: impl Fn(&[f64]) -> f64,
) -> Result<ErmSolution> {
    let scale = problem.label_correlation().max(f64::MIN_POSITIVE);
    let mut lip = problem.lipschitz_estimate()?;
    let mut x = start;
    let mut fx = objective(&x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut restarts = 0;
    let mut history = vec![fx];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let g = problem.gradient(&y);
        let fy = problem.data_term(&y);
        let mut doublings = 0;
        let next = loop {
            let cand = prox(&y.iter().zip(&g).map(|(v, gi)| v - gi / lip).collect::<Vec<_>>(), 1.0 / lip);
            let diff: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
            let model = fy
                + g.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>()
                + 0.5 * lip * diff.iter().map(|d| d * d).sum::<f64>();
            if problem.data_term(&cand) <= model + 1e-12 * fy.abs().max(1e-300) {
                break cand;
            }
            lip *= 2.0;
            doublings += 1;
            if doublings > 60 || !lip.is_finite() {
                return Err(GcnnError::NumericalFailure("step-size line search failed".into()));
            }
        };
        let fnext = objective(&next);
        if fnext > fx {
            if t == 1.0 {
                // a plain proximal step from x failed to descend: x is stationary to rounding
                converged = stationarity(&x) <= opts.kkt_tol * scale;
                break;
            }
            restarts += 1;
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = next.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        let change = (fx - fnext).abs();
        x = next;
        fx = fnext;
        t = t_next;
        history.push(fx);
        if change <= opts.rel_tol * fx.abs().max(f64::MIN_POSITIVE) && stationarity(&x) <= opts.kkt_tol * scale {
            converged = true;
            break;
        }
    }
    Ok(ErmSolution {
        support: support_of(&x, opts.support_tol),
        kkt_residual: stationarity(&x),
        omega: x,
        objective: fx,
        iterations,
        restarts,
        converged,
        history,
    })
}

/// Minimizes the TV-regularized risk over signed weights on the dictionary.
pub fn solve_l1(problem: &ErmProblem, opts: &SolverOptions) -> Result<ErmSolution> {
    let zeta = problem.zeta;
    accelerated(
        problem,
        opts,
        vec![0.0; problem.d()],
        |v, step| v.iter().map(|x| soft_threshold(*x, zeta * step)).collect(),
        |w| problem.objective(w),
        |w| problem.kkt_residual(w),
    )
}

/// Minimizes the risk over probability measures on the dictionary; the TV
/// term is the constant `ζ`.
pub fn solve_simplex(problem: &ErmProblem, opts: &SolverOptions) -> Result<ErmSolution> {
    let d = problem.d();
    let zeta = problem.zeta;
    // stationarity on the simplex: gradient is constant on the support and not smaller off it
    let gap = |w: &[f64]| {
        let g = problem.gradient(w);
        let min = g.iter().copied().fold(f64::INFINITY, f64::min);
        w.iter().zip(&g).filter(|(wi, _)| **wi > 0.0).map(|(_, gi)| gi - min).fold(0.0, f64::max)
    };
    accelerated(
        problem,
        opts,
        vec![1.0 / d as f64; d],
        |v, _| project_simplex(v),
        |w| problem.data_term(w) + zeta,
        gap,
    )
}

/// Network carrying the weights of `omega` on the dictionary atoms in its support.
pub fn network_from_weights(
    dictionary: &[ParameterTriple],
    omega: &[f64],
    support: &[usize],
    basis: Basis,
    alpha: f64,
) -> Result<MeasureNetwork> {
    let mut net = MeasureNetwork::new(basis, alpha);
    for &j in support {
        net.push(omega[j], dictionary[j].clone())?;
    }
    Ok(net)
}

/// `(1/l)Σ ℓ(f_ρ(u_k), y_k) + ζ‖ρ‖_TV`.
pub fn erm_value(
    net: &MeasureNetwork,
    grid: &SynthesisGrid,
    signals: &[SpectralSignal],
    labels: &[f64],
    zeta: f64,
    loss: Loss,
    act: &Activation,
) -> Result<f64> {
    if signals.len() != labels.len() || signals.is_empty() {
        return Err(invalid("signals and labels must be non-empty and of equal length"));
    }
    let mut risk = 0.0;
    for (u, y) in signals.iter().zip(labels) {
        risk += loss.value(net.eval(grid, u, act)?, *y);
    }
    Ok(risk / signals.len() as f64 + zeta * net.total_variation())
}

/// Pushes every atom forward by `Q*_{n,α}`.
pub fn lift_network(net: &MeasureNetwork, frame: &SpectralFrame, k_cont: usize) -> Result<MeasureNetwork> {
    let mut out = MeasureNetwork::new(Basis::Continuum { k: k_cont }, net.alpha);
    for (w, t) in &net.atoms {
        out.push(*w, param_extend(t, frame, k_cont)?)?;
    }
    Ok(out)
}

/// Pushes every atom forward by `Q_{n,α}`.
pub fn project_network(net: &MeasureNetwork, frame: &SpectralFrame) -> Result<MeasureNetwork> {
    let mut out = MeasureNetwork::new(Basis::Discrete { n: frame.discrete.n(), k: frame.k_n }, net.alpha);
    for (w, t) in &net.atoms {
        out.push(*w, param_project(t, frame)?)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleOptions {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for ParticleOptions {
    fn default() -> Self {
        Self { steps: 500, step_size: 0.05 }
    }
}

/// Projected gradient descent on atom weights and positions (squared loss).
/// Weights take a soft-thresholding step; positions are projected back onto
/// the parameter ball. Returns the trained network and the objective after
/// every step.
pub fn train_particles(
    init: &MeasureNetwork,
    grid: &SynthesisGrid,
    set: &TrainingSet,
    zeta: f64,
    act: &Activation,
    eigenvalues: &[f64],
    opts: &ParticleOptions,
) -> Result<(MeasureNetwork, Vec<f64>)> {
    let l = set.l() as f64;
    let mut net = init.clone();
    let mut history = Vec::with_capacity(opts.steps + 1);
    history.push(erm_value(&net, grid, &set.signals, &set.labels, zeta, Loss::Squared, act)?);
    for _ in 0..opts.steps {
        let mut grads: Vec<(f64, [Vec<f64>; 3])> =
            net.atoms.iter().map(|(_, t)| (0.0, [vec![0.0; t.a.coeffs.len()], vec![0.0; t.b.coeffs.len()], vec![0.0; t.c.coeffs.len()]])).collect();
        for (u, y) in set.signals.iter().zip(&set.labels) {
            let parts = net.atoms.iter().map(|(_, t)| grid.response_gradient(u, t, act)).collect::<Result<Vec<_>>>()?;
            let f: f64 = net.atoms.iter().zip(&parts).map(|((w, _), (psi, _))| w * psi).sum();
            let r = 2.0 * (f - y) / l;
            for ((gw, gt), ((w, _), (psi, gp))) in grads.iter_mut().zip(net.atoms.iter().zip(&parts)) {
                *gw += r * psi;
                for c in 0..3 {
                    for (a, b) in gt[c].iter_mut().zip(&gp[c]) {
                        *a += r * w * b;
                    }
                }
            }
        }
        let eta = opts.step_size;
        for ((w, t), (gw, gt)) in net.atoms.iter_mut().zip(&grads) {
            *w = soft_threshold(*w - eta * gw, eta * zeta);
            for (s, g) in [&mut t.a, &mut t.b, &mut t.c].into_iter().zip(gt) {
                for (x, gx) in s.coeffs.iter_mut().zip(g) {
                    *x -= eta * gx;
                }
            }
            *t = t.project(eigenvalues)?;
        }
        history.push(erm_value(&net, grid, &set.signals, &set.labels, zeta, Loss::Squared, act)?);
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::linalg::solvers::Solve;
    use crate::graph::{KernelShape, KernelSpec};
    use crate::manifold::ManifoldModel;
    use crate::network::sample_parameters;
    use crate::pipeline::{build_level, BandwidthRule, LevelOptions};
    use crate::spectra::SolverKind;

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| -> f64 { StandardNormal.sample(&mut rng) })
    }

    fn lasso(features: Mat<f64>, labels: Vec<f64>, zeta: f64) -> ErmProblem {
        ErmProblem::new(features, labels, zeta, Loss::Squared, Level::Continuum).unwrap()
    }

    /// Cyclic coordinate descent on the same objective.
    fn coordinate_descent(p: &ErmProblem, sweeps: usize) -> Vec<f64> {
        let (l, d) = (p.l(), p.d());
        let mut w = vec![0.0; d];
        let mut resid: Vec<f64> = p.labels.clone();
        for _ in 0..sweeps {
            for j in 0..d {
                let col: Vec<f64> = (0..l).map(|k| p.features[(k, j)]).collect();
                let norm2: f64 = col.iter().map(|x| x * x).sum();
                if norm2 == 0.0 {
                    continue;
                }
                let rho: f64 = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() + norm2 * w[j];
                let new = soft_threshold(rho, p.zeta * l as f64 / 2.0) / norm2;
                for k in 0..l {
                    resid[k] -= col[k] * (new - w[j]);
                }
                w[j] = new;
            }
        }
        w
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.5, 1.0), 1.5);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn unregularized_square_system_interpolates() {
        let l = 8;
        let mut psi = gaussian_matrix(l, l, 1);
        for i in 0..l {
            psi[(i, i)] += 4.0;
        }
        let y: Vec<f64> = (0..l).map(|i| (i as f64 * 0.7).sin()).collect();
        let direct = psi.partial_piv_lu().solve(Mat::from_fn(l, 1, |i, _| y[i]));
        let sol = solve_l1(&lasso(psi, y, 0.0), &SolverOptions::default()).unwrap();
        assert!(sol.objective < 1e-8, "{}", sol.objective);
        for i in 0..l {
            assert!((sol.omega[i] - direct[(i, 0)]).abs() < 1e-4);
        }
    }

    #[test]
    fn zeta_max_switches_off_every_atom() {
        let psi = gaussian_matrix(10, 30, 2);
        let y: Vec<f64> = (0..10).map(|i| 1.0 - 0.2 * i as f64).collect();
        let oracle = (0..30)
            .map(|j| ((2.0 / 10.0) * (0..10).map(|k| psi[(k, j)] * y[k]).sum::<f64>()).abs())
            .fold(0.0, f64::max);
        let mut p = lasso(psi, y, 0.0);
        assert!((p.zeta_max() - oracle).abs() < 1e-12 * oracle);
        for zeta in [p.zeta_max(), oracle * (1.0 + 1e-12)] {
            p.zeta = zeta;
            let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
            assert!(sol.omega.iter().all(|w| *w == 0.0));
            assert!(sol.support.is_empty());
        }
        p.zeta = 0.9 * oracle;
        assert!(!solve_l1(&p, &SolverOptions::default()).unwrap().support.is_empty());
    }

    #[test]
    fn certificate_and_agreement_with_coordinate_descent() {
        let psi = gaussian_matrix(16, 64, 3);
        let y: Vec<f64> = (0..16).map(|i| ((i * i) as f64 * 0.37).cos()).collect();
        let mut p = lasso(psi, y, 0.0);
        p.zeta = 1e-2 * p.zeta_max();
        let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.kkt_residual < 1e-6 * p.label_correlation());
        assert!(sol.support.len() <= 16);
        let cd = coordinate_descent(&p, 20_000);
        let (a, b) = (sol.objective, p.objective(&cd));
        assert!((a - b).abs() <= 1e-8 * b.max(1e-12), "{a} vs {b}");
        assert!((p.objective(&sol.omega) - sol.objective).abs() < 1e-15);
    }

    #[test]
    fn accepted_objectives_never_increase() {
        let psi = gaussian_matrix(12, 40, 4);
        let y: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
        let mut p = lasso(psi, y, 0.0);
        p.zeta = 1e-3 * p.zeta_max();
        let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*sol.history.last().unwrap(), sol.objective);
    }

    #[test]
    fn logistic_loss_solves() {
        let psi = gaussian_matrix(20, 10, 5);
        let y: Vec<f64> = (0..20).map(|k| if psi[(k, 0)] + 0.5 * psi[(k, 1)] > 0.0 { 1.0 } else { -1.0 }).collect();
        let mut p = ErmProblem::new(psi, y, 0.0, Loss::Logistic, Level::Continuum).unwrap();
        p.zeta = 0.05 * p.zeta_max();
        let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
        assert!(sol.objective < p.objective(&vec![0.0; 10]));
        assert!(sol.kkt_residual < 1e-6 * p.label_correlation());
    }

    #[test]
    fn simplex_projection_and_solver() {
        let v = [0.3, -0.2, 1.4, 0.1];
        let w = project_simplex(&v);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|x| *x >= 0.0));
        // brute-force optimality: projection beats every simplex vertex and midpoint
        let dist = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for i in 0..4 {
            for j in 0..4 {
                let mut c = [0.0; 4];
                c[i] += 0.5;
                c[j] += 0.5;
                assert!(dist(&w) <= dist(&c) + 1e-15);
            }
        }
        let psi = gaussian_matrix(10, 6, 6);
        let y: Vec<f64> = (0..10).map(|k| 0.3 * psi[(k, 2)] + 0.7 * psi[(k, 4)]).collect();
        let p = lasso(psi, y, 0.01);
        let sol = solve_simplex(&p, &SolverOptions::default()).unwrap();
        assert!((sol.omega.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sol.omega.iter().all(|x| *x >= 0.0));
        assert!((sol.omega[2] - 0.3).abs() < 1e-6 && (sol.omega[4] - 0.7).abs() < 1e-6);
        assert!((sol.objective - 0.01).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(ErmProblem::new(Mat::zeros(3, 0), vec![0.0; 3], 0.0, Loss::Squared, Level::Continuum).is_err());
        assert!(ErmProblem::new(Mat::zeros(3, 2), vec![0.0; 2], 0.0, Loss::Squared, Level::Continuum).is_err());
        assert!(ErmProblem::new(Mat::zeros(2, 2), vec![0.0; 2], -1.0, Loss::Squared, Level::Continuum).is_err());
        let mut bad = Mat::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(ErmProblem::new(bad, vec![0.0; 2], 0.0, Loss::Squared, Level::Continuum).is_err());
    }

    struct Fixture {
        table: crate::manifold::SpectrumTable,
        grid: SynthesisGrid,
        dict: Vec<ParameterTriple>,
        set: TrainingSet,
        basis: Basis,
    }

    fn fixture(k: usize) -> Fixture {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(13);
        let grid = SynthesisGrid::continuum(&table, 13, &model.quadrature(512)).unwrap();
        let basis = Basis::Continuum { k };
        let dict = sample_parameters(&table.eigenvalues, basis, 0.5, 24, 10, 1.0).unwrap();
        let mut teacher = MeasureNetwork::new(basis, 0.5);
        teacher.push(1.0, dict[3].clone()).unwrap();
        teacher.push(-0.5, dict[7].clone()).unwrap();
        let sampler = SignalSampler { k: 13, decay: 1.0, amplitude: 1.0 };
        let set = make_training_set(&teacher, &grid, &Activation::default(), &table.eigenvalues, &sampler, 8, 11).unwrap();
        Fixture { table, grid, dict, set, basis }
    }

    #[test]
    fn training_sets() {
        let f = fixture(3);
        let act = Activation::default();
        let sampler = SignalSampler { k: 13, decay: 1.0, amplitude: 1.0 };
        let zero = MeasureNetwork::new(f.basis, 0.5);
        let set = make_training_set(&zero, &f.grid, &act, &f.table.eigenvalues, &sampler, 5, 1).unwrap();
        assert!(set.labels.iter().all(|y| *y == 0.0));
        let again = make_training_set(&zero, &f.grid, &act, &f.table.eigenvalues, &sampler, 5, 1).unwrap();
        assert_eq!(set, again);
        assert!(make_training_set(&zero, &f.grid, &act, &f.table.eigenvalues, &sampler, 0, 1).is_err());

        // single atom with constant modes only
        let basis = Basis::Continuum { k: 3 };
        let constant = |v: f64| SpectralSignal::new(basis, vec![v, 0.0, 0.0]).unwrap();
        let theta = ParameterTriple::new(constant(0.8), constant(0.6), constant(0.1), 0.5).unwrap();
        let mut single = MeasureNetwork::new(basis, 0.5);
        single.push(1.0, theta).unwrap();
        let u = SpectralSignal::new(Basis::Continuum { k: 13 }, [vec![1.5], vec![0.0; 12]].concat()).unwrap();
        let y = single.eval(&f.grid, &u, &act).unwrap();
        assert!((y - 0.8 * (0.6f64 * 1.5 + 0.1).tanh()).abs() < 1e-13);
    }

    #[test]
    fn feature_columns() {
        let f = fixture(3);
        let act = Activation::default();
        let mut dict = f.dict.clone();
        dict.push(ParameterTriple::zeros(f.basis, 0.5));
        dict.push(f.dict[2].clone());
        let p = assemble_continuum(&f.set, &dict, &f.grid, &act, Loss::Squared).unwrap();
        let d = dict.len();
        for k in 0..f.set.l() {
            assert_eq!(p.features[(k, d - 2)], 0.0);
            assert_eq!(p.features[(k, d - 1)], p.features[(k, 2)]);
            let direct = f.grid.response(&f.set.signals[k], &dict[5], &act).unwrap();
            assert!((p.features[(k, 5)] - direct).abs() < 1e-15);
        }
        assert!(assemble_continuum(&f.set, &[], &f.grid, &act, Loss::Squared).is_err());
    }

    #[test]
    fn solver_value_matches_network_value() {
        let f = fixture(3);
        let act = Activation::default();
        let mut p = assemble_continuum(&f.set, &f.dict, &f.grid, &act, Loss::Squared).unwrap();
        p.zeta = 1e-3 * p.zeta_max();
        let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
        let all: Vec<usize> = (0..f.dict.len()).collect();
        let net = network_from_weights(&f.dict, &sol.omega, &all, f.basis, 0.5).unwrap();
        let j = erm_value(&net, &f.grid, &f.set.signals, &f.set.labels, p.zeta, Loss::Squared, &act).unwrap();
        assert!((j - sol.objective).abs() < 1e-9);
        let empty = MeasureNetwork::new(f.basis, 0.5);
        let zeros = vec![0.0; f.set.l()];
        assert_eq!(erm_value(&empty, &f.grid, &f.set.signals, &zeros, 0.3, Loss::Squared, &act).unwrap(), 0.0);
    }

    #[test]
    fn perturbed_minimizer_atoms_do_not_undercut_the_minimum() {
        let f = fixture(3);
        let act = Activation::default();
        let mut p = assemble_continuum(&f.set, &f.dict, &f.grid, &act, Loss::Squared).unwrap();
        p.zeta = 1e-2 * p.zeta_max();
        let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut gaps = Vec::new();
        for scale in [1e-3, 1e-6, 1e-9] {
            let mut net = MeasureNetwork::new(f.basis, 0.5);
            for &j in &sol.support {
                let mut t = f.dict[j].clone();
                for s in [&mut t.a, &mut t.b, &mut t.c] {
                    for x in s.coeffs.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *x += scale * z;
                    }
                }
                net.push(sol.omega[j], t).unwrap();
            }
            let j = erm_value(&net, &f.grid, &f.set.signals, &f.set.labels, p.zeta, Loss::Squared, &act).unwrap();
            gaps.push(j - sol.objective);
        }
        assert!(gaps[2] >= -1e-8, "{gaps:?}");
        assert!(gaps[2].abs() < gaps[0].abs().max(1e-12));
    }

    #[test]
    fn particle_descent_lowers_the_objective() {
        let f = fixture(3);
        let act = Activation::default();
        let mut init = MeasureNetwork::new(f.basis, 0.5);
        for j in 0..4 {
            init.push(0.1, f.dict[j].clone()).unwrap();
        }
        let opts = ParticleOptions { steps: 60, step_size: 0.2 };
        let (net, hist) = train_particles(&init, &f.grid, &f.set, 1e-4, &act, &f.table.eigenvalues, &opts).unwrap();
        assert_eq!(hist.len(), 61);
        assert!(hist[60] < hist[0]);
        for (_, t) in &net.atoms {
            assert!(t.in_ball(&f.table.eigenvalues, 1e-12).unwrap());
        }
    }

    #[test]
    fn response_gradient_matches_finite_differences() {
        let f = fixture(3);
        let act = Activation::default();
        let u = &f.set.signals[0];
        let t = f.dict[1].clone();
        let (psi, grads) = f.grid.response_gradient(u, &t, &act).unwrap();
        assert!((psi - f.grid.response(u, &t, &act).unwrap()).abs() < 1e-14);
        let h = 1e-6;
        for comp in 0..3 {
            for j in 0..3 {
                let mut tp = t.clone();
                let mut tm = t.clone();
                [&mut tp.a, &mut tp.b, &mut tp.c][comp].coeffs[j] += h;
                [&mut tm.a, &mut tm.b, &mut tm.c][comp].coeffs[j] -= h;
                let fd = (f.grid.response(u, &tp, &act).unwrap() - f.grid.response(u, &tm, &act).unwrap()) / (2.0 * h);
                assert!((fd - grads[comp][j]).abs() < 1e-7, "component {comp} mode {j}");
            }
        }
    }

    #[test]
    fn reprojecting_lifted_atoms_preserves_the_discrete_risk() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let opts = LevelOptions {
            g_factor: 16,
            kernel: KernelSpec::new(KernelShape::Indicator, 1).unwrap(),
            bandwidth: BandwidthRule::SqrtEps,
            eig_count: 5,
            solver: SolverKind::Dense,
        };
        let level = build_level(&model, 150, 1, 2, &opts).unwrap();
        let f = fixture(3);
        let frame = level.frame(&f.table, 3).unwrap();
        let act = Activation::default();
        let aux = SynthesisGrid::on_aux(&f.table, 13, &level.plan).unwrap();
        for conv in [ConvolutionBasis::Graph, ConvolutionBasis::Aligned] {
            for kind in [Restriction::Projection, Restriction::Spectral] {
                let r = Restrictor::new(kind, &frame, &level.plan, Some(aux.clone()), conv).unwrap();
                let mut p = assemble_discrete(&f.set, &f.dict, &r, &act, Loss::Squared).unwrap();
                p.zeta = 1e-3 * p.zeta_max();
                let sol = solve_l1(&p, &SolverOptions::default()).unwrap();
                let net = network_from_weights(&f.dict, &sol.omega, &sol.support, f.basis, 0.5).unwrap();
                let discrete = project_network(&net, &frame).unwrap();
                let signals: Vec<SpectralSignal> = f.set.signals.iter().map(|u| r.apply(u).unwrap()).collect();
                let j1 = erm_value(&discrete, &r.nodes, &signals, &f.set.labels, p.zeta, Loss::Squared, &act).unwrap();
                let again = project_network(&lift_network(&discrete, &frame, 13).unwrap(), &frame).unwrap();
                let j2 = erm_value(&again, &r.nodes, &signals, &f.set.labels, p.zeta, Loss::Squared, &act).unwrap();
                assert!((j1 - j2).abs() < 1e-10, "{kind:?}");
                assert!((j1 - sol.objective).abs() < 1e-9);
            }
        }
        assert!(Restrictor::new(Restriction::Projection, &frame, &level.plan, None, ConvolutionBasis::Aligned).is_err());
    }
}
