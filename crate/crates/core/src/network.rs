//! Neural response maps and measure-parametrized shallow networks.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GcnnError, Result};
use crate::manifold::{QuadratureGrid, SpectrumTable};
use crate::spectra::SpectralFrame;
use crate::spectral_ops::{project_to_ball, Basis, ParameterTriple, SpectralSignal};
use crate::transport::TransportPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    #[default]
    Tanh,
    Softplus,
}

/// Globally Lipschitz activation with `|σ(x) − σ(y)| ≤ L|x − y|` and
/// `‖σ(u)‖ ≤ C(‖u‖ + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub lipschitz: f64,
    pub growth: f64,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        // C = max(L, |σ(0)|) since ‖σ(0)‖ = |σ(0)| under a probability measure
        let growth = match kind {
            ActivationKind::Relu | ActivationKind::Tanh => 1.0,
            ActivationKind::Softplus => 1f64.max(std::f64::consts::LN_2),
        };
        Self { kind, lipschitz: 1.0, growth }
    }

    /// `σ'(x)`, with 0 at the ReLU kink.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => f64::from(u8::from(x > 0.0)),
            ActivationKind::Tanh => 1.0 - x.tanh().powi(2),
            ActivationKind::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Softplus => {
                if x > 30.0 {
                    x + (-x).exp()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Self::new(ActivationKind::default())
    }
}

/// Basis in which discrete convolution multiplies coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionBasis {
    /// Graph eigenvectors as computed.
    Graph,
    /// Graph eigenvectors rotated inside each continuum block onto the
    /// continuum basis.
    #[default]
    Aligned,
}

/// Eigenbasis values on a weighted point set: graph nodes with weights
/// `1/n`, or a continuum quadrature.
#[derive(Debug, Clone)]
pub struct SynthesisGrid {
    pub basis: Basis,
    /// `points × k` basis values.
    pub values: Mat<f64>,
    pub weights: Vec<f64>,
    /// Orthogonal `R` taking coefficients to the basis in which convolution
    /// multiplies; `None` multiplies in `values` itself.
    pub rotation: Option<Mat<f64>>,
}

const BATCH: usize = 64;

impl SynthesisGrid {
    /// First `K(n)` aligned discrete eigenvectors of `frame` on the nodes.
    pub fn discrete(frame: &SpectralFrame) -> Self {
        let n = frame.discrete.n();
        let k = frame.k_n;
        let v = &frame.discrete.vectors;
        Self {
            basis: Basis::Discrete { n, k },
            values: Mat::from_fn(n, k, |i, j| v[(i, j)]),
            weights: vec![1.0 / n as f64; n],
            rotation: None,
        }
    }

    pub fn nodes(frame: &SpectralFrame, conv: ConvolutionBasis) -> Self {
        match conv {
            ConvolutionBasis::Graph => Self::discrete(frame),
            ConvolutionBasis::Aligned => Self::discrete_aligned(frame),
        }
    }

    /// Nodes of `frame`, with convolution taken in the block-aligned basis
    /// `φ̃_l = Σ_k R[l, k] φ_k^{(n)}` that tracks the fixed continuum basis
    /// inside every multiplicity block.
    pub fn discrete_aligned(frame: &SpectralFrame) -> Self {
        Self { rotation: Some(frame.mixing_matrix()), ..Self::discrete(frame) }
    }

    /// First `k` continuum eigenfunctions on a quadrature grid.
    pub fn continuum(table: &SpectrumTable, k: usize, quad: &QuadratureGrid) -> Result<Self> {
        Ok(Self {
            basis: Basis::Continuum { k },
            values: table.eval_leading(k, &quad.points)?,
            weights: quad.weights.clone(),
            rotation: None,
        })
    }

    /// First `k` continuum eigenfunctions on the auxiliary sample of a plan.
    pub fn on_aux(table: &SpectrumTable, k: usize, plan: &TransportPlan) -> Result<Self> {
        let g = plan.g();
        Ok(Self {
            basis: Basis::Continuum { k },
            values: table.eval_leading(k, &plan.aux)?,
            weights: vec![1.0 / g as f64; g],
            rotation: None,
        })
    }

    pub fn points(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    /// Point values of a coefficient vector (missing coefficients are zero).
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let k = coeffs.len().min(self.k());
        (0..self.points()).map(|i| (0..k).map(|j| self.values[(i, j)] * coeffs[j]).sum()).collect()
    }

    /// Weighted inner products with the basis.
    pub fn analyze(&self, point_values: &[f64]) -> Result<Vec<f64>> {
        if point_values.len() != self.points() {
            return Err(invalid(format!("{} values for {} points", point_values.len(), self.points())));
        }
        Ok((0..self.k())
            .map(|j| (0..self.points()).map(|i| self.weights[i] * self.values[(i, j)] * point_values[i]).sum())
            .collect())
    }

    fn check(&self, s: &SpectralSignal) -> Result<()> {
        let ok = match (self.basis, s.basis) {
            (Basis::Continuum { .. }, Basis::Continuum { .. }) => true,
            (Basis::Discrete { n, .. }, Basis::Discrete { n: m, .. }) => n == m,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("signal basis {:?} does not match grid basis {:?}", s.basis, self.basis)))
        }
    }

    fn rotate(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        match &self.rotation {
            None => x.to_vec(),
            Some(r) => (0..x.len())
                .map(|i| (0..x.len()).map(|j| if transpose { r[(j, i)] } else { r[(i, j)] } * x[j]).sum())
                .collect(),
        }
    }

    /// First `k` coefficients of `b ∗ u + c`.
    fn preactivation(&self, b: &SpectralSignal, u: &SpectralSignal, c: &SpectralSignal) -> Vec<f64> {
        let k = self.k();
        let pad = |s: &SpectralSignal| (0..k).map(|j| s.coeffs.get(j).copied().unwrap_or(0.0)).collect::<Vec<_>>();
        let (rb, ru) = (self.rotate(&pad(b), false), self.rotate(&pad(u), false));
        let prod: Vec<f64> = rb.iter().zip(&ru).map(|(x, y)| x * y).collect();
        self.rotate(&prod, true).iter().zip(pad(c)).map(|(x, y)| x + y).collect()
    }

    /// `ψ(u, θ) = ⟨a, σ(b ∗ u + c)⟩` under the grid weights.
    pub fn response(&self, u: &SpectralSignal, theta: &ParameterTriple, act: &Activation) -> Result<f64> {
        Ok(self.responses(u, std::slice::from_ref(theta), act)?[0])
    }

    /// Responses of one signal against many triples.
    pub fn responses(&self, u: &SpectralSignal, thetas: &[ParameterTriple], act: &Activation) -> Result<Vec<f64>> {
        self.check(u)?;
        for t in thetas {
            self.check(&t.a)?;
        }
        let k = self.k();
        let at = |s: &SpectralSignal, j: usize| s.coeffs.get(j).copied().unwrap_or(0.0);
        let mut out = Vec::with_capacity(thetas.len());
        for chunk in thetas.chunks(BATCH) {
            let a = Mat::from_fn(k, chunk.len(), |j, d| at(&chunk[d].a, j));
            let pre: Vec<Vec<f64>> = chunk.iter().map(|t| self.preactivation(&t.b, u, &t.c)).collect();
            let z = Mat::from_fn(k, chunk.len(), |j, d| pre[d][j]);
            let va = &self.values * &a;
            let vz = &self.values * &z;
            for d in 0..chunk.len() {
                let s: f64 = (0..self.points()).map(|i| self.weights[i] * va[(i, d)] * act.eval(vz[(i, d)])).sum();
                out.push(s);
            }
        }
        Ok(out)
    }
}

impl SynthesisGrid {
    /// `ψ(u, θ)` together with its coefficient gradients in `a`, `b` and `c`.
    pub fn response_gradient(
        &self,
        u: &SpectralSignal,
        theta: &ParameterTriple,
        act: &Activation,
    ) -> Result<(f64, [Vec<f64>; 3])> {
        self.check(u)?;
        self.check(&theta.a)?;
        let k = self.k();
        let z = self.preactivation(&theta.b, u, &theta.c);
        let av = self.synthesize(&theta.a.coeffs);
        let zv = self.synthesize(&z);
        let mut psi = 0.0;
        let mut ga = vec![0.0; k];
        let mut gc = vec![0.0; k];
        for i in 0..self.points() {
            let w = self.weights[i];
            let s = act.eval(zv[i]);
            let ds = w * av[i] * act.derivative(zv[i]);
            psi += w * av[i] * s;
            for j in 0..k {
                let phi = self.values[(i, j)];
                ga[j] += w * phi * s;
                gc[j] += ds * phi;
            }
        }
        // b enters through Rᵀ diag(R u) R b
        let ru = self.rotate(&(0..k).map(|j| u.coeffs.get(j).copied().unwrap_or(0.0)).collect::<Vec<_>>(), false);
        let rg: Vec<f64> = self.rotate(&gc, false).iter().zip(&ru).map(|(g, x)| g * x).collect();
        let gb = self.rotate(&rg, true);
        let fit = |mut v: Vec<f64>, len: usize| {
            v.resize(len, 0.0);
            v
        };
        let len = theta.a.coeffs.len();
        let (ga, gb, gc) = (fit(ga, len), fit(gb, len), fit(gc, len));
        Ok((psi, [ga, gb, gc]))
    }
}

/// Finite signed measure `Σ_j ω_j δ_{θ_j}` on a parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureNetwork {
    pub basis: Basis,
    pub alpha: f64,
    pub atoms: Vec<(f64, ParameterTriple)>,
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    omega: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    basis: Basis,
    alpha: f64,
    atoms: Vec<AtomJson>,
}

impl MeasureNetwork {
    pub fn new(basis: Basis, alpha: f64) -> Self {
        Self { basis, alpha, atoms: Vec::new() }
    }

    pub fn push(&mut self, omega: f64, theta: ParameterTriple) -> Result<()> {
        if theta.basis() != self.basis {
            return Err(invalid(format!("atom basis {:?} differs from network basis {:?}", theta.basis(), self.basis)));
        }
        self.atoms.push((omega, theta));
        Ok(())
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|(w, _)| w.abs()).sum()
    }

    /// `f_ρ(u) = Σ_j ω_j ψ(u, θ_j)`.
    pub fn eval(&self, grid: &SynthesisGrid, u: &SpectralSignal, act: &Activation) -> Result<f64> {
        let matches = match (grid.basis, self.basis) {
            (Basis::Continuum { .. }, Basis::Continuum { .. }) => true,
            (Basis::Discrete { n, .. }, Basis::Discrete { n: m, .. }) => n == m,
            _ => false,
        };
        if !matches {
            return Err(invalid(format!("network basis {:?} does not match grid {:?}", self.basis, grid.basis)));
        }
        if self.atoms.is_empty() {
            return Ok(0.0);
        }
        let thetas: Vec<ParameterTriple> = self.atoms.iter().map(|(_, t)| t.clone()).collect();
        let psi = grid.responses(u, &thetas, act)?;
        Ok(self.atoms.iter().zip(psi).map(|((w, _), p)| w * p).sum())
    }

    /// Adds the weights of atoms with identical parameters.
    pub fn merged(&self) -> Self {
        let mut atoms: Vec<(f64, ParameterTriple)> = Vec::new();
        for (w, t) in &self.atoms {
            match atoms.iter_mut().find(|(_, s)| s == t) {
                Some(slot) => slot.0 += w,
                None => atoms.push((*w, t.clone())),
            }
        }
        Self { basis: self.basis, alpha: self.alpha, atoms }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = NetworkJson {
            basis: self.basis,
            alpha: self.alpha,
            atoms: self
                .atoms
                .iter()
                .map(|(w, t)| AtomJson { omega: *w, a: t.a.coeffs.clone(), b: t.b.coeffs.clone(), c: t.c.coeffs.clone() })
                .collect(),
        };
        serde_json::to_value(doc).expect("network serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: NetworkJson =
            serde_json::from_value(value.clone()).map_err(|e| invalid(format!("network JSON: {e}")))?;
        let mut net = Self::new(doc.basis, doc.alpha);
        for atom in doc.atoms {
            let theta = ParameterTriple::new(
                SpectralSignal::new(doc.basis, atom.a)?,
                SpectralSignal::new(doc.basis, atom.b)?,
                SpectralSignal::new(doc.basis, atom.c)?,
                doc.alpha,
            )?;
            net.push(atom.omega, theta)?;
        }
        Ok(net)
    }
}

/// `count` triples with independent Gaussian coefficients of scale
/// `(1 + √λ_k)^{−decay}`, projected onto the parameter ball.
pub fn sample_parameters(
    eigenvalues: &[f64],
    basis: Basis,
    alpha: f64,
    count: usize,
    seed: u64,
    decay: f64,
) -> Result<Vec<ParameterTriple>> {
    if count == 0 {
        return Err(invalid("dictionary size must be at least 1"));
    }
    let k = basis.len();
    if eigenvalues.len() < k {
        return Err(GcnnError::OutOfRange { index: k, len: eigenvalues.len() });
    }
    let scale: Vec<f64> = eigenvalues[..k].iter().map(|&l| (1.0 + l.max(0.0).sqrt()).powf(-decay)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Result<SpectralSignal> {
        let coeffs = scale.iter().map(|s| s * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        SpectralSignal::new(basis, coeffs)
    };
    (0..count)
        .map(|_| {
            let (a, b, c) = (draw()?, draw()?, draw()?);
            ParameterTriple::new(
                project_to_ball(&a, alpha, eigenvalues)?,
                project_to_ball(&b, 0.0, eigenvalues)?,
                project_to_ball(&c, alpha, eigenvalues)?,
                alpha,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ManifoldModel;
    use crate::spectral_ops::{convolve, h_alpha_norm};
    use rand::Rng;

    fn circle_grid(k: usize) -> (SpectrumTable, SynthesisGrid) {
        let model = ManifoldModel::circle(1.0).unwrap();
        let table = model.continuum_spectrum(k);
        let grid = SynthesisGrid::continuum(&table, k, &model.quadrature(2048)).unwrap();
        (table, grid)
    }

    /// Discrete grid whose columns are orthonormal under the `1/n` inner product.
    fn orthonormal_nodes(n: usize, k: usize, seed: u64) -> SynthesisGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Mat::from_fn(n, k, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let q = raw.qr().compute_thin_Q();
        let scale = (n as f64).sqrt();
        SynthesisGrid {
            basis: Basis::Discrete { n, k },
            values: Mat::from_fn(n, k, |i, j| q[(i, j)] * scale),
            weights: vec![1.0 / n as f64; n],
            rotation: None,
        }
    }

    fn random_signal(basis: Basis, scale: f64, rng: &mut ChaCha8Rng) -> SpectralSignal {
        let coeffs = (0..basis.len()).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect();
        SpectralSignal::new(basis, coeffs).unwrap()
    }

    fn random_triple(basis: Basis, rng: &mut ChaCha8Rng) -> ParameterTriple {
        ParameterTriple::new(
            random_signal(basis, 0.4, rng),
            random_signal(basis, 0.4, rng),
            random_signal(basis, 0.4, rng),
            0.0,
        )
        .unwrap()
    }

    fn norm(s: &SpectralSignal) -> f64 {
        s.l2_norm()
    }

    fn diff(a: &SpectralSignal, b: &SpectralSignal) -> f64 {
        a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn activation_constants_hold() {
        for kind in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Softplus] {
            let act = Activation::new(kind);
            let xs: Vec<f64> = (0..=2000).map(|i| -10.0 + i as f64 * 0.01).collect();
            for w in xs.windows(2) {
                let slope = (act.eval(w[1]) - act.eval(w[0])).abs() / (w[1] - w[0]);
                assert!(slope <= act.lipschitz + 1e-9, "{kind:?}: {slope}");
            }
            let (_, grid) = circle_grid(9);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..20 {
                let u = random_signal(Basis::Continuum { k: 9 }, 2.0, &mut rng);
                let vals = grid.synthesize(&u.coeffs);
                let s: f64 = vals.iter().zip(&grid.weights).map(|(v, w)| w * act.eval(*v).powi(2)).sum();
                assert!(s.sqrt() <= act.growth * (u.l2_norm() + 1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let act = Activation::new(ActivationKind::Softplus);
        assert!((act.eval(800.0) - 800.0).abs() < 1e-12);
        assert!(act.eval(-800.0) >= 0.0);
        assert!((act.eval(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn constant_relu_response_is_one() {
        let n = 30;
        let mut grid = orthonormal_nodes(n, 4, 1);
        for i in 0..n {
            grid.values[(i, 0)] = 1.0;
        }
        let basis = Basis::Discrete { n, k: 4 };
        let e1 = SpectralSignal::unit(basis, 0).unwrap();
        let theta = ParameterTriple::new(e1.clone(), e1.clone(), SpectralSignal::zeros(basis), 1.0).unwrap();
        let relu = Activation::new(ActivationKind::Relu);
        assert!((grid.response(&e1, &theta, &relu).unwrap() - 1.0).abs() < 1e-14);
        let zero_a = ParameterTriple::new(SpectralSignal::zeros(basis), e1.clone(), e1.clone(), 1.0).unwrap();
        assert_eq!(grid.response(&e1, &zero_a, &relu).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_resolution_is_rejected() {
        let grid = orthonormal_nodes(20, 3, 2);
        let other = Basis::Discrete { n: 21, k: 3 };
        let u = SpectralSignal::zeros(other);
        let theta = ParameterTriple::zeros(Basis::Discrete { n: 20, k: 3 }, 1.0);
        assert!(grid.response(&u, &theta, &Activation::default()).is_err());
        let cont = SpectralSignal::zeros(Basis::Continuum { k: 3 });
        assert!(grid.response(&cont, &theta, &Activation::default()).is_err());
    }

    #[test]
    fn parameter_lipschitz_estimate() {
        let n = 80;
        let k = 6;
        let grid = orthonormal_nodes(n, k, 3);
        let basis = Basis::Discrete { n, k };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Softplus] {
            let act = Activation::new(kind);
            for _ in 0..50 {
                let u = random_signal(basis, 1.0, &mut rng);
                let t = random_triple(basis, &mut rng);
                let s = random_triple(basis, &mut rng);
                let lhs = (grid.response(&u, &t, &act).unwrap() - grid.response(&u, &s, &act).unwrap()).abs();
                let bu = convolve(&t.b, &u).unwrap();
                let bu2 = convolve(&s.b, &u).unwrap();
                let rhs = diff(&t.a, &s.a) * act.growth * (1.0 + norm(&bu) + norm(&t.c))
                    + norm(&s.a) * act.lipschitz * (diff(&bu, &bu2) + diff(&t.c, &s.c));
                assert!(lhs <= rhs + 1e-12, "{kind:?}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn continuum_closed_forms() {
        let (table, grid) = circle_grid(9);
        let basis = Basis::Continuum { k: 9 };
        let constant = |v: f64| SpectralSignal::new(basis, [vec![v], vec![0.0; 8]].concat()).unwrap();
        let tanh = Activation::new(ActivationKind::Tanh);
        let theta = ParameterTriple::new(constant(0.7), constant(0.5), constant(-0.2), 1.0).unwrap();
        let psi = grid.response(&constant(1.3), &theta, &tanh).unwrap();
        assert!((psi - (0.5f64 * 1.3 - 0.2).tanh() * 0.7).abs() < 1e-13);

        // softplus far into its linear regime
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let softplus = Activation::new(ActivationKind::Softplus);
        let u = random_signal(basis, 0.3, &mut rng);
        let (a, b) = (random_signal(basis, 0.3, &mut rng), random_signal(basis, 0.3, &mut rng));
        let mut c = random_signal(basis, 0.3, &mut rng);
        c.coeffs[0] += 20.0;
        let linear: f64 = (0..9).map(|j| a.coeffs[j] * (b.coeffs[j] * u.coeffs[j] + c.coeffs[j])).sum();
        let theta = ParameterTriple::new(a, b, c, 0.0).unwrap();
        assert!((grid.response(&u, &theta, &softplus).unwrap() - linear).abs() < 1e-3);
        let _ = table;
    }

    #[test]
    fn high_frequency_inputs_are_damped() {
        let k = 41;
        let (table, grid) = circle_grid(k);
        let basis = Basis::Continuum { k };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let act = Activation::default();
        for _ in 0..5 {
            let theta = sample_parameters(&table.eigenvalues, basis, 1.0, 1, rng.random(), 1.0).unwrap().remove(0);
            let base = ParameterTriple::new(theta.a.clone(), SpectralSignal::zeros(basis), theta.c.clone(), 1.0).unwrap();
            for j in k / 2..k {
                let phi = SpectralSignal::unit(basis, j).unwrap();
                let gap = (grid.response(&phi, &theta, &act).unwrap() - grid.response(&phi, &base, &act).unwrap()).abs();
                assert!(gap <= theta.a.l2_norm() * act.lipschitz * theta.b.coeffs[j].abs() + 1e-12);
            }
        }
    }

    #[test]
    fn responses_are_bounded() {
        let (_, grid) = circle_grid(15);
        let basis = Basis::Continuum { k: 15 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Softplus] {
            let act = Activation::new(kind);
            for _ in 0..30 {
                let u = random_signal(basis, 1.5, &mut rng);
                let t = random_triple(basis, &mut rng);
                let bound = act.growth * (norm(&convolve(&t.b, &u).unwrap()) + norm(&t.c) + 1.0) * norm(&t.a);
                assert!(grid.response(&u, &t, &act).unwrap().abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn nodal_and_lifted_evaluations_agree() {
        let model = ManifoldModel::circle(1.0).unwrap();
        let n = 40;
        let cloud = model.sample_points(n, 11).unwrap();
        let plan = crate::transport::balanced_cells(&cloud, &model, 16, 12).unwrap();
        let grid = orthonormal_nodes(n, 5, 13);
        let basis = Basis::Discrete { n, k: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let act = Activation::default();
        for _ in 0..10 {
            let u = random_signal(basis, 1.0, &mut rng);
            let t = random_triple(basis, &mut rng);
            let nodal = grid.response(&u, &t, &act).unwrap();
            let a = plan.extend(&grid.synthesize(&t.a.coeffs));
            let z = plan.extend(&grid.synthesize(&convolve(&t.b, &u).unwrap().coeffs).iter().zip(grid.synthesize(&t.c.coeffs)).map(|(x, y)| x + y).collect::<Vec<_>>());
            let lifted = plan.aux_inner(&a, &z.iter().map(|x| act.eval(*x)).collect::<Vec<_>>());
            assert!((nodal - lifted).abs() < 1e-10, "{nodal} vs {lifted}");
        }
    }

    #[test]
    fn analysis_inverts_synthesis() {
        let grid = orthonormal_nodes(50, 6, 15);
        let coeffs = vec![0.3, -1.0, 0.0, 2.0, 0.5, -0.25];
        let back = grid.analyze(&grid.synthesize(&coeffs)).unwrap();
        for (x, y) in coeffs.iter().zip(back) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn network_linearity_and_merging() {
        let (table, grid) = circle_grid(9);
        let basis = Basis::Continuum { k: 9 };
        let act = Activation::default();
        let dict = sample_parameters(&table.eigenvalues, basis, 0.5, 3, 21, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let u = random_signal(basis, 1.0, &mut rng);

        let empty = MeasureNetwork::new(basis, 0.5);
        assert_eq!(empty.eval(&grid, &u, &act).unwrap(), 0.0);

        let mut single = MeasureNetwork::new(basis, 0.5);
        single.push(2.0, dict[0].clone()).unwrap();
        let psi = grid.response(&u, &dict[0], &act).unwrap();
        assert!((single.eval(&grid, &u, &act).unwrap() - 2.0 * psi).abs() < 1e-14);

        let mut net = MeasureNetwork::new(basis, 0.5);
        for (w, i) in [(0.5, 0), (-1.0, 1), (0.25, 0), (1.5, 2), (0.75, 1)] {
            net.push(w, dict[i].clone()).unwrap();
        }
        let merged = net.merged();
        assert_eq!(merged.atoms.len(), 3);
        assert!((net.eval(&grid, &u, &act).unwrap() - merged.eval(&grid, &u, &act).unwrap()).abs() < 1e-12);
        assert!((net.total_variation() - 4.0).abs() < 1e-15);

        let discrete = orthonormal_nodes(30, 9, 23);
        assert!(net.eval(&discrete, &u, &act).is_err());
        assert!(net.push(1.0, ParameterTriple::zeros(Basis::Continuum { k: 5 }, 0.5)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let (table, _) = circle_grid(7);
        let basis = Basis::Continuum { k: 7 };
        let mut net = MeasureNetwork::new(basis, 0.5);
        for (i, t) in sample_parameters(&table.eigenvalues, basis, 0.5, 4, 31, 1.0).unwrap().into_iter().enumerate() {
            net.push(i as f64 - 1.5, t).unwrap();
        }
        let json = net.to_json();
        assert_eq!(json["atoms"].as_array().unwrap().len(), 4);
        assert!(json["atoms"][0]["omega"].is_number());
        let back = MeasureNetwork::from_json(&json).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn sampled_dictionaries() {
        let table = ManifoldModel::circle(1.0).unwrap().continuum_spectrum(11);
        let basis = Basis::Continuum { k: 11 };
        let eigs = &table.eigenvalues;
        let d = sample_parameters(eigs, basis, 0.7, 40, 41, 1.0).unwrap();
        assert_eq!(d, sample_parameters(eigs, basis, 0.7, 40, 41, 1.0).unwrap());
        assert_ne!(d, sample_parameters(eigs, basis, 0.7, 40, 42, 1.0).unwrap());
        for t in &d {
            assert!(t.in_ball(eigs, 1e-12).unwrap());
        }
        for t in sample_parameters(eigs, basis, 0.0, 40, 43, 0.0).unwrap() {
            for s in [&t.a, &t.b, &t.c] {
                assert!(h_alpha_norm(s, 0.0, eigs).unwrap() <= 1.0 + 1e-12);
            }
        }
        assert!(sample_parameters(eigs, basis, 0.7, 0, 1, 1.0).is_err());
    }
}
