//! Cutoff schedules, `H^α` geometry, spectral convolution and the spectral
//! discretization/extension maps between continuum and graph signals.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GcnnError, Result};
use crate::manifold::{ManifoldModel, SpectrumTable};
use crate::spectra::SpectralFrame;

/// Orthonormal eigenbasis a coefficient vector refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// First `k` Laplace–Beltrami eigenfunctions.
    Continuum { k: usize },
    /// First `k` graph eigenvectors at resolution `n`.
    Discrete { n: usize, k: usize },
}

impl Basis {
    pub fn len(&self) -> usize {
        match *self {
            Basis::Continuum { k } | Basis::Discrete { k, .. } => k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Signal stored by its coefficients in an orthonormal eigenbasis, so the
/// `L²` norm is the Euclidean norm of `coeffs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSignal {
    pub basis: Basis,
    pub coeffs: Vec<f64>,
}

impl SpectralSignal {
    pub fn new(basis: Basis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(invalid(format!("{} coefficients for a basis of length {}", coeffs.len(), basis.len())));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite coefficient"));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Basis) -> Self {
        Self { basis, coeffs: vec![0.0; basis.len()] }
    }

    /// `j`-th basis element (0-based).
    pub fn unit(basis: Basis, j: usize) -> Result<Self> {
        if j >= basis.len() {
            return Err(GcnnError::OutOfRange { index: j, len: basis.len() });
        }
        let mut s = Self::zeros(basis);
        s.coeffs[j] = 1.0;
        Ok(s)
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Same coefficients re-indexed to a longer or shorter basis of the same
    /// family, padding with zeros or truncating.
    pub fn resized(&self, k: usize) -> Self {
        let basis = match self.basis {
            Basis::Continuum { .. } => Basis::Continuum { k },
            Basis::Discrete { n, .. } => Basis::Discrete { n, k },
        };
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(k, 0.0);
        Self { basis, coeffs }
    }

    fn same_family(&self, other: &Self) -> bool {
        match (self.basis, other.basis) {
            (Basis::Continuum { .. }, Basis::Continuum { .. }) => true,
            (Basis::Discrete { n: a, .. }, Basis::Discrete { n: b, .. }) => a == b,
            _ => false,
        }
    }
}

/// `(1 + √λ)^{2α}` with negative round-off in `λ` clamped to zero.
pub fn h_alpha_weight(lambda: f64, alpha: f64) -> f64 {
    (1.0 + lambda.max(0.0).sqrt()).powf(2.0 * alpha)
}

/// `Σ_k (1 + √λ_k)^{2α} u_k v_k`; `eigenvalues` must cover the basis.
pub fn h_alpha_inner(u: &SpectralSignal, v: &SpectralSignal, alpha: f64, eigenvalues: &[f64]) -> Result<f64> {
    if u.basis != v.basis {
        return Err(invalid(format!("basis mismatch: {:?} vs {:?}", u.basis, v.basis)));
    }
    if eigenvalues.len() < u.coeffs.len() {
        return Err(GcnnError::OutOfRange { index: u.coeffs.len(), len: eigenvalues.len() });
    }
    Ok(u.coeffs
        .iter()
        .zip(&v.coeffs)
        .zip(eigenvalues)
        .map(|((a, b), &l)| h_alpha_weight(l, alpha) * a * b)
        .sum())
}

pub fn h_alpha_norm(u: &SpectralSignal, alpha: f64, eigenvalues: &[f64]) -> Result<f64> {
    Ok(h_alpha_inner(u, u, alpha, eigenvalues)?.sqrt())
}

/// Coefficientwise product `(b ∗ u)_k = b_k u_k`.
///
/// Signals of one family but different truncation are multiplied on the
/// shorter support, which is exact because the missing coefficients are zero.
pub fn convolve(b: &SpectralSignal, u: &SpectralSignal) -> Result<SpectralSignal> {
    if !b.same_family(u) {
        return Err(invalid(format!("basis mismatch: {:?} vs {:?}", b.basis, u.basis)));
    }
    let k = b.coeffs.len().min(u.coeffs.len());
    let short = if b.coeffs.len() <= u.coeffs.len() { b.basis } else { u.basis };
    Ok(SpectralSignal { basis: short, coeffs: (0..k).map(|i| b.coeffs[i] * u.coeffs[i]).collect() })
}

/// Radial projection onto the unit `H^α` ball.
pub fn project_to_ball(signal: &SpectralSignal, alpha: f64, eigenvalues: &[f64]) -> Result<SpectralSignal> {
    let norm = h_alpha_norm(signal, alpha, eigenvalues)?;
    if norm <= 1.0 {
        return Ok(signal.clone());
    }
    Ok(SpectralSignal { basis: signal.basis, coeffs: signal.coeffs.iter().map(|c| c / norm).collect() })
}

/// Scaling `((1 + √λ_k)/(1 + √λ_k^{(n)}))^α` of the discretization map.
fn scaling(frame: &SpectralFrame, alpha: f64) -> Result<Vec<f64>> {
    let disc = &frame.discrete.eigenvalues;
    if disc.len() < frame.k_n || frame.continuum_eigenvalues.len() < frame.k_n {
        return Err(GcnnError::InvalidState(format!(
            "frame holds {} discrete and {} continuum eigenvalues, K(n) = {}",
            disc.len(),
            frame.continuum_eigenvalues.len(),
            frame.k_n
        )));
    }
    Ok((0..frame.k_n)
        .map(|k| {
            let c = 1.0 + frame.continuum_eigenvalues[k].max(0.0).sqrt();
            let d = 1.0 + disc[k].max(0.0).sqrt();
            (c / d).powf(alpha)
        })
        .collect())
}

fn discrete_basis(frame: &SpectralFrame) -> Basis {
    Basis::Discrete { n: frame.discrete.n(), k: frame.k_n }
}

/// `S_{n,α} v`: continuum coefficients rotated into the aligned basis,
/// truncated to `K(n)` and rescaled.
pub fn spectral_discretize(v: &SpectralSignal, alpha: f64, frame: &SpectralFrame) -> Result<SpectralSignal> {
    if !matches!(v.basis, Basis::Continuum { .. }) {
        return Err(invalid("spectral_discretize expects a continuum signal"));
    }
    let scale = scaling(frame, alpha)?;
    let at = |l: usize| v.coeffs.get(l).copied().unwrap_or(0.0);
    let mut out = vec![0.0; frame.k_n];
    for (block, r) in frame.blocks.iter().zip(&frame.mixing) {
        for (j, k) in block.clone().enumerate() {
            let aligned: f64 = block.clone().enumerate().map(|(i, l)| r[(i, j)] * at(l)).sum();
            out[k] = scale[k] * aligned;
        }
    }
    Ok(SpectralSignal { basis: discrete_basis(frame), coeffs: out })
}

/// `S*_{n,α} w`, returned with `k_cont ≥ K(n)` continuum coefficients.
pub fn spectral_extend(w: &SpectralSignal, alpha: f64, frame: &SpectralFrame, k_cont: usize) -> Result<SpectralSignal> {
    match w.basis {
        Basis::Discrete { n, .. } if n == frame.discrete.n() => {}
        _ => return Err(invalid(format!("spectral_extend expects a discrete signal at n = {}", frame.discrete.n()))),
    }
    if k_cont < frame.k_n {
        return Err(invalid(format!("k_cont = {k_cont} below K(n) = {}", frame.k_n)));
    }
    let scale = scaling(frame, alpha)?;
    let at = |k: usize| w.coeffs.get(k).copied().unwrap_or(0.0);
    let mut out = vec![0.0; k_cont];
    for (block, r) in frame.blocks.iter().zip(&frame.mixing) {
        for (i, l) in block.clone().enumerate() {
            out[l] = block.clone().enumerate().map(|(j, k)| r[(i, j)] * at(k) / scale[k]).sum();
        }
    }
    Ok(SpectralSignal { basis: Basis::Continuum { k: k_cont }, coeffs: out })
}

/// Network parameters `θ = (a, b, c)` with regularity `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTriple {
    pub a: SpectralSignal,
    pub b: SpectralSignal,
    pub c: SpectralSignal,
    pub alpha: f64,
}

impl ParameterTriple {
    pub fn new(a: SpectralSignal, b: SpectralSignal, c: SpectralSignal, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if a.basis != b.basis || b.basis != c.basis {
            return Err(invalid("triple components must share a basis"));
        }
        Ok(Self { a, b, c, alpha })
    }

    pub fn zeros(basis: Basis, alpha: f64) -> Self {
        let z = SpectralSignal::zeros(basis);
        Self { a: z.clone(), b: z.clone(), c: z, alpha }
    }

    pub fn basis(&self) -> Basis {
        self.a.basis
    }

    /// `(‖a‖_{H^α}, ‖b‖_{L²}, ‖c‖_{H^α})`.
    pub fn norms(&self, eigenvalues: &[f64]) -> Result<[f64; 3]> {
        Ok([
            h_alpha_norm(&self.a, self.alpha, eigenvalues)?,
            self.b.l2_norm(),
            h_alpha_norm(&self.c, self.alpha, eigenvalues)?,
        ])
    }

    /// Membership in the parameter ball up to `tol`.
    pub fn in_ball(&self, eigenvalues: &[f64], tol: f64) -> Result<bool> {
        Ok(self.norms(eigenvalues)?.iter().all(|&x| x <= 1.0 + tol))
    }

    pub fn project(&self, eigenvalues: &[f64]) -> Result<Self> {
        Ok(Self {
            a: project_to_ball(&self.a, self.alpha, eigenvalues)?,
            b: project_to_ball(&self.b, 0.0, eigenvalues)?,
            c: project_to_ball(&self.c, self.alpha, eigenvalues)?,
            alpha: self.alpha,
        })
    }
}

/// `Q_{n,α} θ = (S_{n,α} a, S_n b, S_{n,α} c)`.
pub fn param_project(theta: &ParameterTriple, frame: &SpectralFrame) -> Result<ParameterTriple> {
    Ok(ParameterTriple {
        a: spectral_discretize(&theta.a, theta.alpha, frame)?,
        b: spectral_discretize(&theta.b, 0.0, frame)?,
        c: spectral_discretize(&theta.c, theta.alpha, frame)?,
        alpha: theta.alpha,
    })
}

/// `Q*_{n,α} θ_n = (S*_{n,α} a, S*_n b, S*_{n,α} c)`.
pub fn param_extend(theta: &ParameterTriple, frame: &SpectralFrame, k_cont: usize) -> Result<ParameterTriple> {
    Ok(ParameterTriple {
        a: spectral_extend(&theta.a, theta.alpha, frame, k_cont)?,
        b: spectral_extend(&theta.b, 0.0, frame, k_cont)?,
        c: spectral_extend(&theta.c, theta.alpha, frame, k_cont)?,
        alpha: theta.alpha,
    })
}

/// One ladder level as seen by the cutoff schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSpec {
    pub n: usize,
    pub h: f64,
    pub eps_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffRecord {
    pub n: usize,
    pub h: f64,
    pub eps_hat: f64,
    pub k_tilde: usize,
    pub k_n: usize,
    /// Whether `(m+5)ε < h < min{1, i₀/10, 1/√(mK), R/√(27m)}` holds.
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffSchedule {
    pub records: Vec<CutoffRecord>,
    pub warnings: Vec<String>,
}

/// Upper end of the admissible bandwidth window.
pub fn bandwidth_ceiling(model: &ManifoldModel) -> f64 {
    let m = model.m as f64;
    let curv = if model.curvature_bound > 0.0 { 1.0 / (m * model.curvature_bound).sqrt() } else { f64::INFINITY };
    1f64.min(model.injectivity_radius / 10.0).min(curv).min(model.reach / (27.0 * m).sqrt())
}

fn floor_pow(h: f64, exponent: f64) -> usize {
    // guards against 0.04^{-1/2} landing just below 5
    (h.powf(-exponent) * (1.0 + 1e-12)).floor() as usize
}

/// `K̃(n)` from the bandwidth and the gap exponent `β*`, and `K(n)` as the end
/// of the continuum block containing it.
pub fn cutoff_schedule(
    ladder: &[LevelSpec],
    model: &ManifoldModel,
    beta_star: f64,
    table: &SpectrumTable,
) -> Result<CutoffSchedule> {
    let m = model.m as f64;
    let exponent = if beta_star + (m + 1.0) / (2.0 * m) >= 1.0 { m / (2.0 * m * beta_star + m + 1.0) } else { 0.5 };
    schedule_with(ladder, model, table, |lvl| floor_pow(lvl.h, exponent))
}

/// Schedule with a fixed `K̃` at every level.
pub fn fixed_cutoff_schedule(
    ladder: &[LevelSpec],
    model: &ManifoldModel,
    k_tilde: usize,
    table: &SpectrumTable,
) -> Result<CutoffSchedule> {
    schedule_with(ladder, model, table, |_| k_tilde)
}

fn schedule_with(
    ladder: &[LevelSpec],
    model: &ManifoldModel,
    table: &SpectrumTable,
    rule: impl Fn(&LevelSpec) -> usize,
) -> Result<CutoffSchedule> {
    if ladder.is_empty() {
        return Err(invalid("empty ladder"));
    }
    let ceiling = bandwidth_ceiling(model);
    let m = model.m as f64;
    let mut records = Vec::with_capacity(ladder.len());
    let mut warnings = Vec::new();
    for lvl in ladder {
        if !(lvl.h > 0.0) || lvl.n == 0 {
            return Err(invalid(format!("level n = {} has bandwidth {}", lvl.n, lvl.h)));
        }
        let k_tilde = rule(lvl).clamp(1, lvl.n);
        let k_n = table.block_end(k_tilde)?;
        if k_n > lvl.n {
            return Err(invalid(format!("K(n) = {k_n} exceeds n = {}", lvl.n)));
        }
        let admissible = (m + 5.0) * lvl.eps_hat < lvl.h && lvl.h < ceiling;
        if !admissible {
            warnings.push(format!(
                "n = {}: h = {:.4} outside the admissible window ({:.4}, {:.4})",
                lvl.n,
                lvl.h,
                (m + 5.0) * lvl.eps_hat,
                ceiling
            ));
        }
        if let Some(prev) = records.last().map(|r: &CutoffRecord| r.k_tilde) {
            if k_tilde < prev {
                warnings.push(format!("n = {}: K̃ = {k_tilde} decreases from {prev}", lvl.n));
            }
        }
        records.push(CutoffRecord { n: lvl.n, h: lvl.h, eps_hat: lvl.eps_hat, k_tilde, k_n, admissible });
    }
    Ok(CutoffSchedule { records, warnings })
}
