//! Experiment configuration, read from a single JSON document.

use std::path::{Path, PathBuf};

use manifold_gcnn::erm::{Loss, Restriction};
use manifold_gcnn::graph::KernelShape;
use manifold_gcnn::manifold::ManifoldKind;
use manifold_gcnn::network::{ActivationKind, ConvolutionBasis};
use manifold_gcnn::spectra::SolverKind;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Bandwidth per ladder level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum HRule {
    /// `h_n = √ε̂_n` with `ε̂_n` from the transport plan.
    SqrtEps,
    /// One bandwidth per ladder entry.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffConfig {
    /// Fixed `K̃` at every level; `None` applies the gap-exponent rule.
    pub k_tilde: Option<usize>,
    /// Continuum truncation of signals; `None` means the block end of `4·K`.
    pub k_cont: Option<usize>,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self { k_tilde: Some(3), k_cont: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseConfig {
    pub dictionary_size: usize,
    pub signals: usize,
    /// Coefficient decay `(1 + √λ)^{-s}` of dictionaries and signals.
    pub decay: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self { dictionary_size: 64, signals: 8, decay: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpsConfig {
    pub n: usize,
    pub draws: usize,
    /// Largest complete graph of the closed-form check.
    pub complete_max: usize,
    /// Size of the dense-versus-iterative eigensolver comparison.
    pub solver_n: usize,
}

impl Default for OpsConfig {
    fn default() -> Self {
        Self { n: 500, draws: 100, complete_max: 6, solver_n: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub l: usize,
    pub dictionary_size: usize,
    /// `ζ = zeta_rel · ζ_max` of the continuum problem, shared by all levels.
    pub zeta_rel: f64,
    pub seeds: Vec<u64>,
    pub restriction: Restriction,
    pub loss: Loss,
    pub heldout: usize,
    pub teacher_weights: Vec<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            l: 16,
            dictionary_size: 256,
            zeta_rel: 1e-3,
            seeds: vec![0, 1, 2, 3, 4],
            restriction: Restriction::Spectral,
            loss: Loss::Squared,
            heldout: 8,
            teacher_weights: vec![1.0, -0.7, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub a_sq_inv: Vec<f64>,
    pub lambda_max: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { a_sq_inv: vec![2.0, std::f64::consts::SQRT_2], lambda_max: 1e4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: ManifoldKind,
    pub ladder: Vec<usize>,
    /// Repetitions of every ladder level for spectra and responses.
    pub seeds: Vec<u64>,
    pub h_rule: HRule,
    pub kernel: KernelShape,
    /// Auxiliary points per cloud point in the transport plan.
    pub g_factor: usize,
    pub eig_count: usize,
    pub solver: SolverKind,
    pub alpha: f64,
    pub activation: ActivationKind,
    pub convolution: ConvolutionBasis,
    pub cutoff: CutoffConfig,
    pub response: ResponseConfig,
    pub ops: OpsConfig,
    pub training: TrainingConfig,
    pub gap: GapConfig,
    pub output: PathBuf,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifold: ManifoldKind::Circle { radius: 1.0 },
            ladder: vec![250, 500, 1000, 2000],
            seeds: vec![0, 1, 2],
            h_rule: HRule::SqrtEps,
            kernel: KernelShape::Indicator,
            g_factor: 50,
            eig_count: 11,
            solver: SolverKind::ShiftInvert,
            alpha: 0.5,
            activation: ActivationKind::Tanh,
            convolution: ConvolutionBasis::Aligned,
            cutoff: CutoffConfig::default(),
            response: ResponseConfig::default(),
            ops: OpsConfig::default(),
            training: TrainingConfig::default(),
            gap: GapConfig::default(),
            output: PathBuf::from("lab-out"),
            master_seed: 0,
        }
    }
}

fn ensure(ok: bool, field: &str, message: impl Into<String>) -> LabResult<()> {
    if ok {
        Ok(())
    } else {
        Err(LabError::config(field, message))
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> LabResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config {
            field: "--config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> LabResult<()> {
        ensure(!self.ladder.is_empty(), "ladder", "must not be empty")?;
        ensure(self.ladder.windows(2).all(|w| w[0] < w[1]), "ladder", "must be strictly increasing")?;
        ensure(self.ladder[0] >= 2, "ladder", "every level needs at least 2 points")?;
        ensure(self.alpha > 0.0 && self.alpha <= 1.0, "alpha", format!("must lie in (0, 1], got {}", self.alpha))?;
        ensure(!self.seeds.is_empty(), "seeds", "must not be empty")?;
        ensure(!self.training.seeds.is_empty(), "training.seeds", "must not be empty")?;
        ensure(self.g_factor >= 16, "g_factor", "must be at least 16")?;
        ensure(self.eig_count >= 2, "eig_count", "must be at least 2")?;
        ensure(self.eig_count <= self.ladder[0], "eig_count", "exceeds the smallest ladder level")?;
        if let HRule::Explicit { values } = &self.h_rule {
            ensure(values.len() == self.ladder.len(), "h_rule.values", "needs one bandwidth per ladder level")?;
            ensure(values.iter().all(|h| *h > 0.0 && h.is_finite()), "h_rule.values", "bandwidths must be positive")?;
        }
        if let Some(k) = self.cutoff.k_tilde {
            ensure(k >= 1 && k <= self.eig_count, "cutoff.k_tilde", format!("must lie in 1..={}", self.eig_count))?;
        }
        if let Some(k) = self.cutoff.k_cont {
            ensure(k >= 1, "cutoff.k_cont", "must be positive")?;
        }
        ensure(self.response.dictionary_size >= 1, "response.dictionary_size", "must be positive")?;
        ensure(self.response.signals >= 1, "response.signals", "must be positive")?;
        ensure(self.response.decay >= 0.0, "response.decay", "must be nonnegative")?;
        ensure(self.ops.n >= self.eig_count, "ops.n", "must be at least eig_count")?;
        ensure(self.ops.draws >= 1, "ops.draws", "must be positive")?;
        ensure(self.ops.complete_max >= 2, "ops.complete_max", "must be at least 2")?;
        ensure(self.ops.solver_n >= self.eig_count, "ops.solver_n", "must be at least eig_count")?;
        ensure(self.training.l >= 1, "training.l", "must be positive")?;
        ensure(self.training.dictionary_size >= 1, "training.dictionary_size", "must be positive")?;
        ensure(self.training.zeta_rel > 0.0, "training.zeta_rel", "must be positive")?;
        ensure(self.training.heldout >= 1, "training.heldout", "must be positive")?;
        ensure(!self.training.teacher_weights.is_empty(), "training.teacher_weights", "must not be empty")?;
        ensure(self.gap.lambda_max > 0.0, "gap.lambda_max", "must be positive")?;
        ensure(self.gap.a_sq_inv.iter().all(|a| *a > 0.0), "gap.a_sq_inv", "must be positive")?;
        Ok(())
    }

    /// Default configuration as pretty JSON, printed by `--help`.
    pub fn schema_example() -> String {
        serde_json::to_string_pretty(&Self::default()).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = ExperimentConfig::schema_example();
        let cfg = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json_str("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn invariants_name_the_field() {
        let cases = [
            (r#"{"ladder": [500, 250]}"#, "ladder"),
            (r#"{"alpha": 0.0}"#, "alpha"),
            (r#"{"alpha": 1.5}"#, "alpha"),
            (r#"{"seeds": []}"#, "seeds"),
            (r#"{"training": {"seeds": []}}"#, "training.seeds"),
            (r#"{"h_rule": {"rule": "explicit", "values": [0.3]}}"#, "h_rule.values"),
        ];
        for (text, field) in cases {
            match ExperimentConfig::from_json_str(text) {
                Err(e @ LabError::Config { .. }) => {
                    assert!(e.to_string().contains(field), "{e}");
                    assert_eq!(e.exit_code(), 2);
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_json_str(r#"{"ladderr": [1]}"#).unwrap_err();
        assert!(err.to_string().contains("ladderr"));
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::from_json_str(r#"{"training": {"lr": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("lr"));
    }

    #[test]
    fn alpha_one_and_explicit_rule_accepted() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"alpha": 1.0, "ladder": [250, 500], "h_rule": {"rule": "explicit", "values": [0.5, 0.4]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.h_rule, HRule::Explicit { values: vec![0.5, 0.4] });
    }
}
