//! TOML experiment configuration.
//!
//! Every key is optional; the defaults reproduce the reference runs. Complex
//! numbers are written as `[re, im]`.

use std::path::Path;

use cpflow::{Complex64 as C, LambdaKind, LambdaSequence};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub tensor: TensorConfig,
    pub lambda: LambdaConfig,
    pub series: SeriesConfig,
    pub seeds: SeedConfig,
    /// Commands run by `batch`.
    pub experiments: Vec<String>,
    pub delta: DeltaConfig,
    pub decay: DecayConfig,
    pub covariance: CovarianceConfig,
    pub gauge: GaugeConfig,
    pub transitivity: TransitivityConfig,
    pub corner: CornerConfig,
    pub weights_unitality: UnitalityConfig,
}


#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub length: f64,
    /// Cells of the coarsest grid.
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            length: 8.0,
            points: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TensorConfig {
    pub factors: usize,
    pub factor_dim: usize,
}

impl Default for TensorConfig {
    fn default() -> Self {
        Self {
            factors: 4,
            factor_dim: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaChoice {
    Linear,
    Geometric,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaConfig {
    pub kind: LambdaChoice,
    pub values: Vec<f64>,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        Self {
            kind: LambdaChoice::Linear,
            values: Vec::new(),
        }
    }
}

impl LambdaConfig {
    pub fn sequence(&self) -> cpflow::Result<LambdaSequence> {
        LambdaSequence::new(match self.kind {
            LambdaChoice::Linear => LambdaKind::Linear,
            LambdaChoice::Geometric => LambdaKind::Geometric,
            LambdaChoice::Custom => LambdaKind::Custom(self.values.clone()),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesConfig {
    pub tail_tolerance: f64,
    pub max_terms: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        let d = cpflow::WeightSeriesConfig::default();
        Self {
            tail_tolerance: d.tail_tolerance,
            max_terms: d.max_terms,
        }
    }
}

impl SeriesConfig {
    pub fn weights(&self) -> cpflow::WeightSeriesConfig {
        cpflow::WeightSeriesConfig {
            max_terms: self.max_terms,
            tail_tolerance: self.tail_tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub rng: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { rng: 20240611 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaConfig {
    pub factors: usize,
    pub tolerance: f64,
}

impl Default for DeltaConfig {
    fn default() -> Self {
        Self {
            factors: 8,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub head_length: usize,
    pub n_max: usize,
    pub tolerance: f64,
    pub samples: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            head_length: 3,
            n_max: 12,
            tolerance: 1e-12,
            samples: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub labels: Vec<[f64; 2]>,
    pub t: f64,
    /// Grid halvings beyond the coarsest grid; `--refine` overrides.
    pub refinements: usize,
    pub min_order: f64,
    /// Residuals below this are treated as exact and exempt from the order test.
    pub exact_floor: f64,
    pub gram_tolerance: f64,
    pub dim: usize,
    /// Random exponential-kernel functions for the analytic/grid comparison.
    pub backend_samples: usize,
    pub backend_min_order: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            labels: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            t: 1.0,
            refinements: 2,
            min_order: 0.8,
            exact_floor: 1e-13,
            gram_tolerance: 1e-12,
            dim: 2,
            backend_samples: 50,
            backend_min_order: 0.9,
        }
    }
}

impl CovarianceConfig {
    pub fn labels(&self) -> Vec<C> {
        self.labels.iter().map(|z| C::new(z[0], z[1])).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaugeConfig {
    pub triples: usize,
    pub r_samples: usize,
    pub pairs: usize,
    pub zs_per_pair: usize,
    pub tolerance: f64,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self {
            triples: 1000,
            r_samples: 100_000,
            pairs: 200,
            zs_per_pair: 4,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allowed {
    /// `a = 1`.
    A1,
    /// `|a| = 1`.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Reachable,
    Unreachable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairCase {
    pub src: [[f64; 2]; 2],
    pub dst: [[f64; 2]; 2],
    pub allowed: Allowed,
    pub expect: Expectation,
    /// Expected witness `a` or obstruction `a`.
    pub a: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitivityConfig {
    pub cases: Vec<PairCase>,
    pub random_pairs: usize,
    pub tolerance: f64,
}

impl Default for TransitivityConfig {
    fn default() -> Self {
        let case = |allowed, expect, a| PairCase {
            src: [[0.0, 0.0], [1.0, 0.0]],
            dst: [[0.0, 0.0], [0.0, 1.0]],
            allowed,
            expect,
            a: Some(a),
        };
        Self {
            cases: vec![
                case(Allowed::A1, Expectation::Unreachable, [0.0, 1.0]),
                case(Allowed::Euclidean, Expectation::Reachable, [0.0, 1.0]),
            ],
            random_pairs: 100,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CornerConfig {
    pub ts: Vec<f64>,
    pub z: [f64; 2],
    /// Rates `s` of the half-line output vectors `e^{−sx}` (orthonormalised).
    pub output_rates: Vec<f64>,
    /// `ν = |k ⊗ √(2s) e^{−sx}⟩⟨·|` with this `s`.
    pub nu_rate: f64,
    pub tolerance: f64,
    pub gap_floor: f64,
    /// Multiples of `ξ` added to the off-diagonal.
    pub perturbation_scales: Vec<f64>,
}

impl Default for CornerConfig {
    fn default() -> Self {
        Self {
            ts: vec![0.5, 0.25],
            z: [-1.0, 0.0],
            output_rates: vec![1.0, 2.0],
            nu_rate: 1.0,
            tolerance: 1e-8,
            gap_floor: 1e-6,
            perturbation_scales: vec![0.25],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitalityConfig {
    pub factors: usize,
    pub factor_dim: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub nu_rate: f64,
}

impl Default for UnitalityConfig {
    fn default() -> Self {
        Self {
            factors: 4,
            factor_dim: 3,
            samples: 100,
            tolerance: 1e-8,
            nu_rate: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every problem before failing.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.grid.length > 0.0 && self.grid.length.is_finite(), "grid.length must be positive");
        need(self.grid.points >= 8, "grid.points must be at least 8");
        need(self.tensor.factors >= 1, "tensor.factors must be at least 1");
        need(self.tensor.factor_dim >= 1, "tensor.factor_dim must be at least 1");
        need(
            self.tensor.factor_dim.pow(self.tensor.factors.min(16) as u32) <= 4096,
            "tensor.factor_dim^tensor.factors must not exceed 4096",
        );
        if let Err(e) = self.lambda.sequence() {
            errs.push(format!("lambda: {e}"));
        }
        if self.lambda.kind != LambdaChoice::Custom && !self.lambda.values.is_empty() {
            errs.push("lambda.values only applies to kind = \"custom\"".into());
        }
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.series.tail_tolerance > 0.0, "series.tail_tolerance must be positive");
        need(self.series.max_terms >= 32, "series.max_terms must be at least 32");
        need(self.delta.factors >= 1, "delta.factors must be at least 1");
        need(self.delta.tolerance > 0.0, "delta.tolerance must be positive");
        need(self.decay.head_length >= 1, "decay.head_length must be at least 1");
        need(self.decay.n_max >= self.decay.head_length, "decay.n_max must be at least decay.head_length");
        need(self.decay.samples >= 1, "decay.samples must be at least 1");
        need(!self.covariance.labels.is_empty(), "covariance.labels must not be empty");
        need(self.covariance.t > 0.0, "covariance.t must be positive");
        need(
            self.covariance.t < self.grid.length,
            "covariance.t must be shorter than grid.length",
        );
        need(self.covariance.dim >= 1, "covariance.dim must be at least 1");
        need(self.covariance.refinements <= 6, "covariance.refinements must be at most 6");
        need(self.gauge.triples >= 1, "gauge.triples must be at least 1");
        need(self.gauge.r_samples >= 1, "gauge.r_samples must be at least 1");
        need(self.gauge.pairs >= 1, "gauge.pairs must be at least 1");
        need(self.gauge.zs_per_pair >= 1, "gauge.zs_per_pair must be at least 1");
        need(
            self.corner.ts.iter().all(|t| *t > 0.0) && !self.corner.ts.is_empty(),
            "corner.ts must be a nonempty list of positive times",
        );
        need(
            (C::new(self.corner.z[0], self.corner.z[1]).norm() - 1.0).abs() < 1e-12,
            "corner.z must lie on the unit circle",
        );
        need(
            !self.corner.output_rates.is_empty() && self.corner.output_rates.iter().all(|s| *s > 0.0),
            "corner.output_rates must be a nonempty list of positive rates",
        );
        need(self.corner.nu_rate > 0.0, "corner.nu_rate must be positive");
        need(self.weights_unitality.samples >= 1, "weights_unitality.samples must be at least 1");
        need(self.weights_unitality.nu_rate > 0.0, "weights_unitality.nu_rate must be positive");
        need(
            self.weights_unitality.factor_dim.pow(self.weights_unitality.factors.min(16) as u32) <= 4096,
            "weights_unitality.factor_dim^factors must not exceed 4096",
        );
        for name in &self.experiments {
            if crate::Command::from_name(name).is_none() {
                errs.push(format!("experiments: unknown command {name:?}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.delta.factors, 8);
        assert_eq!(cfg.corner.ts, vec![0.5, 0.25]);
    }

    #[test]
    fn errors_are_aggregated() {
        let cfg: ExperimentConfig = toml::from_str(
            "[grid]\nlength = -1.0\n[corner]\nz = [0.5, 0.0]\n[covariance]\nt = 0.0\n",
        )
        .unwrap();
        let Err(CliError::Config(errs)) = cfg.validate() else {
            panic!("expected validation failure");
        };
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[grid]\nlenght = 1.0\n").is_err());
    }

    #[test]
    fn custom_lambda_round_trip() {
        let cfg: ExperimentConfig = toml::from_str("[lambda]\nkind = \"custom\"\nvalues = [1.0, 2.5]\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lambda.sequence().unwrap().lambda(2), 2.5);
    }
}
