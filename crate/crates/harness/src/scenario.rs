//! Scenario configuration: grid source, synthetic-world knobs, attack
//! sweep, estimator selection, and reproducibility seeds. Validation
//! errors carry the offending field path.

use serde::{Deserialize, Serialize};

use rse_core::model::GridSpec;
use rse_core::{Error, Result};

/// Where the grid comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSource {
    /// Named bundled grid ("ieee14").
    Builtin(String),
    /// Path to a GridSpec JSON file.
    Path(String),
    /// Inline grid spec.
    Inline(GridSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseStd {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl NoiseStd {
    pub fn resolve(&self, m: usize, field: &str) -> Result<Vec<f64>> {
        let v = match self {
            NoiseStd::Scalar(s) => vec![*s; m],
            NoiseStd::PerChannel(v) => {
                if v.len() != m {
                    return Err(Error::Config(format!(
                        "{field}: expected {m} entries, found {}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if v.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::Config(format!("{field}: entries must be finite and >= 0")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GprConfig {
    pub amplitude: f64,
    pub lengthscale: f64,
    pub train_size: usize,
    /// kernel noise level; defaults to the measurement noise (floored)
    #[serde(default)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxConfig {
    /// number of auxiliary channels p
    pub dim: usize,
    pub noise_std: f64,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self { dim: 3, noise_std: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateConfig {
    /// operating point; defaults to a deterministic spread of angles
    #[serde(default)]
    pub nominal: Option<Vec<f64>>,
    /// standard scale of state deviations around the nominal
    pub spread: f64,
    /// dimension of the latent factor driving state deviations
    pub latent_dim: usize,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self { nominal: None, spread: 0.1, latent_dim: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackSweep {
    /// bias selected sensors by `factor`·|y| along random signs; one sweep
    /// point per percentage of attacked sensors
    SensorBias { factor: f64, percents: Vec<f64> },
    /// stealthy range-space attacks biasing `count` states by a fraction
    StateTargeted { bias_fraction: f64, target_counts: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    LeastSquares,
    ReweightedL1,
    ReweightedL1Prior,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::LeastSquares => "least-squares",
            EstimatorKind::ReweightedL1 => "reweighted-l1",
            EstimatorKind::ReweightedL1Prior => "reweighted-l1-prior",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "least-squares" => Ok(EstimatorKind::LeastSquares),
            "reweighted-l1" => Ok(EstimatorKind::ReweightedL1),
            "reweighted-l1-prior" => Ok(EstimatorKind::ReweightedL1Prior),
            other => Err(Error::Config(format!(
                "estimators: unknown estimator `{other}` (expected least-squares, \
                 reweighted-l1, reweighted-l1-prior)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderSettings {
    /// damping = damping_factor·‖y‖∞
    pub damping_factor: f64,
    pub max_reweight_iters: usize,
    pub convergence_tol: f64,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        Self { damping_factor: 1e-4, max_reweight_iters: 5, convergence_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub grid: GridSource,
    pub noise_std: NoiseStd,
    pub gpr: GprConfig,
    #[serde(default)]
    pub aux: AuxConfig,
    #[serde(default)]
    pub state: StateConfig,
    pub attack: AttackSweep,
    pub estimators: Vec<EstimatorKind>,
    pub trials: usize,
    pub success_threshold: f64,
    pub master_seed: u64,
    pub tau: f64,
    #[serde(default)]
    pub decoder: DecoderSettings,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials: must be >= 1".into()));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::Config("success_threshold: must be > 0".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config("tau: must be in (0,1)".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators: must list at least one".into()));
        }
        if self.gpr.train_size == 0 {
            return Err(Error::Config("gpr.train_size: must be >= 1".into()));
        }
        if !(self.gpr.amplitude > 0.0) {
            return Err(Error::Config("gpr.amplitude: must be > 0".into()));
        }
        if !(self.gpr.lengthscale > 0.0) {
            return Err(Error::Config("gpr.lengthscale: must be > 0".into()));
        }
        if self.aux.dim == 0 {
            return Err(Error::Config("aux.dim: must be >= 1".into()));
        }
        if self.aux.noise_std < 0.0 {
            return Err(Error::Config("aux.noise_std: must be >= 0".into()));
        }
        if self.state.latent_dim == 0 {
            return Err(Error::Config("state.latent_dim: must be >= 1".into()));
        }
        if !(self.state.spread > 0.0) {
            return Err(Error::Config("state.spread: must be > 0".into()));
        }
        if !(self.decoder.damping_factor > 0.0) {
            return Err(Error::Config("decoder.damping_factor: must be > 0".into()));
        }
        if self.decoder.max_reweight_iters == 0 {
            return Err(Error::Config("decoder.max_reweight_iters: must be >= 1".into()));
        }
        match &self.attack {
            AttackSweep::SensorBias { factor, percents } => {
                if !(*factor >= 0.0) {
                    return Err(Error::Config("attack.factor: must be >= 0".into()));
                }
                if percents.is_empty() {
                    return Err(Error::Config("attack.percents: must be nonempty".into()));
                }
                for (i, p) in percents.iter().enumerate() {
                    if !(*p >= 0.0 && *p <= 100.0) {
                        return Err(Error::Config(format!(
                            "attack.percents[{i}]: must be in [0,100], got {p}"
                        )));
                    }
                }
            }
            AttackSweep::StateTargeted { bias_fraction, target_counts } => {
                if !(*bias_fraction >= 0.0) {
                    return Err(Error::Config("attack.bias_fraction: must be >= 0".into()));
                }
                if target_counts.is_empty() {
                    return Err(Error::Config("attack.target_counts: must be nonempty".into()));
                }
            }
        }
        Ok(())
    }

    /// Human-readable sweep point labels, one per point.
    pub fn point_labels(&self) -> Vec<String> {
        match &self.attack {
            AttackSweep::SensorBias { percents, .. } => {
                percents.iter().map(|p| format!("percent={p}")).collect()
            }
            AttackSweep::StateTargeted { target_counts, .. } => {
                target_counts.iter().map(|c| format!("targets={c}")).collect()
            }
        }
    }
}

/// The bundled 14-bus transmission test grid (20 line-flow sensors plus 14
/// injection sensors over 13 angle states).
pub const IEEE14_GRID_JSON: &str = include_str!("../data/ieee14_grid.json");

pub fn load_grid(source: &GridSource) -> Result<GridSpec> {
    match source {
        GridSource::Builtin(name) => match name.as_str() {
            "ieee14" => GridSpec::from_json(IEEE14_GRID_JSON),
            other => Err(Error::Config(format!("grid.builtin: unknown grid `{other}`"))),
        },
        GridSource::Path(path) => {
            let text = std::fs::read_to_string(path)?;
            GridSpec::from_json(&text)
        }
        GridSource::Inline(spec) => Ok(spec.clone()),
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            grid: GridSource::Builtin("ieee14".into()),
            noise_std: NoiseStd::Scalar(0.01),
            gpr: GprConfig {
                amplitude: 50.0,
                lengthscale: 3.0,
                train_size: 40,
                noise_std: None,
            },
            aux: AuxConfig::default(),
            state: StateConfig::default(),
            attack: AttackSweep::SensorBias { factor: 5.0, percents: vec![10.0, 30.0] },
            estimators: vec![
                EstimatorKind::LeastSquares,
                EstimatorKind::ReweightedL1,
                EstimatorKind::ReweightedL1Prior,
            ],
            trials: 3,
            success_threshold: 0.05,
            master_seed: 7,
            tau: 0.95,
            decoder: DecoderSettings::default(),
        }
    }
}
