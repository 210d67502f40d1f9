//! Run configuration files (TOML or JSON) and their resolution into
//! simulation inputs.
//!
//! The gyromagnetic ratio is given in kHz/mG and converted once, here, using
//! `gamma_convention`. Everything downstream sees angular γ in rad·s⁻¹·G⁻¹.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, LogPrefix, TimeGrid, DEFAULT_POINTS_PER_DECADE};
use crate::montecarlo::{EstimatorKind, CHECKPOINTS_PER_DECADE};
use crate::params::{gamma_from_khz_per_mg, GammaConvention, ParamError, PhysicalParams, PriorVariance};
use crate::sme::SmeScheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("TOML config: {0}")]
    Toml(String),
    #[error("JSON config: {0}")]
    Json(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A prior variance in G², or `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorInput {
    Value(f64),
    Named(String),
}

impl PriorInput {
    fn resolve(&self) -> Result<PriorVariance, ConfigError> {
        match self {
            PriorInput::Value(v) => Ok(PriorVariance::Finite(*v)),
            PriorInput::Named(s) if matches!(s.as_str(), "inf" | "infinite" | "infinity") => {
                Ok(PriorVariance::Infinite)
            }
            PriorInput::Named(s) => Err(ConfigError::Field {
                field: "prior_b_variance".into(),
                message: format!("expected a number or \"inf\", got {s:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    pub j_total: f64,
    /// kHz/mG, read according to `gamma_convention`.
    pub gamma: f64,
    #[serde(default)]
    pub gamma_convention: GammaConvention,
    /// G
    pub b_true: f64,
    /// s⁻¹
    pub meas_strength: f64,
    pub efficiency: f64,
    /// G², or "inf"
    pub prior_b_variance: PriorInput,
    /// s
    pub t_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Largest uniform step, s. Defaults to min(1e-3/M, t_total/10).
    pub dt_max: Option<f64>,
    /// Resolve the projection-noise collapse with a geometric prefix.
    pub log_prefix: bool,
    pub points_per_decade: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dt_max: None,
            log_prefix: true,
            points_per_decade: DEFAULT_POINTS_PER_DECADE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub n_traj: usize,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            n_traj: 10_000,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Substream of the master seed used for the single trajectory.
    pub stream: u64,
    /// Force every Wiener increment to zero.
    pub zero_noise: bool,
    /// Display filter cutoff, Hz. Defaults to √J/t_total.
    pub cutoff_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Explicit checkpoint times, s. Log-spaced over the grid when absent.
    pub checkpoint_times: Option<Vec<f64>>,
    pub checkpoints_per_decade: u32,
    pub estimators: Vec<EstimatorKind>,
    /// Time at which the sensitivity magnitude is checked, s.
    pub t_sensitivity: f64,
    /// Accepted δB̃ range at `t_sensitivity`, G.
    pub sensitivity_range: [f64; 2],
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            checkpoint_times: None,
            checkpoints_per_decade: CHECKPOINTS_PER_DECADE,
            estimators: vec![EstimatorKind::Qkf, EstimatorKind::Regression],
            t_sensitivity: 1e-3,
            sensitivity_range: [3e-12, 3e-11],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub j_values: Vec<f64>,
    /// s
    pub t_check: f64,
    /// Trajectories per J; `run.n_traj` when absent.
    pub n_traj: Option<usize>,
    pub estimators: Vec<EstimatorKind>,
    /// Allowed deviation of each fitted slope from −1.
    pub slope_tolerance: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            j_values: vec![1e4, 1e5, 1e6, 4e6],
            t_check: 1e-3,
            n_traj: None,
            estimators: vec![EstimatorKind::Qkf, EstimatorKind::Regression],
            slope_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub scheme: SmeScheme,
    /// Whether the Gaussian model is expected to hold at this J. When false
    /// the agreement check is reported but does not gate the exit code.
    pub expect_agreement: bool,
    /// Further matched-noise runs (streams 1..=n) summarized as a pass
    /// fraction.
    pub extra_runs: usize,
    /// Spins at which the η = 0 dephasing law is checked.
    pub dephasing_j: Vec<f64>,
    /// Allowed relative error of the dephasing law.
    pub dephasing_tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            scheme: SmeScheme::default(),
            expect_agreement: true,
            extra_runs: 0,
            dephasing_j: vec![0.5, 1.0, 2.0, 5.0],
            dephasing_tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub physical: PhysicalConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_traj: Option<usize>,
    pub out: Option<PathBuf>,
    pub gamma_convention: Option<GammaConvention>,
}

/// Parses a config document. JSON is recognized by a leading `{`; anything
/// else is read as TOML.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| ConfigError::Toml(e.to_string()))?
    };
    cfg.params()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(n) = o.n_traj {
            self.run.n_traj = n;
        }
        if let Some(out) = &o.out {
            self.run.out_dir = out.clone();
        }
        if let Some(c) = o.gamma_convention {
            self.physical.gamma_convention = c;
        }
    }

    /// Validated physical parameters in internal units.
    pub fn params(&self) -> Result<PhysicalParams, ConfigError> {
        let ph = &self.physical;
        let gamma = gamma_from_khz_per_mg(ph.gamma, ph.gamma_convention)?;
        Ok(PhysicalParams {
            j_total: ph.j_total,
            gamma,
            b_true: ph.b_true,
            meas_strength: ph.meas_strength,
            efficiency: ph.efficiency,
            prior_b_variance: ph.prior_b_variance.resolve()?,
            t_total: ph.t_total,
        }
        .validate()?)
    }

    /// Integration grid for `p` under the grid settings.
    pub fn grid_for(&self, p: &PhysicalParams) -> Result<TimeGrid, ConfigError> {
        let dt_max = self
            .grid
            .dt_max
            .unwrap_or_else(|| (1e-3 / p.meas_strength).min(p.t_total / 10.0));
        let t_min = p.squeezing_time() / 100.0;
        let grid = if self.grid.log_prefix && t_min < dt_max.min(p.t_total) {
            TimeGrid::with_log_prefix(
                p.t_total,
                dt_max,
                LogPrefix {
                    t_min,
                    points_per_decade: self.grid.points_per_decade,
                },
            )?
        } else {
            TimeGrid::uniform(p.t_total, dt_max)?
        };
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BENCHMARK: &str = r#"
[physical]
j_total = 4e6
gamma = 1.0
gamma_convention = "cycles"
b_true = 1e-6
meas_strength = 1e5
efficiency = 1.0
prior_b_variance = 1e-8
t_total = 2e-3
"#;

    #[test]
    fn benchmark_preset_resolves() {
        let cfg = parse_config(BENCHMARK).unwrap();
        assert_eq!(cfg.params().unwrap(), PhysicalParams::benchmark());
        assert_eq!(cfg.run.n_traj, 10_000);
    }

    #[test]
    fn missing_field_is_named() {
        let text = BENCHMARK.replace("meas_strength = 1e5\n", "");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("meas_strength"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = BENCHMARK.replace("efficiency = 1.0", "efficiency = 1.0\ncolour = 3");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        let text = format!("{BENCHMARK}\n[grid]\nstep = 1e-9\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn negative_time_rejected() {
        let text = BENCHMARK.replace("t_total = 2e-3", "t_total = -1.0");
        match parse_config(&text) {
            Err(ConfigError::Params(e)) => assert_eq!(e.fields(), vec!["t_total"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infinite_prior_and_conventions() {
        let text = BENCHMARK
            .replace("prior_b_variance = 1e-8", "prior_b_variance = \"inf\"")
            .replace("\"cycles\"", "\"angular\"");
        let p = parse_config(&text).unwrap().params().unwrap();
        assert!(p.prior_b_variance.is_infinite());
        assert_eq!(p.gamma, 1e6);
        let bad = BENCHMARK.replace("prior_b_variance = 1e-8", "prior_b_variance = \"lots\"");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("prior_b_variance"));
    }

    #[test]
    fn json_and_overrides() {
        let json = r#"{"physical": {"j_total": 10, "gamma": 1, "b_true": 0, "meas_strength": 1,
            "efficiency": 1, "prior_b_variance": "inf", "t_total": 0.1}, "run": {"seed": 4}}"#;
        let mut cfg = parse_config(json).unwrap();
        assert_eq!(cfg.run.seed, 4);
        cfg.apply(&Overrides {
            seed: Some(9),
            n_traj: Some(12),
            out: None,
            gamma_convention: Some(GammaConvention::Angular),
        });
        assert_eq!((cfg.run.seed, cfg.run.n_traj), (9, 12));
        assert_eq!(cfg.params().unwrap().gamma, 1e6);
    }

    #[test]
    fn default_grid_matches_library_default() {
        let cfg = parse_config(BENCHMARK).unwrap();
        let p = cfg.params().unwrap();
        assert_eq!(cfg.grid_for(&p).unwrap(), TimeGrid::for_params(&p).unwrap());
    }
}
