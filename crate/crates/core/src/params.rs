//! Physical parameters of a continuously measured spin ensemble and the
//! quantities derived from them.
//!
//! Internal units are seconds and gauss. The gyromagnetic ratio is stored as
//! an angular rate (rad·s⁻¹·G⁻¹).

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prior variance of the field estimate, in G².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorVariance {
    Finite(f64),
    /// No prior knowledge of the field.
    Infinite,
}

impl PriorVariance {
    pub fn is_infinite(&self) -> bool {
        matches!(self, PriorVariance::Infinite)
    }

    /// Prior information 1/ΔB̃²(0), in G⁻². Zero for an infinite prior.
    pub fn information(&self) -> f64 {
        match *self {
            PriorVariance::Finite(v) => 1.0 / v,
            PriorVariance::Infinite => 0.0,
        }
    }
}

impl fmt::Display for PriorVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorVariance::Finite(v) => write!(f, "{v:e}"),
            PriorVariance::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Collective spin length J (dimensionless).
    pub j_total: f64,
    /// Angular gyromagnetic ratio, rad·s⁻¹·G⁻¹.
    pub gamma: f64,
    /// True field along y, G.
    pub b_true: f64,
    /// Measurement strength M, s⁻¹.
    pub meas_strength: f64,
    /// Detector efficiency η.
    pub efficiency: f64,
    pub prior_b_variance: PriorVariance,
    /// Total record length, s.
    pub t_total: f64,
}

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("gyromagnetic ratio must be positive, got {0}")]
    NonPositiveGamma(f64),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl ParamError {
    /// Names of the offending fields, in the order they were checked.
    pub fn fields(&self) -> Vec<&'static str> {
        match self {
            ParamError::Invalid(v) => v.iter().map(|v| v.field).collect(),
            ParamError::NonPositiveGamma(_) => vec!["gamma"],
        }
    }
}

impl PhysicalParams {
    /// The parameter set used for the field-estimation comparison: J = 4e6,
    /// γ = 1 kHz/mG read as a cycle frequency, B = 1 µG, M = 100 kHz, η = 1,
    /// ΔB̃²(0) = 100 µG², 2 ms of record.
    pub fn benchmark() -> Self {
        PhysicalParams {
            j_total: 4.0e6,
            gamma: TAU * 1.0e6,
            b_true: 1.0e-6,
            meas_strength: 1.0e5,
            efficiency: 1.0,
            prior_b_variance: PriorVariance::Finite(1.0e-8),
            t_total: 2.0e-3,
        }
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(self) -> Result<Self, ParamError> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, field: &'static str, message: &str| {
            if !ok {
                bad.push(Violation {
                    field,
                    message: message.to_string(),
                });
            }
        };
        check(
            self.j_total.is_finite() && self.j_total > 0.0,
            "j_total",
            "spin length must be positive",
        );
        check(
            self.gamma.is_finite(),
            "gamma",
            "gyromagnetic ratio must be finite",
        );
        check(
            self.b_true.is_finite(),
            "b_true",
            "magnetic field must be finite",
        );
        check(
            self.meas_strength.is_finite() && self.meas_strength > 0.0,
            "meas_strength",
            "measurement strength must be positive",
        );
        check(
            self.efficiency > 0.0 && self.efficiency <= 1.0,
            "efficiency",
            "efficiency must be in (0,1]",
        );
        if let PriorVariance::Finite(v) = self.prior_b_variance {
            check(
                v.is_finite() && v >= 0.0,
                "prior_b_variance",
                "prior variance must be non-negative or infinite",
            );
        }
        check(
            self.t_total.is_finite() && self.t_total > 0.0,
            "t_total",
            "total time must be positive",
        );
        if bad.is_empty() {
            Ok(self)
        } else {
            Err(ParamError::Invalid(bad))
        }
    }

    /// ω_L = γB, rad/s.
    pub fn larmor_frequency(&self) -> f64 {
        self.gamma * self.b_true
    }

    /// Upper bound on the transverse coherence time set by measurement
    /// back-action, 2/M.
    pub fn t2_bound(&self) -> f64 {
        2.0 / self.meas_strength
    }

    /// J√M.
    pub fn snr(&self) -> f64 {
        self.j_total * self.meas_strength.sqrt()
    }

    /// Time scale 1/(2ηMJ) on which the projection noise collapses.
    pub fn squeezing_time(&self) -> f64 {
        1.0 / (2.0 * self.efficiency * self.meas_strength * self.j_total)
    }

    /// Measurement-noise amplitude D = 1/(2√(Mη)) of the rescaled record.
    pub fn record_noise(&self) -> f64 {
        0.5 / (self.meas_strength * self.efficiency).sqrt()
    }

    pub fn with_j(self, j_total: f64) -> Self {
        PhysicalParams { j_total, ..self }
    }

    pub fn with_b(self, b_true: f64) -> Self {
        PhysicalParams { b_true, ..self }
    }

    pub fn with_prior(self, prior_b_variance: PriorVariance) -> Self {
        PhysicalParams {
            prior_b_variance,
            ..self
        }
    }
}

/// How a gyromagnetic ratio quoted in kHz/mG is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GammaConvention {
    /// The quoted number is already an angular rate.
    Angular,
    /// The quoted number is a cycle frequency and is multiplied by 2π.
    #[default]
    Cycles,
}

/// kHz/mG → Hz/G.
const KHZ_PER_MG_IN_HZ_PER_G: f64 = 1.0e6;

/// Converts a cycle-frequency gyromagnetic ratio in kHz/mG to rad·s⁻¹·G⁻¹.
pub fn gamma_from_cycles(khz_per_mg: f64) -> Result<f64, ParamError> {
    if !(khz_per_mg > 0.0) || !khz_per_mg.is_finite() {
        return Err(ParamError::NonPositiveGamma(khz_per_mg));
    }
    Ok(TAU * khz_per_mg * KHZ_PER_MG_IN_HZ_PER_G)
}

/// Inverse of [`gamma_from_cycles`].
pub fn gamma_to_cycles(angular: f64) -> f64 {
    angular / (TAU * KHZ_PER_MG_IN_HZ_PER_G)
}

/// Converts a kHz/mG figure to an angular γ under the given convention.
pub fn gamma_from_khz_per_mg(value: f64, convention: GammaConvention) -> Result<f64, ParamError> {
    match convention {
        GammaConvention::Cycles => gamma_from_cycles(value),
        GammaConvention::Angular => {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParamError::NonPositiveGamma(value));
            }
            Ok(value * KHZ_PER_MG_IN_HZ_PER_G)
        }
    }
}
