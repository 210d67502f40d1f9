//! Conditional Gaussian spin dynamics under continuous QND measurement of Ĵz
//! and the homodyne photocurrent they produce.
//!
//! The projection-noise variance obeys a separable scalar Riccati equation and
//! is evaluated in closed form. Only the conditional mean is stepped, by
//! Euler–Maruyama, with the precession and diffusion coefficients taken at the
//! step midpoint. One Wiener increment per step drives both the mean and the
//! photocurrent.

use std::io::{self, Write};

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::TimeGrid;
use crate::params::{ParamError, PhysicalParams};
use crate::seed::SeedSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("low-pass cutoff must be positive, got {0} Hz")]
    NonPositiveCutoff(f64),
    #[error("series length mismatch: {0} samples, {1} steps")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalState {
    pub t: f64,
    /// ⟨Ĵz⟩_c
    pub mean_jz: f64,
    /// ⟨ΔĴz²⟩
    pub var_jz: f64,
    /// J(t) = J·exp(−Mt/2)
    pub bloch_length: f64,
}

impl ConditionalState {
    /// Coherent spin state along x at t = 0.
    pub fn initial(p: &PhysicalParams) -> Self {
        ConditionalState {
            t: 0.0,
            mean_jz: 0.0,
            var_jz: 0.5 * p.j_total,
            bloch_length: p.j_total,
        }
    }
}

/// Closed-form ⟨ΔĴz²⟩(t) = (J/2)/(1 + 2ηMJt) for an initial coherent state.
pub fn conditional_variance(p: &PhysicalParams, t: f64) -> Result<f64, DynamicsError> {
    if !(t >= 0.0) {
        return Err(DynamicsError::NegativeTime(t));
    }
    Ok(variance_at(p, t))
}

#[inline]
pub(crate) fn variance_at(p: &PhysicalParams, t: f64) -> f64 {
    0.5 * p.j_total / (1.0 + 2.0 * p.efficiency * p.meas_strength * p.j_total * t)
}

#[inline]
pub fn bloch_length(p: &PhysicalParams, t: f64) -> f64 {
    p.j_total * (-0.5 * p.meas_strength * t).exp()
}

/// Field-independent precession gain γJe^{−Mt/2}: the rate at which a unit
/// field drives ⟨Ĵz⟩.
#[inline]
pub fn precession_gain(p: &PhysicalParams, t: f64) -> f64 {
    p.gamma * bloch_length(p, t)
}

/// Coefficients of one Euler–Maruyama step, evaluated at the step midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub t: f64,
    pub dt: f64,
    pub sqrt_dt: f64,
    /// γJe^{−Mt/2} at the midpoint.
    pub precession: f64,
    /// 2√(Mη)⟨ΔĴz²⟩ at the midpoint.
    pub diffusion: f64,
}

impl StepCoefficients {
    pub fn new(p: &PhysicalParams, t: f64, dt: f64) -> Self {
        let mid = t + 0.5 * dt;
        StepCoefficients {
            t,
            dt,
            sqrt_dt: dt.sqrt(),
            precession: precession_gain(p, mid),
            diffusion: 2.0 * (p.meas_strength * p.efficiency).sqrt() * variance_at(p, mid),
        }
    }
}

/// Coefficient table for every step of `grid`.
pub fn step_coefficients(p: &PhysicalParams, grid: &TimeGrid) -> Vec<StepCoefficients> {
    (0..grid.n_steps())
        .map(|k| StepCoefficients::new(p, grid.t(k), grid.step(k)))
        .collect()
}

/// Advances ⟨Ĵz⟩_c over one step of length `dt` with Wiener increment `dw`.
pub fn step_mean(state: &ConditionalState, p: &PhysicalParams, dt: f64, dw: f64) -> f64 {
    let c = StepCoefficients::new(p, state.t, dt);
    state.mean_jz + c.precession * p.b_true * dt + c.diffusion * dw
}

/// Photocurrent sample and record increment for one step:
/// `y·dt = 2η√M⟨Ĵz⟩dt + √η dW` and `dΞ = y·dt/(2η√M)`.
pub fn photocurrent_increment(mean_jz: f64, p: &PhysicalParams, dt: f64, dw: f64) -> (f64, f64) {
    let eta = p.efficiency;
    let sqrt_m = p.meas_strength.sqrt();
    let y = 2.0 * eta * sqrt_m * mean_jz + eta.sqrt() * dw / dt;
    let d_xi = mean_jz * dt + p.record_noise() * dw;
    (y, d_xi)
}

/// Source of the Wiener increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Gaussian,
    /// All increments zero; the record is the deterministic drift.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub grid: TimeGrid,
    pub states: Vec<ConditionalState>,
    pub d_xi: Vec<f64>,
    pub y: Vec<f64>,
    /// Wiener increments used at each step.
    pub noise: Vec<f64>,
}

impl TrajectoryRecord {
    /// Recovers each step's Wiener increment from the record and the mean,
    /// dW = (dΞ − ⟨Ĵz⟩dt)·2√(Mη).
    pub fn reconstruct_noise(&self, p: &PhysicalParams) -> Vec<f64> {
        let inv_d = 1.0 / p.record_noise();
        self.d_xi
            .iter()
            .enumerate()
            .map(|(k, dxi)| (dxi - self.states[k].mean_jz * self.grid.step(k)) * inv_d)
            .collect()
    }

    /// Per-step record rates dΞ/dt.
    pub fn rates(&self) -> Vec<f64> {
        self.d_xi
            .iter()
            .enumerate()
            .map(|(k, d)| d / self.grid.step(k))
            .collect()
    }

    /// Writes `t,mean_jz,var_jz,bloch_length,y,d_xi`, one row per grid point.
    /// The last row has no photocurrent sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,mean_jz,var_jz,bloch_length,y,d_xi")?;
        for (k, s) in self.states.iter().enumerate() {
            write!(
                w,
                "{:e},{:e},{:e},{:e},",
                s.t, s.mean_jz, s.var_jz, s.bloch_length
            )?;
            match (self.y.get(k), self.d_xi.get(k)) {
                (Some(y), Some(d)) => writeln!(w, "{y:e},{d:e}")?,
                _ => writeln!(w, ",")?,
            }
        }
        Ok(())
    }
}

/// Emits a warning when the record extends outside the small-angle regime in
/// which the Gaussian model holds.
pub fn check_small_angle(p: &PhysicalParams) {
    let angle = (p.larmor_frequency() * p.t_total).abs();
    if angle > 0.1 {
        warn!("ω_L·t_total = {angle:.3} > 0.1: outside the small-angle regime of the model");
    }
}

pub fn simulate_trajectory(
    p: &PhysicalParams,
    grid: &TimeGrid,
    seed: SeedSpec,
) -> Result<TrajectoryRecord, DynamicsError> {
    simulate_trajectory_with(p, grid, seed, NoiseMode::Gaussian)
}

pub fn simulate_trajectory_with(
    p: &PhysicalParams,
    grid: &TimeGrid,
    seed: SeedSpec,
    mode: NoiseMode,
) -> Result<TrajectoryRecord, DynamicsError> {
    let p = p.validate()?;
    check_small_angle(&p);
    let coeffs = step_coefficients(&p, grid);
    let n = coeffs.len();
    let mut rng = seed.rng();
    let mut states = Vec::with_capacity(n + 1);
    let mut d_xi = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);

    let mut mean = 0.0;
    states.push(ConditionalState::initial(&p));
    for c in &coeffs {
        let dw = match mode {
            NoiseMode::Gaussian => c.sqrt_dt * rng.sample::<f64, _>(StandardNormal),
            NoiseMode::Zero => 0.0,
        };
        let (yk, dxi) = photocurrent_increment(mean, &p, c.dt, dw);
        mean += c.precession * p.b_true * c.dt + c.diffusion * dw;
        let t = c.t + c.dt;
        states.push(ConditionalState {
            t,
            mean_jz: mean,
            var_jz: variance_at(&p, t),
            bloch_length: bloch_length(&p, t),
        });
        d_xi.push(dxi);
        y.push(yk);
        noise.push(dw);
    }
    Ok(TrajectoryRecord {
        grid: grid.clone(),
        states,
        d_xi,
        y,
        noise,
    })
}

/// Default display cutoff, in Hz. The usual display cutoff 2π√J/t_total is an
/// angular frequency; dividing by 2π leaves √J/t_total.
pub fn default_cutoff_hz(p: &PhysicalParams) -> f64 {
    p.j_total.sqrt() / p.t_total
}

/// Causal single-pole low-pass with −3 dB point at `cutoff_hz`.
///
/// Each sample is held over its step, so the update factor
/// `1 − exp(−2π·f_c·dt_k)` is exact for non-uniform steps too.
pub fn lowpass_filter(y: &[f64], steps: &[f64], cutoff_hz: f64) -> Result<Vec<f64>, DynamicsError> {
    if !(cutoff_hz > 0.0) {
        return Err(DynamicsError::NonPositiveCutoff(cutoff_hz));
    }
    if y.len() != steps.len() {
        return Err(DynamicsError::LengthMismatch(y.len(), steps.len()));
    }
    let omega = std::f64::consts::TAU * cutoff_hz;
    let mut out = Vec::with_capacity(y.len());
    let mut state = match y.first() {
        Some(&v) => v,
        None => return Ok(out),
    };
    for (&x, &dt) in y.iter().zip(steps) {
        let alpha = -(-omega * dt).exp_m1();
        state += alpha * (x - state);
        out.push(state);
    }
    Ok(out)
}
