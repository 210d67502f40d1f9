//! Least-squares slope baseline.
//!
//! The record rate dΞ/dt ≈ ⟨Ĵz⟩ grows like γBJt while the Bloch vector is
//! long, so a straight-line fit `α + β·t` gives B̃ = β/(γJ). The intercept
//! absorbs the random offset left by the initial projection-noise transient.
//! Each rate sample is weighted by its step length, which makes the fit the
//! ordinary one on uniform grids and keeps it unbiased on the log-dense prefix.

use log::warn;

use super::EstimatorError;
use crate::dynamics::TrajectoryRecord;
use crate::params::PhysicalParams;

/// Streaming weighted fit of rate against time (West's update, so no
/// cancellation in the centred sums).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegressionAccumulator {
    count: usize,
    weight: f64,
    mean_t: f64,
    mean_r: f64,
    s_tt: f64,
    s_tr: f64,
}

impl RegressionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the record increment `d_xi` over the step `[t, t + dt]`.
    #[inline]
    pub fn push(&mut self, t: f64, dt: f64, d_xi: f64) {
        let r = d_xi / dt;
        self.count += 1;
        self.weight += dt;
        let f = dt / self.weight;
        let dx = t - self.mean_t;
        self.mean_t += f * dx;
        self.mean_r += f * (r - self.mean_r);
        self.s_tt += dt * dx * (t - self.mean_t);
        self.s_tr += dt * dx * (r - self.mean_r);
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Fitted slope β of the rate, s⁻².
    pub fn slope(&self) -> Result<f64, EstimatorError> {
        if self.count < 3 {
            return Err(EstimatorError::TooFewPoints(self.count));
        }
        Ok(self.s_tr / self.s_tt)
    }

    /// Fitted intercept α.
    pub fn intercept(&self) -> Result<f64, EstimatorError> {
        Ok(self.mean_r - self.slope()? * self.mean_t)
    }

    /// B̃ = β/(γJ).
    pub fn b_estimate(&self, p: &PhysicalParams) -> Result<f64, EstimatorError> {
        Ok(self.slope()? / (p.gamma * p.j_total))
    }
}

/// Fits the record over `[0, t_end]` and returns B̃ in G.
pub fn regression_estimate(
    record: &TrajectoryRecord,
    p: &PhysicalParams,
    t_end: f64,
) -> Result<f64, EstimatorError> {
    let t_total = record.grid.t_end();
    if t_end > t_total * (1.0 + 1e-12) {
        return Err(EstimatorError::BeyondRecord { t_end, t_total });
    }
    if p.meas_strength * t_end > 0.5 {
        warn!(
            "regression over Mt = {:.2}: the Bloch vector has decayed and the slope is biased",
            p.meas_strength * t_end
        );
    }
    let mut acc = RegressionAccumulator::new();
    for (k, &d) in record.d_xi.iter().enumerate() {
        if record.grid.t(k + 1) > t_end * (1.0 + 1e-12) {
            break;
        }
        acc.push(record.grid.t(k), record.grid.step(k), d);
    }
    acc.b_estimate(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_trajectory_with, NoiseMode};
    use crate::grid::TimeGrid;
    use crate::seed::SeedSpec;

    fn synthetic(p: &PhysicalParams, grid: &TimeGrid, rate: impl Fn(f64) -> f64) -> TrajectoryRecord {
        let mut rec = simulate_trajectory_with(p, grid, SeedSpec::new(0, 0), NoiseMode::Zero).unwrap();
        rec.d_xi = (0..grid.n_steps()).map(|k| rate(grid.t(k)) * grid.step(k)).collect();
        rec
    }

    #[test]
    fn exact_linear_rate() {
        let p = PhysicalParams {
            t_total: 1e-5,
            ..PhysicalParams::benchmark()
        };
        let grid = TimeGrid::for_params(&p).unwrap();
        let slope = p.gamma * p.b_true * p.j_total;
        let rec = synthetic(&p, &grid, |t| 3.0 + slope * t);
        let b = regression_estimate(&rec, &p, p.t_total).unwrap();
        assert!((b - p.b_true).abs() <= 1e-10 * p.b_true, "{b}");
    }

    #[test]
    fn constant_offset_gives_zero() {
        let p = PhysicalParams {
            t_total: 1e-5,
            ..PhysicalParams::benchmark()
        };
        let grid = TimeGrid::for_params(&p).unwrap();
        let rec = synthetic(&p, &grid, |_| 1234.5);
        let b = regression_estimate(&rec, &p, p.t_total).unwrap();
        assert!(b.abs() < 1e-18, "{b}");
    }

    #[test]
    fn too_few_points_and_beyond_record() {
        let p = PhysicalParams {
            t_total: 1e-5,
            ..PhysicalParams::benchmark()
        };
        let grid = TimeGrid::uniform(p.t_total, p.t_total / 10.0).unwrap();
        let rec = synthetic(&p, &grid, |t| t);
        assert_eq!(
            regression_estimate(&rec, &p, 2e-6),
            Err(EstimatorError::TooFewPoints(2))
        );
        assert!(matches!(
            regression_estimate(&rec, &p, 1e-4),
            Err(EstimatorError::BeyondRecord { .. })
        ));
    }

    #[test]
    fn accumulator_matches_normal_equations() {
        let pts: Vec<(f64, f64, f64)> = (0..50)
            .map(|i| {
                let t = 0.1 * i as f64 + 0.01 * (i * i) as f64;
                let dt = 0.1 + 0.02 * i as f64;
                (t, dt, ((i * 7919) % 13) as f64 * dt)
            })
            .collect();
        let mut acc = RegressionAccumulator::new();
        let (mut sw, mut st, mut stt, mut sr, mut str_) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, dt, d) in &pts {
            acc.push(t, dt, d);
            let r = d / dt;
            sw += dt;
            st += dt * t;
            stt += dt * t * t;
            sr += dt * r;
            str_ += dt * t * r;
        }
        let beta = (sw * str_ - st * sr) / (sw * stt - st * st);
        let alpha = (sr - beta * st) / sw;
        assert!((acc.slope().unwrap() - beta).abs() < 1e-12 * beta.abs().max(1.0));
        assert!((acc.intercept().unwrap() - alpha).abs() < 1e-10 * alpha.abs().max(1.0));
    }
}
