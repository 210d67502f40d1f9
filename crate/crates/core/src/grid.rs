//! Time grids for trajectory integration.
//!
//! A grid is a uniform lattice `k·dt` ending exactly at `t_total`. Optionally
//! the start of the lattice is replaced by a geometric prefix so that the
//! early projection-noise collapse (time scale 1/(2ηMJ), often far below any
//! affordable uniform step) is resolved. The prefix runs until its ratio step
//! reaches `dt`, so the local step never exceeds a fixed fraction of `t`.

use thiserror::Error;

use crate::params::PhysicalParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("grid length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("log prefix needs t_min > 0 and at least one point per decade")]
    BadPrefix,
    #[error("grid would have {0} points, more than the supported maximum")]
    TooLarge(usize),
}

/// Geometric refinement of the start of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPrefix {
    pub t_min: f64,
    pub points_per_decade: u32,
}

/// Default prefix density. Keeps every prefix step under 5% of its start time.
pub const DEFAULT_POINTS_PER_DECADE: u32 = 50;

const MAX_POINTS: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    prefix: Option<LogPrefix>,
    points: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid on [0, t_total] with step at most `dt_max`.
    pub fn uniform(t_total: f64, dt_max: f64) -> Result<Self, GridError> {
        Self::build(t_total, dt_max, None)
    }

    pub fn with_log_prefix(
        t_total: f64,
        dt_max: f64,
        prefix: LogPrefix,
    ) -> Result<Self, GridError> {
        if !(prefix.t_min > 0.0) || prefix.points_per_decade == 0 {
            return Err(GridError::BadPrefix);
        }
        Self::build(t_total, dt_max, Some(prefix))
    }

    /// Default grid for a parameter set: uniform step `min(1e-3/M, t_total/10)`
    /// with a log prefix starting a hundredth of the squeezing time.
    pub fn for_params(p: &PhysicalParams) -> Result<Self, GridError> {
        let dt_max = (1e-3 / p.meas_strength).min(p.t_total / 10.0);
        Self::for_params_with_step(p, dt_max)
    }

    pub fn for_params_with_step(p: &PhysicalParams, dt_max: f64) -> Result<Self, GridError> {
        let t_min = p.squeezing_time() / 100.0;
        if t_min.is_finite() && t_min < dt_max.min(p.t_total) {
            Self::with_log_prefix(
                p.t_total,
                dt_max,
                LogPrefix {
                    t_min,
                    points_per_decade: DEFAULT_POINTS_PER_DECADE,
                },
            )
        } else {
            Self::uniform(p.t_total, dt_max)
        }
    }

    fn build(t_total: f64, dt_max: f64, prefix: Option<LogPrefix>) -> Result<Self, GridError> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(GridError::BadLength(t_total));
        }
        if !(dt_max > 0.0) || !dt_max.is_finite() {
            return Err(GridError::BadStep(dt_max));
        }
        let n_uniform = (t_total / dt_max).ceil().max(1.0);
        if n_uniform > MAX_POINTS as f64 {
            return Err(GridError::TooLarge(n_uniform as usize));
        }
        let n_uniform = n_uniform as usize;
        let dt = t_total / n_uniform as f64;

        let mut points = Vec::with_capacity(n_uniform + 1);
        points.push(0.0);
        let mut first_lattice = 1usize;
        if let Some(pre) = prefix.filter(|pre| pre.t_min < dt.min(t_total)) {
            let ratio = 10f64.powf(1.0 / pre.points_per_decade as f64);
            // The lattice takes over once a ratio step would exceed dt.
            first_lattice = (1.0 / (ratio - 1.0)).ceil() as usize;
            let t_switch = (first_lattice as f64 * dt).min(t_total);
            let mut j = 0i32;
            loop {
                let t = pre.t_min * ratio.powi(j);
                if t >= t_switch * (1.0 - 1e-9) {
                    break;
                }
                points.push(t);
                j += 1;
                if points.len() > MAX_POINTS {
                    return Err(GridError::TooLarge(points.len()));
                }
            }
        }
        for k in first_lattice.min(n_uniform)..n_uniform {
            points.push(k as f64 * dt);
        }
        points.push(t_total);
        Ok(TimeGrid { dt, prefix, points })
    }

    pub fn t_start(&self) -> f64 {
        0.0
    }

    /// Step of the uniform lattice.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn prefix(&self) -> Option<LogPrefix> {
        self.prefix
    }

    /// Number of integration steps (points − 1).
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn t(&self, k: usize) -> f64 {
        self.points[k]
    }

    /// Length of step `k`, from point `k` to `k + 1`.
    pub fn step(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    pub fn t_end(&self) -> f64 {
        *self.points.last().expect("grid is never empty")
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let i = self.points.partition_point(|&p| p < t);
        if i == 0 {
            0
        } else if i >= self.points.len() {
            self.points.len() - 1
        } else if (self.points[i] - t).abs() < (t - self.points[i - 1]).abs() {
            i
        } else {
            i - 1
        }
    }

    /// Grid indices closest to `per_decade` log-spaced times between the first
    /// positive point and the end of the grid, deduplicated and sorted.
    pub fn log_checkpoints(&self, per_decade: u32) -> Vec<usize> {
        let t0 = self.points[1];
        let t1 = self.t_end();
        let decades = (t1 / t0).log10();
        let n = (decades * per_decade as f64).ceil().max(1.0) as usize;
        let mut idx: Vec<usize> = (0..=n)
            .map(|i| {
                let t = t0 * 10f64.powf(decades * i as f64 / n as f64);
                self.nearest_index(t).max(1)
            })
            .collect();
        idx.dedup();
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_valid(g: &TimeGrid, t_total: f64) {
        assert_eq!(g.t(0), 0.0);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.t_end(), t_total);
        assert!(g.n_steps() >= 1);
    }

    #[test]
    fn uniform_grid_ends_exactly() {
        let g = TimeGrid::uniform(2e-3, 1e-8).unwrap();
        assert_valid(&g, 2e-3);
        assert_eq!(g.n_steps(), 200_000);
        assert!((g.t(100_000) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn uniform_step_rounds_down_to_fit() {
        let g = TimeGrid::uniform(1.0, 0.3).unwrap();
        assert_eq!(g.n_steps(), 4);
        assert!((g.dt() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(TimeGrid::uniform(0.0, 1e-3).is_err());
        assert!(TimeGrid::uniform(1.0, 0.0).is_err());
        assert!(TimeGrid::uniform(1.0, f64::NAN).is_err());
        let pre = LogPrefix {
            t_min: 0.0,
            points_per_decade: 10,
        };
        assert_eq!(
            TimeGrid::with_log_prefix(1.0, 0.1, pre),
            Err(GridError::BadPrefix)
        );
    }

    #[test]
    fn log_prefix_keeps_relative_steps_small() {
        let p = PhysicalParams::benchmark();
        let g = TimeGrid::for_params(&p).unwrap();
        assert_valid(&g, p.t_total);
        assert!(g.t(1) < p.squeezing_time());
        let ratio = 10f64.powf(1.0 / DEFAULT_POINTS_PER_DECADE as f64);
        for k in 1..g.n_steps() {
            assert!(
                g.step(k) <= g.t(k) * (ratio - 1.0) * 1.000_001,
                "step {k} too coarse"
            );
        }
        // The lattice part still hits round multiples of dt.
        let k = g.nearest_index(1e-5);
        assert!((g.t(k) - 1e-5).abs() < 1e-17);
    }

    #[test]
    fn prefix_longer_than_grid() {
        let pre = LogPrefix {
            t_min: 1e-6,
            points_per_decade: 10,
        };
        let g = TimeGrid::with_log_prefix(1e-4, 5e-5, pre).unwrap();
        assert_valid(&g, 1e-4);
    }

    #[test]
    fn nearest_index_clamps() {
        let g = TimeGrid::uniform(1.0, 0.1).unwrap();
        assert_eq!(g.nearest_index(-1.0), 0);
        assert_eq!(g.nearest_index(5.0), 10);
        assert_eq!(g.nearest_index(0.34), 3);
        assert_eq!(g.nearest_index(0.36), 4);
    }

    #[test]
    fn log_checkpoints_are_sorted_and_unique() {
        let g = TimeGrid::for_params(&PhysicalParams::benchmark()).unwrap();
        let c = g.log_checkpoints(30);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*c.last().unwrap(), g.n_steps());
        assert!(c[0] >= 1);
    }
}
