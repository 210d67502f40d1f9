//! Quantum Kalman filter for the pair (⟨Ĵz⟩_c, B).
//!
//! The filter is the continuous-time Kalman–Bucy filter discretized exactly
//! for the trajectory integrator's Euler–Maruyama model:
//!
//! ```text
//! Jz' = Jz + a·dt·B + σ·dW        σ = b1/D = 2√(Mη)⟨ΔĴz²⟩
//! dΞ  = Jz·dt + D·dW
//! ```
//!
//! Because one dW drives both lines, process and measurement noise are
//! correlated with cross term `b1·dt`. The resulting gain,
//!
//! ```text
//! K = (V11 + a·dt·V12 + b1, V12) / (D² + dt·V11),
//! ```
//!
//! reduces to D⁻²(B + VCᵀ) as dt → 0, and the state update
//! `x' = x + A·x·dt + K·(dΞ − C·x·dt)` is the explicit Euler form of the
//! filtering equation. The covariance is advanced in Joseph form, which is a
//! sum of positive semidefinite terms for any gain.
//!
//! Without prior knowledge of B the covariance is infinite, so the filter
//! starts in information form: the ⟨Ĵz⟩ estimate is carried as an affine
//! function `c + w·B` of the unknown field together with the field
//! information `L` and information vector `z`. It switches to covariance form
//! on the first step that yields positive information.
//!
//! The covariance recursion never looks at the data. [`GainSchedule`]
//! precomputes it once so that running the filter over many records costs a
//! 2×2 affine map per step.

use std::io::{self, Write};

use super::{EstimatorError, Sym2, SystemMatrices, PSD_TOLERANCE};
use crate::dynamics::TrajectoryRecord;
use crate::grid::TimeGrid;
use crate::params::{PhysicalParams, PriorVariance};

/// Deterministic part of the filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Posterior {
    /// Data part holds x̃ = (J̃z, B̃).
    Covariance(Sym2),
    /// Data part holds (c, z): J̃z given B is `c + w·B`, with residual variance
    /// `u`; the field has information `info` and information vector `z`.
    Information { w: f64, u: f64, info: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub t: f64,
    pub posterior: Posterior,
    /// x̃ in covariance form, (c, z) in information form.
    pub data: [f64; 2],
}

impl KalmanState {
    pub fn is_info_form(&self) -> bool {
        matches!(self.posterior, Posterior::Information { .. })
    }

    /// x̃ = (J̃z, B̃), once the field estimate is defined.
    pub fn x_tilde(&self) -> Option<[f64; 2]> {
        match self.posterior {
            Posterior::Covariance(_) => Some(self.data),
            Posterior::Information { w, info, .. } if info > 0.0 => {
                let b = self.data[1] / info;
                Some([self.data[0] + w * b, b])
            }
            Posterior::Information { .. } => None,
        }
    }

    pub fn b_estimate(&self) -> Option<f64> {
        self.x_tilde().map(|x| x[1])
    }

    /// Error covariance V, once finite.
    pub fn covariance(&self) -> Option<Sym2> {
        match self.posterior {
            Posterior::Covariance(v) => Some(v),
            Posterior::Information { w, u, info } if info > 0.0 => Some(info_to_covariance(w, u, info)),
            Posterior::Information { .. } => None,
        }
    }
}

fn info_to_covariance(w: f64, u: f64, info: f64) -> Sym2 {
    Sym2 {
        xx: u + w * w / info,
        xy: w / info,
        yy: 1.0 / info,
    }
}

/// Affine update of the data part: `data' = phi·data + gain·dΞ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMap {
    pub phi: [[f64; 2]; 2],
    pub gain: [f64; 2],
}

impl StepMap {
    #[inline]
    pub fn apply(&self, data: [f64; 2], d_xi: f64) -> [f64; 2] {
        [
            self.phi[0][0] * data[0] + self.phi[0][1] * data[1] + self.gain[0] * d_xi,
            self.phi[1][0] * data[0] + self.phi[1][1] * data[1] + self.gain[1] * d_xi,
        ]
    }

    fn then(&self, m: &[[f64; 2]; 2]) -> StepMap {
        let mut phi = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                phi[i][j] = m[i][0] * self.phi[0][j] + m[i][1] * self.phi[1][j];
            }
        }
        StepMap {
            phi,
            gain: [
                m[0][0] * self.gain[0] + m[0][1] * self.gain[1],
                m[1][0] * self.gain[0] + m[1][1] * self.gain[1],
            ],
        }
    }
}

pub fn kalman_init(p: &PhysicalParams) -> KalmanState {
    let posterior = match p.prior_b_variance {
        PriorVariance::Finite(v) => Posterior::Covariance(Sym2::diag(0.0, v)),
        PriorVariance::Infinite => Posterior::Information {
            w: 0.0,
            u: 0.0,
            info: 0.0,
        },
    };
    KalmanState {
        t: 0.0,
        posterior,
        data: [0.0, 0.0],
    }
}

/// Advances the deterministic part over `[t, t + dt]` and returns the map the
/// data part follows.
fn advance(
    posterior: Posterior,
    mats: &SystemMatrices,
    t: f64,
    dt: f64,
) -> Result<(Posterior, StepMap), EstimatorError> {
    let a = mats.a12;
    let d2 = mats.d * mats.d;
    let sigma = mats.b1 / mats.d;
    match posterior {
        Posterior::Covariance(v) => {
            let denom = d2 + dt * v.xx;
            let k = [(v.xx + a * dt * v.xy + mats.b1) / denom, v.xy / denom];
            let phi = [[1.0 - k[0] * dt, a * dt], [-k[1] * dt, 1.0]];
            let noise = [sigma - mats.d * k[0], -mats.d * k[1]];
            let v_next = v.congruence(&phi).add_outer(noise, dt);
            if !v_next.is_psd(PSD_TOLERANCE) {
                return Err(EstimatorError::LostPositivity {
                    t: t + dt,
                    min_eig: v_next.eigenvalues().0,
                });
            }
            Ok((Posterior::Covariance(v_next), StepMap { phi, gain: k }))
        }
        Posterior::Information { w, u, info } => {
            let s = u * dt * dt + d2 * dt;
            let kc = (u + mats.b1) / (u * dt + d2);
            let kz = w * dt / s;
            // u' written as a multiple of u: the residual stays exactly zero
            // when it starts at zero.
            let u_next = u + dt * u * (mats.b1 * mats.b1 * dt - d2 * u - 2.0 * d2 * mats.b1)
                / (d2 * (u * dt + d2));
            let w_next = w * (1.0 - kc * dt) + a * dt;
            let info_next = info + (w * dt) * (w * dt) / s;
            let map = StepMap {
                phi: [[1.0 - kc * dt, 0.0], [-kz * dt, 1.0]],
                gain: [kc, kz],
            };
            if info_next > 0.0 {
                let v = info_to_covariance(w_next, u_next.max(0.0), info_next);
                let to_x = [[1.0, w_next / info_next], [0.0, 1.0 / info_next]];
                Ok((Posterior::Covariance(v), map.then(&to_x)))
            } else {
                Ok((
                    Posterior::Information {
                        w: w_next,
                        u: u_next,
                        info: info_next,
                    },
                    map,
                ))
            }
        }
    }
}

/// One filter step consuming the record increment over `[s.t, s.t + dt]`.
pub fn kalman_step(
    s: &KalmanState,
    mats: &SystemMatrices,
    d_xi: f64,
    dt: f64,
) -> Result<KalmanState, EstimatorError> {
    let (posterior, map) = advance(s.posterior, mats, s.t, dt)?;
    Ok(KalmanState {
        t: s.t + dt,
        posterior,
        data: map.apply(s.data, d_xi),
    })
}

/// Precomputed filter recursion for one parameter set and grid.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    maps: Vec<StepMap>,
    posteriors: Vec<Posterior>,
}

impl GainSchedule {
    pub fn new(p: &PhysicalParams, grid: &TimeGrid) -> Result<Self, EstimatorError> {
        Self::up_to(p, grid, grid.n_steps())
    }

    /// Schedule for the first `n_steps` steps of `grid`.
    pub fn up_to(p: &PhysicalParams, grid: &TimeGrid, n_steps: usize) -> Result<Self, EstimatorError> {
        let init = kalman_init(p);
        let mut posterior = init.posterior;
        let mut maps = Vec::with_capacity(n_steps);
        let mut posteriors = Vec::with_capacity(n_steps + 1);
        posteriors.push(posterior);
        for k in 0..n_steps {
            let (t, dt) = (grid.t(k), grid.step(k));
            let mats = SystemMatrices::for_step(p, t, dt);
            let (next, map) = advance(posterior, &mats, t, dt)?;
            maps.push(map);
            posteriors.push(next);
            posterior = next;
        }
        Ok(GainSchedule { maps, posteriors })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[StepMap] {
        &self.maps
    }

    /// Filter state shape after `k` steps.
    pub fn posterior(&self, k: usize) -> Posterior {
        self.posteriors[k]
    }

    /// ΔB̃² after `k` steps, if finite.
    pub fn v22(&self, k: usize) -> Option<f64> {
        match self.posteriors[k] {
            Posterior::Covariance(v) => Some(v.yy),
            Posterior::Information { info, .. } if info > 0.0 => Some(1.0 / info),
            Posterior::Information { .. } => None,
        }
    }

    /// Field estimate from the data part after `k` steps.
    #[inline]
    pub fn b_estimate(&self, k: usize, data: [f64; 2]) -> Option<f64> {
        match self.posteriors[k] {
            Posterior::Covariance(_) => Some(data[1]),
            Posterior::Information { info, .. } if info > 0.0 => Some(data[1] / info),
            Posterior::Information { .. } => None,
        }
    }
}

/// Per-point filter output over a whole record.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub states: Vec<KalmanState>,
}

impl FilterTrace {
    /// Writes `t,jz_tilde,b_tilde,v11,v12,v22`. Points where the field
    /// estimate is still undefined (infinite prior, no information yet) have
    /// empty estimate and covariance fields.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,jz_tilde,b_tilde,v11,v12,v22")?;
        for s in &self.states {
            match (s.x_tilde(), s.covariance()) {
                (Some(x), Some(v)) => writeln!(
                    w,
                    "{:e},{:e},{:e},{:e},{:e},{:e}",
                    s.t, x[0], x[1], v.xx, v.xy, v.yy
                )?,
                _ => writeln!(w, "{:e},,,,,", s.t)?,
            }
        }
        Ok(())
    }
}

/// Runs the filter over a recorded trajectory.
pub fn run_filter(p: &PhysicalParams, record: &TrajectoryRecord) -> Result<FilterTrace, EstimatorError> {
    let mut s = kalman_init(p);
    let mut states = Vec::with_capacity(record.d_xi.len() + 1);
    states.push(s);
    for (k, &d_xi) in record.d_xi.iter().enumerate() {
        let (t, dt) = (record.grid.t(k), record.grid.step(k));
        let mats = SystemMatrices::for_step(p, t, dt);
        s = kalman_step(&s, &mats, d_xi, dt)?;
        s.t = record.grid.t(k + 1);
        states.push(s);
    }
    Ok(FilterTrace { states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_trajectory;
    use crate::seed::SeedSpec;

    fn benchmark_grid(p: &PhysicalParams, t_total: f64) -> TimeGrid {
        let p = PhysicalParams { t_total, ..*p };
        TimeGrid::for_params(&p).unwrap()
    }

    #[test]
    fn init_finite_prior() {
        let s = kalman_init(&PhysicalParams::benchmark());
        assert_eq!(s.covariance().unwrap(), Sym2::diag(0.0, 1e-8));
        assert_eq!(s.x_tilde().unwrap(), [0.0, 0.0]);
        assert!(!s.is_info_form());
    }

    #[test]
    fn zero_innovation_is_pure_drift() {
        let p = PhysicalParams::benchmark();
        let v = Sym2 { xx: 4.0, xy: 1e-4, yy: 1e-8 };
        let s = KalmanState {
            t: 1e-6,
            posterior: Posterior::Covariance(v),
            data: [120.0, 3e-7],
        };
        let dt = 1e-8;
        let mats = SystemMatrices::for_step(&p, s.t, dt);
        let next = kalman_step(&s, &mats, s.data[0] * dt, dt).unwrap();
        let x = next.x_tilde().unwrap();
        assert!((x[0] - (120.0 + mats.a12 * 3e-7 * dt)).abs() < 1e-9);
        assert!((x[1] - 3e-7).abs() < 1e-12 * 3e-7);
    }

    #[test]
    fn discrete_gain_tends_to_continuous_gain() {
        let p = PhysicalParams::benchmark();
        let mats = SystemMatrices::at(&p, 0.0);
        let s = kalman_init(&p);
        let v = s.covariance().unwrap();
        let (_, map) = advance(s.posterior, &mats, 0.0, 1e-20).unwrap();
        let g = mats.gain(&v);
        assert!((map.gain[0] - g[0]).abs() <= 1e-9 * g[0]);
        assert_eq!(map.gain[1], 0.0);
    }

    #[test]
    fn zero_prior_pins_the_estimate() {
        let p = PhysicalParams::benchmark().with_prior(PriorVariance::Finite(0.0));
        let grid = benchmark_grid(&p, 2e-6);
        let rec = simulate_trajectory(&p, &grid, SeedSpec::new(5, 0)).unwrap();
        let trace = run_filter(&p, &rec).unwrap();
        for s in &trace.states {
            assert_eq!(s.b_estimate().unwrap(), 0.0);
            assert_eq!(s.covariance().unwrap().yy, 0.0);
        }
    }

    #[test]
    fn infinite_prior_becomes_finite_and_agrees_with_huge_prior() {
        let p_inf = PhysicalParams::benchmark().with_prior(PriorVariance::Infinite);
        let p_big = PhysicalParams::benchmark().with_prior(PriorVariance::Finite(1e6));
        let grid = benchmark_grid(&p_inf, 1e-5);
        let rec = simulate_trajectory(&p_inf, &grid, SeedSpec::new(8, 1)).unwrap();
        let a = run_filter(&p_inf, &rec).unwrap();
        let b = run_filter(&p_big, &rec).unwrap();
        assert!(a.states[0].is_info_form());
        // The first record increment predates any precession, so field
        // information appears after the second step.
        assert!(a.states[1].covariance().is_none());
        assert!(a.states[2].covariance().unwrap().yy.is_finite());
        assert!(!a.states[2].is_info_form());
        let k = grid.nearest_index(10.0 * grid.dt());
        let (va, vb) = (a.states[k].covariance().unwrap(), b.states[k].covariance().unwrap());
        assert!(((va.yy - vb.yy) / va.yy).abs() < 1e-6);
        let (ba, bb) = (a.states[k].b_estimate().unwrap(), b.states[k].b_estimate().unwrap());
        assert!(((ba - bb) / va.yy.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn covariance_stays_psd_and_field_variance_decreases() {
        let p = PhysicalParams::benchmark();
        let grid = benchmark_grid(&p, 2e-4);
        let sched = GainSchedule::new(&p, &grid).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=sched.len() {
            if let Posterior::Covariance(v) = sched.posterior(k) {
                assert!(v.is_psd(PSD_TOLERANCE), "step {k}: {v:?}");
                assert!(v.yy <= prev * (1.0 + 1e-12));
                prev = v.yy;
            }
        }
    }

    #[test]
    fn schedule_reproduces_stepwise_filter() {
        let p = PhysicalParams::benchmark().with_prior(PriorVariance::Infinite);
        let grid = benchmark_grid(&p, 1e-6);
        let rec = simulate_trajectory(&p, &grid, SeedSpec::new(2, 2)).unwrap();
        let trace = run_filter(&p, &rec).unwrap();
        let sched = GainSchedule::new(&p, &grid).unwrap();
        let mut data = [0.0, 0.0];
        for (k, m) in sched.maps().iter().enumerate() {
            data = m.apply(data, rec.d_xi[k]);
            assert_eq!(sched.b_estimate(k + 1, data), trace.states[k + 1].b_estimate());
        }
    }

    #[test]
    fn trace_csv_leaves_undefined_rows_empty() {
        let p = PhysicalParams::benchmark().with_prior(PriorVariance::Infinite);
        let grid = benchmark_grid(&p, 1e-7);
        let rec = simulate_trajectory(&p, &grid, SeedSpec::new(1, 1)).unwrap();
        let mut buf = Vec::new();
        run_filter(&p, &rec).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,jz_tilde,b_tilde,v11,v12,v22");
        assert!(lines.next().unwrap().ends_with(",,,,,"));
        assert!(!lines.last().unwrap().contains(",,"));
    }
}
