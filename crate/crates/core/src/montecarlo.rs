//! Parallel ensembles of trajectories and their error statistics.
//!
//! Every trajectory draws its noise from its own substream, and both
//! estimators read the same record. Trajectories are grouped into fixed-size
//! chunks; each chunk is summed in index order and the chunk sums are reduced
//! in chunk order, so results are bit-identical for any number of workers.

use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{check_small_angle, step_coefficients, DynamicsError, StepCoefficients};
use crate::estimators::{
    riccati_at_times, shotnoise_limit, EstimatorError, GainSchedule, RegressionAccumulator,
};
use crate::grid::{GridError, TimeGrid};
use crate::params::{ParamError, PhysicalParams};
pub use crate::seed::substream;

/// Trajectories per reduction chunk.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("an ensemble needs at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("no checkpoints requested")]
    NoCheckpoints,
    #[error("no estimators requested")]
    NoEstimators,
    #[error("checkpoint index {index} outside the grid (1..={n_steps})")]
    CheckpointOutOfRange { index: usize, n_steps: usize },
    #[error("checkpoints must be strictly increasing")]
    UnsortedCheckpoints,
    #[error("{estimator} estimate undefined at checkpoint t = {t:e}")]
    UndefinedEstimate { estimator: EstimatorKind, t: f64 },
    #[error("scaling study needs at least 4 J values spanning 2 decades, got {count} spanning {decades:.2}")]
    InsufficientSpan { count: usize, decades: f64 },
    #[error("t_check = {t_check:e} s is not long compared with 1/(JM) = {scale:e} s")]
    CheckTooEarly { t_check: f64, scale: f64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Qkf,
    Regression,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            EstimatorKind::Qkf => "qkf",
            EstimatorKind::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub params: PhysicalParams,
    pub grid: TimeGrid,
    pub n_traj: usize,
    pub master_seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Grid indices at which errors are recorded.
    pub checkpoints: Vec<usize>,
}

/// Default checkpoint density.
pub const CHECKPOINTS_PER_DECADE: u32 = 30;

impl EnsembleSpec {
    /// Both estimators, checkpoints log-spaced over the grid.
    pub fn new(params: PhysicalParams, grid: TimeGrid, n_traj: usize, master_seed: u64) -> Self {
        let checkpoints = grid
            .log_checkpoints(CHECKPOINTS_PER_DECADE)
            .into_iter()
            .filter(|&k| k >= 3)
            .collect();
        EnsembleSpec {
            params,
            grid,
            n_traj,
            master_seed,
            estimators: vec![EstimatorKind::Qkf, EstimatorKind::Regression],
            checkpoints,
        }
    }

    /// Replaces the checkpoints by the grid points nearest to `times`.
    pub fn with_checkpoint_times(mut self, times: &[f64]) -> Self {
        let mut idx: Vec<usize> = times.iter().map(|&t| self.grid.nearest_index(t)).collect();
        idx.sort_unstable();
        idx.dedup();
        self.checkpoints = idx;
        self
    }

    pub fn with_estimators(mut self, estimators: &[EstimatorKind]) -> Self {
        self.estimators = estimators.to_vec();
        self
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        self.params.validate()?;
        if self.n_traj < 2 {
            return Err(MonteCarloError::TooFewTrajectories(self.n_traj));
        }
        if self.estimators.is_empty() {
            return Err(MonteCarloError::NoEstimators);
        }
        if self.checkpoints.is_empty() {
            return Err(MonteCarloError::NoCheckpoints);
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MonteCarloError::UnsortedCheckpoints);
        }
        let n_steps = self.grid.n_steps();
        for &index in &self.checkpoints {
            if index == 0 || index > n_steps {
                return Err(MonteCarloError::CheckpointOutOfRange { index, n_steps });
            }
        }
        Ok(())
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|&k| self.grid.t(k)).collect()
    }
}

/// Statistics of one estimator at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub t: f64,
    pub index: usize,
    pub estimator: EstimatorKind,
    /// E[(B̃ − B)²], G².
    pub mse: f64,
    /// Standard error of `mse`.
    pub stderr: f64,
    /// Ensemble mean of B̃, G.
    pub mean_b: f64,
    /// Standard error of `mean_b`.
    pub mean_b_stderr: f64,
    /// V₂₂ from the Riccati equation, G².
    pub predicted_v22: f64,
}

impl CheckpointStats {
    pub fn rms(&self) -> f64 {
        self.mse.sqrt()
    }

    pub fn rms_stderr(&self) -> f64 {
        self.stderr / (2.0 * self.mse.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub master_seed: u64,
    pub b_true: f64,
    /// Checkpoint-major, estimators in spec order within each checkpoint.
    pub rows: Vec<CheckpointStats>,
}

impl EnsembleStats {
    pub fn get(&self, estimator: EstimatorKind, index: usize) -> Option<&CheckpointStats> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.index == index)
    }

    pub fn for_estimator(&self, estimator: EstimatorKind) -> impl Iterator<Item = &CheckpointStats> {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }

    /// Writes `t,estimator,mse,stderr,predicted_v22,mean_b`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,estimator,mse,stderr,predicted_v22,mean_b")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:e},{},{:e},{:e},{:e},{:e}",
                r.t, r.estimator, r.mse, r.stderr, r.predicted_v22, r.mean_b
            )?;
        }
        Ok(())
    }
}

/// Raw power sums of the errors e = B̃ − B.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    s1: f64,
    s2: f64,
    s4: f64,
}

impl Sums {
    #[inline]
    fn push(&mut self, e: f64) {
        let e2 = e * e;
        self.s1 += e;
        self.s2 += e2;
        self.s4 += e2 * e2;
    }

    fn merge(&mut self, o: &Sums) {
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.s4 += o.s4;
    }
}

/// Everything a trajectory needs, computed once per ensemble.
pub struct EnsembleRunner {
    spec: EnsembleSpec,
    coeffs: Vec<StepCoefficients>,
    schedule: Option<GainSchedule>,
    record_noise: f64,
    /// For each step, the checkpoint slot it ends, if any.
    slot_of_step: Vec<Option<usize>>,
}

impl EnsembleRunner {
    pub fn new(spec: EnsembleSpec) -> Result<Self, MonteCarloError> {
        spec.validate()?;
        let p = spec.params;
        check_small_angle(&p);
        let last = *spec.checkpoints.last().expect("validated non-empty");
        let mut coeffs = step_coefficients(&p, &spec.grid);
        coeffs.truncate(last);

        let schedule = if spec.estimators.contains(&EstimatorKind::Qkf) {
            let s = GainSchedule::up_to(&p, &spec.grid, last)?;
            for &c in &spec.checkpoints {
                if s.v22(c).is_none() {
                    return Err(MonteCarloError::UndefinedEstimate {
                        estimator: EstimatorKind::Qkf,
                        t: spec.grid.t(c),
                    });
                }
            }
            Some(s)
        } else {
            None
        };
        if spec.estimators.contains(&EstimatorKind::Regression) && spec.checkpoints[0] < 3 {
            return Err(EstimatorError::TooFewPoints(spec.checkpoints[0]).into());
        }

        let mut slot_of_step = vec![None; last];
        for (slot, &c) in spec.checkpoints.iter().enumerate() {
            slot_of_step[c - 1] = Some(slot);
        }
        Ok(EnsembleRunner {
            record_noise: p.record_noise(),
            spec,
            coeffs,
            schedule,
            slot_of_step,
        })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// Errors B̃ − B of trajectory `i`, checkpoint-major with estimators in
    /// spec order. The record is the one `simulate_trajectory` produces for
    /// stream `i`.
    pub fn trajectory_errors(&self, i: u64) -> Vec<f64> {
        let n_est = self.spec.estimators.len();
        let mut out = vec![0.0; self.spec.checkpoints.len() * n_est];
        self.run_trajectory(i, |slot, e, err| out[slot * n_est + e] = err);
        out
    }

    #[inline]
    fn run_trajectory(&self, i: u64, mut emit: impl FnMut(usize, usize, f64)) {
        let p = &self.spec.params;
        let b = p.b_true;
        let d = self.record_noise;
        let mut rng = substream(self.spec.master_seed, i).rng();
        let maps = self.schedule.as_ref().map(|s| s.maps());
        let want_reg = self.spec.estimators.contains(&EstimatorKind::Regression);
        let mut mean = 0.0;
        let mut data = [0.0, 0.0];
        let mut reg = RegressionAccumulator::new();
        for (k, c) in self.coeffs.iter().enumerate() {
            let dw = c.sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            // Same arithmetic as photocurrent_increment and the trajectory
            // integrator, so the record is bit-identical.
            let d_xi = mean * c.dt + d * dw;
            mean += c.precession * b * c.dt + c.diffusion * dw;
            if let Some(maps) = maps {
                data = maps[k].apply(data, d_xi);
            }
            if want_reg {
                reg.push(c.t, c.dt, d_xi);
            }
            if let Some(slot) = self.slot_of_step[k] {
                for (e, est) in self.spec.estimators.iter().enumerate() {
                    let b_hat = match est {
                        EstimatorKind::Qkf => self
                            .schedule
                            .as_ref()
                            .and_then(|s| s.b_estimate(k + 1, data))
                            .expect("checked at construction"),
                        EstimatorKind::Regression => reg.b_estimate(p).expect("checked at construction"),
                    };
                    emit(slot, e, b_hat - b);
                }
            }
        }
    }

    fn chunk_sums(&self, chunk: usize) -> Vec<Sums> {
        let n_est = self.spec.estimators.len();
        let mut sums = vec![Sums::default(); self.spec.checkpoints.len() * n_est];
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(self.spec.n_traj);
        for i in lo..hi {
            self.run_trajectory(i as u64, |slot, e, err| sums[slot * n_est + e].push(err));
        }
        sums
    }

    pub fn run(&self) -> Result<EnsembleStats, MonteCarloError> {
        let spec = &self.spec;
        let n_chunks = spec.n_traj.div_ceil(CHUNK);
        let partial: Vec<Vec<Sums>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| self.chunk_sums(c))
            .collect();
        let mut total = vec![Sums::default(); partial[0].len()];
        for part in &partial {
            for (t, s) in total.iter_mut().zip(part) {
                t.merge(s);
            }
        }

        let times: Vec<f64> = std::iter::once(0.0).chain(spec.checkpoint_times()).collect();
        let riccati = riccati_at_times(&spec.params, &times)?;

        let n = spec.n_traj as f64;
        let n_est = spec.estimators.len();
        let mut rows = Vec::with_capacity(total.len());
        for (slot, &index) in spec.checkpoints.iter().enumerate() {
            for (e, &estimator) in spec.estimators.iter().enumerate() {
                let s = &total[slot * n_est + e];
                let mean = s.s1 / n;
                let mse = s.s2 / n;
                let var_e = ((s.s2 - n * mean * mean) / (n - 1.0)).max(0.0);
                let var_e2 = ((s.s4 - n * mse * mse) / (n - 1.0)).max(0.0);
                rows.push(CheckpointStats {
                    t: spec.grid.t(index),
                    index,
                    estimator,
                    mse,
                    stderr: (var_e2 / n).sqrt(),
                    mean_b: spec.params.b_true + mean,
                    mean_b_stderr: (var_e / n).sqrt(),
                    predicted_v22: riccati.v22(slot + 1).unwrap_or(f64::INFINITY),
                });
            }
        }
        Ok(EnsembleStats {
            n_traj: spec.n_traj,
            master_seed: spec.master_seed,
            b_true: spec.params.b_true,
            rows,
        })
    }
}

/// Error moments of the posterior-mean estimate for a fixed true field.
///
/// The prior mean is zero, so B̃ is shrunk toward it until the data dominate:
/// E[B̃ − B] = −(V/V₀)·B and E[(B̃ − B)²] = V(1 − V/V₀) + (V·B/V₀)², with V the
/// posterior variance V₂₂ and V₀ the prior. Returns `(bias, mse)`.
pub fn conditional_error_moments(p: &PhysicalParams, v22: f64) -> (f64, f64) {
    let shrink = v22 * p.prior_b_variance.information();
    let bias = -shrink * p.b_true;
    (bias, v22 * (1.0 - shrink) + bias * bias)
}

pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleStats, MonteCarloError> {
    EnsembleRunner::new(spec.clone())?.run()
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One row of a scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub j: f64,
    pub estimator: EstimatorKind,
    pub rms: f64,
    pub rms_stderr: f64,
    /// √V₂₂ from the Riccati equation.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub t_check: f64,
    pub j_values: Vec<f64>,
    pub points: Vec<ScalingPoint>,
    /// Projection-noise limit at each J.
    pub shotnoise: Vec<f64>,
    pub slopes: Vec<(EstimatorKind, f64)>,
    pub predicted_slope: f64,
    pub shotnoise_slope: f64,
}

impl ScalingResult {
    pub fn slope(&self, estimator: EstimatorKind) -> Option<f64> {
        self.slopes.iter().find(|s| s.0 == estimator).map(|s| s.1)
    }

    /// Writes `j,source,delta_b,stderr` with one row per J for each
    /// estimator, the Riccati prediction and the shotnoise limit.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "j,source,delta_b,stderr")?;
        for pt in &self.points {
            writeln!(w, "{:e},{},{:e},{:e}", pt.j, pt.estimator, pt.rms, pt.rms_stderr)?;
        }
        for (i, &j) in self.j_values.iter().enumerate() {
            let pt = self.points.iter().find(|pt| pt.j == j).expect("one point per J");
            writeln!(w, "{j:e},riccati,{:e},0e0", pt.predicted)?;
            writeln!(w, "{j:e},shotnoise,{:e},0e0", self.shotnoise[i])?;
        }
        Ok(())
    }
}

/// RMS error against J at the last checkpoint time of `base`.
///
/// Each J gets its own grid with the base grid's uniform step over
/// `[0, t_check]`; all J values share the master seed.
pub fn scaling_study(base: &EnsembleSpec, j_values: &[f64]) -> Result<ScalingResult, MonteCarloError> {
    base.validate()?;
    let t_check = base.grid.t(*base.checkpoints.last().expect("validated"));
    let j_min = j_values.iter().copied().fold(f64::INFINITY, f64::min);
    let j_max = j_values.iter().copied().fold(0.0, f64::max);
    let decades = (j_max / j_min).log10();
    if j_values.len() < 4 || !(decades >= 2.0) {
        return Err(MonteCarloError::InsufficientSpan {
            count: j_values.len(),
            decades: if decades.is_finite() { decades } else { 0.0 },
        });
    }
    let scale = 1.0 / (j_min * base.params.meas_strength);
    if t_check < 100.0 * scale {
        return Err(MonteCarloError::CheckTooEarly { t_check, scale });
    }

    let mut points = Vec::new();
    let mut shotnoise = Vec::new();
    for &j in j_values {
        let p = PhysicalParams {
            t_total: t_check,
            ..base.params.with_j(j)
        };
        let grid = TimeGrid::for_params_with_step(&p, base.grid.dt())?;
        let spec = EnsembleSpec {
            params: p,
            checkpoints: vec![grid.n_steps()],
            grid,
            n_traj: base.n_traj,
            master_seed: base.master_seed,
            estimators: base.estimators.clone(),
        };
        let stats = run_ensemble(&spec)?;
        for r in &stats.rows {
            points.push(ScalingPoint {
                j,
                estimator: r.estimator,
                rms: r.rms(),
                rms_stderr: r.rms_stderr(),
                predicted: r.predicted_v22.sqrt(),
            });
        }
        shotnoise.push(shotnoise_limit(&p, t_check));
    }

    let slopes = base
        .estimators
        .iter()
        .map(|&est| {
            let rms: Vec<f64> = points.iter().filter(|pt| pt.estimator == est).map(|pt| pt.rms).collect();
            (est, loglog_slope(j_values, &rms))
        })
        .collect();
    let first = base.estimators[0];
    let predicted: Vec<f64> = points
        .iter()
        .filter(|pt| pt.estimator == first)
        .map(|pt| pt.predicted)
        .collect();
    Ok(ScalingResult {
        t_check,
        j_values: j_values.to_vec(),
        predicted_slope: loglog_slope(j_values, &predicted),
        shotnoise_slope: loglog_slope(j_values, &shotnoise),
        points,
        shotnoise,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_trajectory;
    use crate::estimators::{regression_estimate, run_filter};
    use crate::seed::SeedSpec;

    fn short_spec(n_traj: usize) -> EnsembleSpec {
        let p = PhysicalParams {
            t_total: 2e-6,
            ..PhysicalParams::benchmark()
        };
        let grid = TimeGrid::for_params(&p).unwrap();
        EnsembleSpec::new(p, grid, n_traj, 17)
    }

    #[test]
    fn ensemble_records_match_single_trajectories() {
        let spec = short_spec(4);
        let runner = EnsembleRunner::new(spec.clone()).unwrap();
        for i in 0..4 {
            let errs = runner.trajectory_errors(i);
            let rec = simulate_trajectory(&spec.params, &spec.grid, SeedSpec::new(17, i)).unwrap();
            let trace = run_filter(&spec.params, &rec).unwrap();
            for (slot, &c) in spec.checkpoints.iter().enumerate() {
                let qkf = trace.states[c].b_estimate().unwrap() - spec.params.b_true;
                let reg = regression_estimate(&rec, &spec.params, spec.grid.t(c)).unwrap() - spec.params.b_true;
                assert_eq!(errs[2 * slot], qkf, "qkf, checkpoint {c}");
                let tol = 1e-9 * reg.abs().max(1e-12);
                assert!((errs[2 * slot + 1] - reg).abs() <= tol, "regression, checkpoint {c}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = short_spec(1);
        assert_eq!(run_ensemble(&spec), Err(MonteCarloError::TooFewTrajectories(1)));
        let mut spec = short_spec(10);
        spec.checkpoints = vec![5, 3];
        assert_eq!(run_ensemble(&spec), Err(MonteCarloError::UnsortedCheckpoints));
        spec.checkpoints = vec![spec.grid.n_steps() + 1];
        assert!(matches!(
            run_ensemble(&spec),
            Err(MonteCarloError::CheckpointOutOfRange { .. })
        ));
        spec.checkpoints.clear();
        assert_eq!(run_ensemble(&spec), Err(MonteCarloError::NoCheckpoints));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let spec = short_spec(150);
        assert_eq!(run_ensemble(&spec).unwrap(), run_ensemble(&spec).unwrap());
    }

    #[test]
    fn worker_count_does_not_matter() {
        let spec = short_spec(200);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_ensemble(&spec)).unwrap();
        let b = four.install(|| run_ensemble(&spec)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stats_are_well_formed() {
        let stats = run_ensemble(&short_spec(50)).unwrap();
        for r in &stats.rows {
            assert!(r.mse >= 0.0 && r.stderr > 0.0 && r.predicted_v22 > 0.0);
        }
        let mut buf = Vec::new();
        stats.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,estimator,mse,stderr,predicted_v22,mean_b");
        assert_eq!(text.lines().count(), stats.rows.len() + 1);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.75)).collect();
        assert!((loglog_slope(&x, &y) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn scaling_needs_span() {
        let spec = short_spec(10);
        assert!(matches!(
            scaling_study(&spec, &[1e4, 1e5, 1e6]),
            Err(MonteCarloError::InsufficientSpan { .. })
        ));
        assert!(matches!(
            scaling_study(&spec, &[1e4, 2e4, 5e4, 9e4]),
            Err(MonteCarloError::InsufficientSpan { .. })
        ));
    }
}
