//! The four run commands: single trajectory, ensemble, J scaling and the
//! small-J master-equation check.
//!
//! Each command writes CSV tables into the output directory, every one headed
//! by `#` comment lines carrying the resolved config and master seed, plus a
//! JSON sidecar `<command>.json` with the same echo, the list of files and
//! the pass/fail checks.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dynamics::{
    conditional_variance, default_cutoff_hz, lowpass_filter, simulate_trajectory_with, DynamicsError,
    NoiseMode,
};
use crate::estimators::{
    detection_threshold_asymptotic, riccati_analytic, riccati_at_times, run_filter, shotnoise_limit,
    CurveSource, EstimatorError, ThresholdCurve,
};
use crate::montecarlo::{conditional_error_moments, run_ensemble, scaling_study, EnsembleSpec, EstimatorKind, MonteCarloError};
use crate::params::{PhysicalParams, PriorVariance};
use crate::seed::substream;
use crate::sme::{compare_to_gaussian_with, dephasing_check, oracle_grid, SmeError};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Sme(#[from] SmeError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Outcome of one requested check. Non-gating checks are reported but do not
/// affect the exit status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub gating: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            gating: true,
            detail: detail.into(),
        }
    }

    fn informational(mut self) -> Self {
        self.gating = false;
        self
    }

    pub fn label(&self) -> &'static str {
        match (self.passed, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "INFO-FAIL",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CommandReport {
    pub command: &'static str,
    pub outputs: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub results: Value,
}

impl CommandReport {
    /// True iff every gating check passed.
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.gating)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed && c.gating).collect()
    }
}

/// Output directory plus the provenance header every file carries.
struct Artifacts {
    dir: PathBuf,
    header: String,
    echo: Value,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(cfg: &RunConfig, params: &PhysicalParams) -> Result<Self, CommandError> {
        let dir = cfg.run.out_dir.clone();
        fs::create_dir_all(&dir).map_err(|source| CommandError::Io {
            path: dir.clone(),
            source,
        })?;
        let echo = json!({ "config": cfg, "params": params, "seed": cfg.run.seed });
        let header = format!(
            "# config: {}\n# params: {}\n# seed: {}\n",
            serde_json::to_string(cfg).expect("config serializes"),
            serde_json::to_string(params).expect("params serialize"),
            cfg.run.seed
        );
        Ok(Artifacts {
            dir,
            header,
            echo,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), CommandError> {
        let path = self.dir.join(name);
        let mut buf = self.header.clone().into_bytes();
        body(&mut buf)
            .and_then(|_| fs::write(&path, &buf))
            .map_err(|source| CommandError::Io {
                path: path.clone(),
                source,
            })?;
        self.written.push(path);
        Ok(())
    }

    fn finish(mut self, command: &'static str, checks: Vec<Check>, results: Value) -> Result<CommandReport, CommandError> {
        let path = self.dir.join(format!("{command}.json"));
        self.written.push(path.clone());
        let report = CommandReport {
            command,
            outputs: self.written,
            checks,
            results,
        };
        let mut doc = self.echo;
        doc["command"] = json!(command);
        doc["outputs"] = json!(report.outputs);
        doc["checks"] = json!(report.checks);
        doc["ok"] = json!(report.ok());
        doc["results"] = report.results.clone();
        let text = serde_json::to_string_pretty(&doc).expect("summary serializes");
        fs::write(&path, text + "\n").map_err(|source| CommandError::Io { path, source })?;
        Ok(report)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One trajectory: `trajectory.csv`, `photocurrent.csv` (raw and low-passed)
/// and the Kalman filter trace `filter.csv`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<CommandReport, CommandError> {
    let p = cfg.params()?;
    let grid = cfg.grid_for(&p)?;
    let mode = if cfg.simulate.zero_noise {
        NoiseMode::Zero
    } else {
        NoiseMode::Gaussian
    };
    let rec = simulate_trajectory_with(&p, &grid, substream(cfg.run.seed, cfg.simulate.stream), mode)?;
    let cutoff = cfg.simulate.cutoff_hz.unwrap_or_else(|| default_cutoff_hz(&p));
    let steps: Vec<f64> = (0..grid.n_steps()).map(|k| grid.step(k)).collect();
    let filtered = lowpass_filter(&rec.y, &steps, cutoff)?;
    let trace = run_filter(&p, &rec)?;

    let mut out = Artifacts::new(cfg, &p)?;
    out.write("trajectory.csv", |w| rec.write_csv(w))?;
    out.write("photocurrent.csv", |w| {
        writeln!(w, "t,y,y_filtered")?;
        for k in 0..rec.y.len() {
            writeln!(w, "{:e},{:e},{:e}", grid.t(k), rec.y[k], filtered[k])?;
        }
        Ok(())
    })?;
    out.write("filter.csv", |w| trace.write_csv(w))?;

    let mut checks = Vec::new();
    let noise_err = max_abs_diff(&rec.reconstruct_noise(&p), &rec.noise);
    checks.push(Check::new(
        "record_consistency",
        noise_err <= 1e-9 * grid.dt().sqrt(),
        format!("max |dW reconstructed − dW| = {noise_err:e}"),
    ));
    let var_ok = rec
        .states
        .iter()
        .all(|s| conditional_variance(&p, s.t).map(|v| v == s.var_jz).unwrap_or(false));
    checks.push(Check::new("variance_closed_form", var_ok, "⟨ΔĴz²⟩ equals its closed form at every point"));
    if mode == NoiseMode::Zero {
        let last = rec.states.last().expect("non-empty");
        let expected = p.gamma * p.b_true * p.j_total * (2.0 / p.meas_strength)
            * (-(-0.5 * p.meas_strength * last.t).exp_m1());
        let rel = if expected != 0.0 {
            ((last.mean_jz - expected) / expected).abs()
        } else {
            last.mean_jz.abs()
        };
        checks.push(Check::new(
            "drift_ramp",
            rel <= 1e-6,
            format!("final ⟨Ĵz⟩ {:e} vs drift integral {expected:e}", last.mean_jz),
        ));
    }
    // Late-time offset: average of ⟨Ĵz⟩ over the final half of the record.
    let half = rec.states.len() / 2;
    let offset = rec.states[half..].iter().map(|s| s.mean_jz).sum::<f64>() / (rec.states.len() - half) as f64;
    let final_b = trace.states.last().and_then(|s| s.b_estimate());
    let results = json!({
        "n_steps": grid.n_steps(),
        "cutoff_hz": cutoff,
        "late_mean_jz": offset,
        "offset_in_projection_units": offset / (p.j_total / 2.0).sqrt(),
        "final_b_estimate": final_b,
    });
    out.finish("simulate", checks, results)
}

/// Threshold curves at the given times.
fn threshold_curves(p: &PhysicalParams, times: &[f64]) -> Result<Vec<ThresholdCurve>, CommandError> {
    let with_zero: Vec<f64> = std::iter::once(0.0).chain(times.iter().copied()).collect();
    let numeric = riccati_at_times(p, &with_zero)?.threshold_curve();
    let inf = p.with_prior(PriorVariance::Infinite);
    let analytic = ThresholdCurve::from_fn(times, CurveSource::RiccatiAnalytic, |t| riccati_analytic(&inf, t))?;
    let asymptotic = ThresholdCurve::from_fn(times, CurveSource::Asymptotic, |t| {
        Ok(detection_threshold_asymptotic(p, t))
    })?;
    let shot = ThresholdCurve::from_fn(times, CurveSource::Shotnoise, |t| Ok(shotnoise_limit(p, t)))?;
    Ok(vec![numeric, analytic, asymptotic, shot])
}

/// Ensemble error statistics (`ensemble.csv`) and the predicted threshold
/// curves (`thresholds.csv`).
pub fn cmd_ensemble(cfg: &RunConfig) -> Result<CommandReport, CommandError> {
    let p = cfg.params()?;
    let grid = cfg.grid_for(&p)?;
    let ec = &cfg.ensemble;
    let mut spec = EnsembleSpec::new(p, grid.clone(), cfg.run.n_traj, cfg.run.seed).with_estimators(&ec.estimators);
    spec.checkpoints = match &ec.checkpoint_times {
        Some(times) => spec.clone().with_checkpoint_times(times).checkpoints,
        None => grid
            .log_checkpoints(ec.checkpoints_per_decade)
            .into_iter()
            .filter(|&k| k >= 3)
            .collect(),
    };
    if ec.t_sensitivity <= grid.t_end() {
        spec.checkpoints.push(grid.nearest_index(ec.t_sensitivity));
        spec.checkpoints.sort_unstable();
        spec.checkpoints.dedup();
    }
    let stats = run_ensemble(&spec)?;
    let times = spec.checkpoint_times();
    let curves = threshold_curves(&p, &times)?;

    let mut out = Artifacts::new(cfg, &p)?;
    out.write("ensemble.csv", |w| stats.write_csv(w))?;
    out.write("thresholds.csv", |w| {
        ThresholdCurve::write_csv(&curves.iter().collect::<Vec<_>>(), w)
    })?;

    let mut checks = Vec::new();
    if ec.estimators.contains(&EstimatorKind::Qkf) {
        let qkf: Vec<_> = stats.for_estimator(EstimatorKind::Qkf).collect();
        let (mut worst_mse, mut worst_bias) = (0.0f64, 0.0f64);
        for r in &qkf {
            let (bias, mse) = conditional_error_moments(&p, r.predicted_v22);
            worst_mse = worst_mse.max((r.mse - mse).abs() / r.stderr);
            worst_bias = worst_bias.max((r.mean_b - p.b_true - bias).abs() / r.mean_b_stderr);
        }
        checks.push(Check::new(
            "qkf_matches_riccati",
            worst_mse <= 4.0,
            format!("max |MSE − predicted|/stderr = {worst_mse:.2} over {} checkpoints (limit 4)", qkf.len()),
        ));
        checks.push(Check::new(
            "qkf_unbiased",
            worst_bias <= 4.0,
            format!("max |mean error − prior shrinkage|/stderr = {worst_bias:.2} (limit 4)"),
        ));
    }
    let (numeric, analytic) = (&curves[0], &curves[1]);
    if let (Some(&n0), Some(&a0)) = (numeric.delta_b.first(), analytic.delta_b.first()) {
        checks.push(Check::new(
            "infinite_prior_above_finite",
            a0 > n0,
            format!("at t = {:e}: infinite prior {a0:e} G, finite prior {n0:e} G", times[0]),
        ));
    }
    let ts = ec.t_sensitivity;
    let [lo, hi] = ec.sensitivity_range;
    let in_range = |v: f64| v >= lo && v <= hi;
    let eq12 = riccati_analytic(&p.with_prior(PriorVariance::Infinite), ts)?;
    let eq13 = detection_threshold_asymptotic(&p, ts);
    let mut magnitude = vec![("closed_form", eq12), ("asymptotic", eq13)];
    if let Some(r) = stats.get(EstimatorKind::Qkf, grid.nearest_index(ts)).filter(|_| ts <= grid.t_end()) {
        magnitude.push(("empirical_qkf", r.rms()));
    }
    for (name, v) in &magnitude {
        checks.push(Check::new(
            format!("sensitivity_{name}"),
            in_range(*v),
            format!("δB̃({ts:e} s) = {:.4} nG, accepted [{:.4}, {:.4}] nG", v * 1e9, lo * 1e9, hi * 1e9),
        ));
    }

    let results = json!({
        "n_checkpoints": times.len(),
        "rows": stats.rows,
        "sensitivity": magnitude.iter().map(|(n, v)| json!({"source": n, "delta_b": v})).collect::<Vec<_>>(),
    });
    out.finish("ensemble", checks, results)
}

/// RMS error against J (`scaling.csv`) with fitted log-log slopes.
pub fn cmd_scaling(cfg: &RunConfig) -> Result<CommandReport, CommandError> {
    let sc = &cfg.scaling;
    let p = PhysicalParams {
        t_total: sc.t_check,
        ..cfg.params()?
    };
    let grid = cfg.grid_for(&p)?;
    let mut base = EnsembleSpec::new(p, grid.clone(), sc.n_traj.unwrap_or(cfg.run.n_traj), cfg.run.seed)
        .with_estimators(&sc.estimators);
    base.checkpoints = vec![grid.n_steps()];
    let result = scaling_study(&base, &sc.j_values)?;

    let mut out = Artifacts::new(cfg, &p)?;
    out.write("scaling.csv", |w| result.write_csv(w))?;

    let mut checks = Vec::new();
    for &(est, slope) in &result.slopes {
        checks.push(Check::new(
            format!("slope_{est}"),
            (slope + 1.0).abs() <= sc.slope_tolerance,
            format!("slope {slope:.4}, expected −1 ± {}", sc.slope_tolerance),
        ));
    }
    checks.push(Check::new(
        "slope_shotnoise",
        (result.shotnoise_slope + 0.5).abs() <= 1e-12,
        format!("slope {:.15}", result.shotnoise_slope),
    ));
    checks.push(
        Check::new(
            "slope_riccati",
            (result.predicted_slope + 1.0).abs() <= sc.slope_tolerance,
            format!("slope {:.4}", result.predicted_slope),
        )
        .informational(),
    );
    let results = serde_json::to_value(&result).expect("scaling result serializes");
    out.finish("scaling", checks, results)
}

/// Matched-noise SME comparison (`oracle_deviation.csv`) and the dephasing
/// law (`dephasing.csv`).
pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<CommandReport, CommandError> {
    let p = cfg.params()?;
    let oc = &cfg.oracle;
    let grid = oracle_grid(&p)?;
    let mut out = Artifacts::new(cfg, &p)?;
    let mut checks = Vec::new();

    let agreement = |check: Check| {
        if oc.expect_agreement {
            check
        } else {
            check.informational()
        }
    };
    let main = compare_to_gaussian_with(&p, &grid, substream(cfg.run.seed, 0), oc.scheme);
    let mut results = json!({
        "j": p.j_total,
        "m_t": p.meas_strength * p.t_total,
        "larmor_angle": p.larmor_frequency() * p.t_total,
        "dt": grid.dt(),
    });
    match &main {
        Ok(cmp) => {
            out.write("oracle_deviation.csv", |w| cmp.write_csv(w))?;
            checks.push(agreement(Check::new(
                "gaussian_agreement",
                cmp.passes(),
                format!(
                    "max |Δmean| = {:.4e}, limit 0.05·√(J/2) = {:.4e}; max |Δvar| = {:.4e}",
                    cmp.max_d_mean(),
                    cmp.mean_threshold(),
                    cmp.max_d_var()
                ),
            )));
            results["max_d_mean"] = json!(cmp.max_d_mean());
            results["max_d_var"] = json!(cmp.max_d_var());
            results["min_eigenvalue"] = json!(cmp.min_eigenvalue);
        }
        Err(e) => checks.push(agreement(Check::new("gaussian_agreement", false, e.to_string()))),
    }
    if oc.extra_runs > 0 {
        let mut passed = 0;
        for s in 1..=oc.extra_runs as u64 {
            if compare_to_gaussian_with(&p, &grid, substream(cfg.run.seed, s), oc.scheme).is_ok_and(|c| c.passes()) {
                passed += 1;
            }
        }
        let frac = passed as f64 / oc.extra_runs as f64;
        results["extra_pass_fraction"] = json!(frac);
        checks.push(
            Check::new(
                "agreement_across_streams",
                passed == oc.extra_runs,
                format!("{passed}/{} further streams within the limit", oc.extra_runs),
            )
            .informational(),
        );
    }

    let mut reports = Vec::new();
    for &j in &oc.dephasing_j {
        match dephasing_check(j, p.meas_strength, oc.scheme) {
            Ok(r) => {
                checks.push(Check::new(
                    format!("dephasing_j{j}"),
                    r.max_rel_error <= oc.dephasing_tolerance,
                    format!("max relative error {:.3e} at t = {:e} s", r.max_rel_error, r.t),
                ));
                reports.push(r);
            }
            Err(e) => checks.push(Check::new(format!("dephasing_j{j}"), false, e.to_string())),
        }
    }
    out.write("dephasing.csv", |w| {
        writeln!(w, "j,t,max_rel_error")?;
        for r in &reports {
            writeln!(w, "{:e},{:e},{:e}", r.j, r.t, r.max_rel_error)?;
        }
        Ok(())
    })?;
    out.finish("oracle-check", checks, results)
}

/// Runs a command by its command-line name.
pub fn run_command(name: &str, cfg: &RunConfig) -> Result<CommandReport, CommandError> {
    match name {
        "simulate" => cmd_simulate(cfg),
        "ensemble" => cmd_ensemble(cfg),
        "scaling" => cmd_scaling(cfg),
        "oracle-check" => cmd_oracle_check(cfg),
        other => Err(ConfigError::Field {
            field: "command".into(),
            message: format!("unknown command {other:?}"),
        }
        .into()),
    }
}

/// Reads every file a report lists, for byte comparisons.
pub fn read_outputs(report: &CommandReport) -> io::Result<Vec<(PathBuf, Vec<u8>)>> {
    report
        .outputs
        .iter()
        .map(|p| Ok((p.clone(), fs::read(p)?)))
        .collect()
}

/// Path of a report output by file name.
pub fn output_named<'a>(report: &'a CommandReport, name: &str) -> Option<&'a Path> {
    report
        .outputs
        .iter()
        .find(|p| p.file_name().is_some_and(|f| f == name))
        .map(|p| p.as_path())
}
