//! Property checks shared by the invariant suite and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use qmag::dynamics::{conditional_variance, simulate_trajectory};
use qmag::estimators::{GainSchedule, Posterior};
use qmag::sme::{build_spin_operators, coherent_spin_state_x, sme_step, stable_step, SmeModel, SmeScheme};
use qmag::{substream, PhysicalParams, PriorVariance, TimeGrid};

/// Gaussian-model parameters over the validated ranges, with records short
/// enough to keep each case fast.
pub fn gaussian_params() -> impl Strategy<Value = PhysicalParams> {
    (
        1.0f64..7.0,
        2.0f64..6.0,
        0.05f64..=1.0,
        -1e-5f64..1e-5,
        prop_oneof![Just(None), (-12.0f64..-6.0).prop_map(Some)],
        -3.0f64..-0.3,
    )
        .prop_filter_map("invalid parameters", |(lj, lm, eta, b, prior, lc)| {
            let m = 10f64.powf(lm);
            PhysicalParams {
                j_total: 10f64.powf(lj),
                gamma: TAU * 1e6,
                b_true: b,
                meas_strength: m,
                efficiency: eta,
                prior_b_variance: prior.map_or(PriorVariance::Infinite, |l| PriorVariance::Finite(10f64.powf(l))),
                t_total: 10f64.powf(lc) / m,
            }
            .validate()
            .ok()
        })
}

pub fn covariance_stays_psd(p: &PhysicalParams) -> Result<(), String> {
    let grid = TimeGrid::for_params(p).map_err(|e| e.to_string())?;
    let gs = GainSchedule::new(p, &grid).map_err(|e| e.to_string())?;
    for k in 0..=gs.len() {
        let ok = match gs.posterior(k) {
            Posterior::Covariance(v) => v.is_psd(1e-9) && v.xx >= 0.0 && v.yy > 0.0,
            Posterior::Information { u, info, .. } => u >= 0.0 && info >= 0.0,
        };
        if !ok {
            return Err(format!("step {k}: {:?}", gs.posterior(k)));
        }
    }
    Ok(())
}

pub fn variance_non_increasing(p: &PhysicalParams, seed: u64) -> Result<(), String> {
    let grid = TimeGrid::for_params(p).map_err(|e| e.to_string())?;
    let rec = simulate_trajectory(p, &grid, substream(seed, 0)).map_err(|e| e.to_string())?;
    let mut prev = f64::INFINITY;
    for s in &rec.states {
        let closed = conditional_variance(p, s.t).map_err(|e| e.to_string())?;
        if !(s.var_jz > 0.0 && s.var_jz <= prev && s.var_jz <= p.j_total / 2.0 && s.var_jz == closed) {
            return Err(format!("t = {:e}: variance {:e} after {prev:e}", s.t, s.var_jz));
        }
        prev = s.var_jz;
    }
    Ok(())
}

pub fn record_reconstructs_noise(p: &PhysicalParams, seed: u64) -> Result<(), String> {
    let grid = TimeGrid::for_params(p).map_err(|e| e.to_string())?;
    let rec = simulate_trajectory(p, &grid, substream(seed, 1)).map_err(|e| e.to_string())?;
    for (k, (a, b)) in rec.reconstruct_noise(p).iter().zip(&rec.noise).enumerate() {
        // Roundoff of the drift term dominates when ⟨Ĵz⟩dt ≫ D·dW.
        let scale = rec.states[k].mean_jz.abs() * grid.step(k) / p.record_noise() + grid.step(k).sqrt();
        if (a - b).abs() > 1e-12 * scale {
            return Err(format!("step {k}: reconstructed {a:e}, drawn {b:e}"));
        }
    }
    Ok(())
}

/// Small-J master-equation parameters: (2J, M, η, γB/M, seed).
pub fn sme_params() -> impl Strategy<Value = (u32, f64, f64, f64, u64)> {
    (1u32..=10, 0.1f64..10.0, 0.0f64..=1.0, -1.0f64..1.0, any::<u64>())
}

pub fn density_matrix_valid(two_j: u32, m: f64, eta: f64, w: f64, seed: u64) -> Result<(), String> {
    let j = two_j as f64 / 2.0;
    let ops = build_spin_operators(j).map_err(|e| e.to_string())?;
    let model = SmeModel {
        larmor: w * m,
        meas_strength: m,
        efficiency: eta,
    };
    let dt = stable_step(j, m);
    let mut rng = substream(seed, 0).rng();
    let mut rho = coherent_spin_state_x(&ops);
    for k in 0..300 {
        let dw = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
        rho = sme_step(&rho, &ops, &model, k as f64 * dt, dt, dw, SmeScheme::Kraus).map_err(|e| e.to_string())?;
        let herm = rho.hermiticity_error();
        let tr = (rho.trace() - 1.0).norm();
        if herm > 1e-10 || tr > 1e-10 || !rho.is_positive(1e-8) {
            return Err(format!("step {k}: hermiticity {herm:e}, trace error {tr:e}"));
        }
    }
    Ok(())
}
