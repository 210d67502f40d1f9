//! Field estimators and their error predictions: the quantum Kalman filter,
//! its covariance (Riccati) propagation, closed-form detection thresholds, and
//! the least-squares slope baseline.

mod kalman;
mod regression;
mod riccati;
mod threshold;

pub use kalman::{
    kalman_init, kalman_step, run_filter, FilterTrace, GainSchedule, KalmanState, Posterior,
    StepMap,
};
pub use regression::{regression_estimate, RegressionAccumulator};
pub use riccati::{riccati_at_times, riccati_integrate, RiccatiSolution};
pub use threshold::{
    detection_threshold_asymptotic, riccati_analytic, shotnoise_limit, CurveSource,
    ThresholdCurve,
};

use thiserror::Error;

use crate::dynamics::{precession_gain, variance_at};
use crate::ode::OdeError;
use crate::params::{ParamError, PhysicalParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("covariance lost positive semidefiniteness at t = {t:e} (min eigenvalue {min_eig:e}); step too large")]
    LostPositivity { t: f64, min_eig: f64 },
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("closed-form threshold undefined at t = {t:e}: denominator {denominator:e} is not positive")]
    NonPositiveDenominator { t: f64, denominator: f64 },
    #[error("regression needs at least 3 samples, got {0}")]
    TooFewPoints(usize),
    #[error("t_end = {t_end:e} exceeds the record length {t_total:e}")]
    BeyondRecord { t_end: f64, t_total: f64 },
    #[error("Riccati integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Symmetric 2×2 matrix, used for the filter covariance
/// `[[ΔJ̃z², Δ(J̃zB̃)], [Δ(J̃zB̃), ΔB̃²]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn diag(xx: f64, yy: f64) -> Self {
        Sym2 { xx, xy: 0.0, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues, smaller first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        let hi = mean + r;
        // Avoid cancellation in the small eigenvalue.
        let lo = if hi != 0.0 { self.det() / hi } else { mean - r };
        (lo.min(hi), lo.max(hi))
    }

    /// PSD up to a tolerance relative to the trace.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        self.eigenvalues().0 >= -rel_tol * self.trace().abs()
    }

    /// `M·S·Mᵀ` for a general 2×2 `M`.
    pub fn congruence(&self, m: &[[f64; 2]; 2]) -> Sym2 {
        let s = [[self.xx, self.xy], [self.xy, self.yy]];
        let mut ms = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                ms[i][j] = m[i][0] * s[0][j] + m[i][1] * s[1][j];
            }
        }
        let e = |i: usize, j: usize| ms[i][0] * m[j][0] + ms[i][1] * m[j][1];
        Sym2 {
            xx: e(0, 0),
            xy: 0.5 * (e(0, 1) + e(1, 0)),
            yy: e(1, 1),
        }
    }

    pub fn add_outer(&self, v: [f64; 2], scale: f64) -> Sym2 {
        Sym2 {
            xx: self.xx + scale * v[0] * v[0],
            xy: self.xy + scale * v[0] * v[1],
            yy: self.yy + scale * v[1] * v[1],
        }
    }
}

/// Eigenvalue tolerance for covariance positivity, relative to the trace.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// Filter model matrices at one instant.
///
/// `A = [[0, a12], [0, 0]]`, `B = (b1, 0)ᵀ`, `C = (1, 0)` and scalar `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    /// γJe^{−Mt/2}
    pub a12: f64,
    /// ⟨ΔĴz²⟩(t)
    pub b1: f64,
    /// 1/(2√(Mη))
    pub d: f64,
}

impl SystemMatrices {
    pub fn at(p: &PhysicalParams, t: f64) -> Self {
        SystemMatrices {
            a12: precession_gain(p, t),
            b1: variance_at(p, t),
            d: p.record_noise(),
        }
    }

    /// Matrices for the step `[t, t + dt]`, evaluated at its midpoint to match
    /// the trajectory integrator.
    pub fn for_step(p: &PhysicalParams, t: f64, dt: f64) -> Self {
        Self::at(p, t + 0.5 * dt)
    }

    pub fn c(&self) -> [f64; 2] {
        [1.0, 0.0]
    }

    /// D⁻², the measurement information rate 4Mη.
    pub fn inv_d2(&self) -> f64 {
        1.0 / (self.d * self.d)
    }

    /// Continuous-time gain D⁻²(B + VCᵀ).
    pub fn gain(&self, v: &Sym2) -> [f64; 2] {
        let s = self.inv_d2();
        [s * (self.b1 + v.xx), s * v.xy]
    }

    /// Right-hand side of the covariance Riccati equation,
    /// `(A − D⁻²BC)V + V(A − D⁻²BC)ᵀ − D⁻²V CᵀC V`.
    pub fn riccati_rhs(&self, v: &Sym2) -> Sym2 {
        let s = self.inv_d2();
        // F = A − D⁻²BC = [[−s·b1, a12], [0, 0]]
        let f00 = -s * self.b1;
        let f01 = self.a12;
        let fv = [
            [f00 * v.xx + f01 * v.xy, f00 * v.xy + f01 * v.yy],
            [0.0, 0.0],
        ];
        // V·Cᵀ = first column of V.
        let vc = [v.xx, v.xy];
        Sym2 {
            xx: 2.0 * fv[0][0] - s * vc[0] * vc[0],
            xy: fv[0][1] + fv[1][0] - s * vc[0] * vc[1],
            yy: 2.0 * fv[1][1] - s * vc[1] * vc[1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_rank_one() {
        let v = [3.0e8, 2.0];
        let s = Sym2::default().add_outer(v, 1e-3);
        let (lo, hi) = s.eigenvalues();
        assert!(lo.abs() <= 1e-12 * hi);
        assert!(s.is_psd(PSD_TOLERANCE));
        assert!(!Sym2 { xx: 1.0, xy: 2.0, yy: 1.0 }.is_psd(PSD_TOLERANCE));
    }

    #[test]
    fn congruence_matches_explicit_product() {
        let s = Sym2 { xx: 2.0, xy: 0.5, yy: 1.0 };
        let m = [[1.0, 2.0], [-1.0, 3.0]];
        let c = s.congruence(&m);
        // M S = [[3, 2.5], [-0.5, 2.5]]; (M S) Mᵀ
        assert_eq!(c.xx, 3.0 + 5.0);
        assert_eq!(c.xy, -3.0 + 7.5);
        assert_eq!(c.yy, 0.5 + 7.5);
    }

    #[test]
    fn system_matrices_track_closed_form_variance() {
        let p = PhysicalParams::benchmark();
        for t in [0.0, 1e-12, 1e-6, 1e-3] {
            let m = SystemMatrices::at(&p, t);
            assert_eq!(m.b1, crate::dynamics::conditional_variance(&p, t).unwrap());
            assert!(m.d > 0.0);
        }
    }

    #[test]
    fn riccati_rhs_zero_prior_fixed_point() {
        let m = SystemMatrices::at(&PhysicalParams::benchmark(), 1e-6);
        assert_eq!(m.riccati_rhs(&Sym2::default()), Sym2::default());
    }

    #[test]
    fn initial_gain() {
        // V(0) = diag(0, prior), B = (J/2, 0): G = D⁻²(J/2, 0) = (2MηJ, 0).
        let p = PhysicalParams::benchmark();
        let m = SystemMatrices::at(&p, 0.0);
        let g = m.gain(&Sym2::diag(0.0, 1e-8));
        let expected = 2.0 * p.meas_strength * p.efficiency * p.j_total;
        assert!((g[0] - expected).abs() <= 1e-12 * expected);
        assert_eq!(g[1], 0.0);
    }
}
