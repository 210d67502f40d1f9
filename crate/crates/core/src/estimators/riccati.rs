//! Deterministic propagation of the filter covariance V(t).
//!
//! V obeys `V̇ = FV + VFᵀ − D⁻²V CᵀC V` with `F = A − D⁻²BC`. For an infinite
//! prior V(0) is not finite, so the solution starts in information
//! coordinates: the field information `L = 1/ΔB̃²`, the regression `w` of the
//! ⟨Ĵz⟩ error on the field error, and the residual `u`:
//!
//! ```text
//! u̇ = 2F₁₁u − D⁻²u²      ẇ = F₁₁w + A₁₂ − D⁻²wu      L̇ = D⁻²w²
//! ```
//!
//! These follow from the covariance equation by the change of variables
//! `V = [[u + w²/L, w/L], [w/L, 1/L]]` and are regular at L = 0. The solver
//! switches to the covariance equation at the first grid point.

use super::threshold::{CurveSource, ThresholdCurve};
use super::{EstimatorError, Sym2, SystemMatrices, PSD_TOLERANCE};
use crate::grid::TimeGrid;
use crate::ode::Dopri5;
use crate::params::{PhysicalParams, PriorVariance};

const RTOL: f64 = 1e-12;

/// V(t) on a grid. `None` where the covariance is still infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub v: Vec<Option<Sym2>>,
}

impl RiccatiSolution {
    pub fn v22(&self, k: usize) -> Option<f64> {
        self.v[k].map(|v| v.yy)
    }

    /// δB̃(t) = √ΔB̃²(t) at every point where it is finite and positive.
    pub fn threshold_curve(&self) -> ThresholdCurve {
        let (times, delta_b) = self
            .times
            .iter()
            .zip(&self.v)
            .filter_map(|(&t, v)| v.filter(|v| v.yy > 0.0).map(|v| (t, v.yy.sqrt())))
            .unzip();
        ThresholdCurve {
            times,
            delta_b,
            source: CurveSource::RiccatiNumeric,
        }
    }
}

fn info_rhs(p: &PhysicalParams, t: f64, y: &[f64; 3]) -> [f64; 3] {
    let m = SystemMatrices::at(p, t);
    let s = m.inv_d2();
    let f11 = -s * m.b1;
    let [u, w, _] = *y;
    [2.0 * f11 * u - s * u * u, f11 * w + m.a12 - s * w * u, s * w * w]
}

fn cov_rhs(p: &PhysicalParams, t: f64, y: &[f64; 3]) -> [f64; 3] {
    let v = Sym2 {
        xx: y[0],
        xy: y[1],
        yy: y[2],
    };
    let d = SystemMatrices::at(p, t).riccati_rhs(&v);
    [d.xx, d.xy, d.yy]
}

fn check_psd(v: Sym2, t: f64) -> Result<Sym2, EstimatorError> {
    if v.is_psd(PSD_TOLERANCE) {
        Ok(v)
    } else {
        Err(EstimatorError::LostPositivity {
            t,
            min_eig: v.eigenvalues().0,
        })
    }
}

/// Integrates the covariance equation over `grid` for the prior in `p`.
pub fn riccati_integrate(p: &PhysicalParams, grid: &TimeGrid) -> Result<RiccatiSolution, EstimatorError> {
    riccati_at_times(p, grid.points())
}

/// Integrates the covariance equation from t = 0 through the increasing
/// times `pts`, which must start at 0.
pub fn riccati_at_times(p: &PhysicalParams, pts: &[f64]) -> Result<RiccatiSolution, EstimatorError> {
    let p = p.validate()?;
    if pts.first() != Some(&0.0) {
        return Err(EstimatorError::NonPositiveTime(pts.first().copied().unwrap_or(f64::NAN)));
    }
    if pts.len() == 1 {
        return Ok(RiccatiSolution {
            times: pts.to_vec(),
            v: vec![match p.prior_b_variance {
                PriorVariance::Finite(prior) => Some(Sym2::diag(0.0, prior)),
                PriorVariance::Infinite => None,
            }],
        });
    }
    let mut v = Vec::with_capacity(pts.len());
    let start;
    let mut cov: [f64; 3];

    match p.prior_b_variance {
        PriorVariance::Finite(prior) => {
            v.push(Some(Sym2::diag(0.0, prior)));
            cov = [0.0, 0.0, prior];
            start = 0;
        }
        PriorVariance::Infinite => {
            v.push(None);
            let mut info = Dopri5::new(RTOL, [1e-300; 3]);
            let [u, w, l] = info.advance(|t, y| info_rhs(&p, t, y), pts[0], [0.0; 3], pts[1])?;
            let first = check_psd(
                Sym2 {
                    xx: u + w * w / l,
                    xy: w / l,
                    yy: 1.0 / l,
                },
                pts[1],
            )?;
            v.push(Some(first));
            cov = [first.xx, first.xy, first.yy];
            start = 1;
        }
    }

    let mut ode = Dopri5::new(RTOL, [1e-300; 3]);
    for k in start..pts.len() - 1 {
        cov = ode.advance(|t, y| cov_rhs(&p, t, y), pts[k], cov, pts[k + 1])?;
        let s = check_psd(
            Sym2 {
                xx: cov[0],
                xy: cov[1],
                yy: cov[2],
            },
            pts[k + 1],
        )?;
        v.push(Some(s));
    }
    Ok(RiccatiSolution {
        times: pts.to_vec(),
        v,
    })
}
