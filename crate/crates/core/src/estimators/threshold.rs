//! Closed-form field detection thresholds.

use std::fmt;
use std::io::{self, Write};

use log::debug;

use super::EstimatorError;
use crate::params::PhysicalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    RiccatiNumeric,
    RiccatiAnalytic,
    Asymptotic,
    Shotnoise,
}

impl fmt::Display for CurveSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveSource::RiccatiNumeric => "riccati_numeric",
            CurveSource::RiccatiAnalytic => "riccati_analytic",
            CurveSource::Asymptotic => "asymptotic",
            CurveSource::Shotnoise => "shotnoise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCurve {
    pub times: Vec<f64>,
    /// δB̃, G.
    pub delta_b: Vec<f64>,
    pub source: CurveSource,
}

impl ThresholdCurve {
    /// Evaluates a closed form at every time.
    pub fn from_fn<F>(times: &[f64], source: CurveSource, f: F) -> Result<Self, EstimatorError>
    where
        F: Fn(f64) -> Result<f64, EstimatorError>,
    {
        let delta_b = times.iter().map(|&t| f(t)).collect::<Result<Vec<_>, _>>()?;
        Ok(ThresholdCurve {
            times: times.to_vec(),
            delta_b,
            source,
        })
    }

    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (t, d) in self.times.iter().zip(&self.delta_b) {
            writeln!(w, "{t:e},{d:e},{}", self.source)?;
        }
        Ok(())
    }

    /// Writes `t,delta_b,source` for several curves in one table.
    pub fn write_csv<W: Write>(curves: &[&ThresholdCurve], mut w: W) -> io::Result<()> {
        writeln!(w, "t,delta_b,source")?;
        for c in curves {
            c.write_csv_rows(&mut w)?;
        }
        Ok(())
    }
}

/// Below this value of Mt the denominator of the closed form is summed as a
/// power series; above it the exponentials are evaluated directly.
const SERIES_LIMIT: f64 = 2.0;

/// `x − 4 + 8e^{−x/2} − (x+4)e^{−x}` = Σ_{n≥4} (−1)ⁿ(8/2ⁿ + n − 4)xⁿ/n!
fn denom_j_part(x: f64) -> f64 {
    if x >= SERIES_LIMIT {
        return x - 4.0 + 8.0 * (-0.5 * x).exp() - (x + 4.0) * (-x).exp();
    }
    let mut sum = 0.0;
    // xⁿ/n! with sign, starting at n = 4.
    let mut term = x.powi(4) / 24.0;
    for n in 4..60 {
        let nf = n as f64;
        sum += term * (8.0 * 0.5f64.powi(n) + nf - 4.0);
        term *= -x / (nf + 1.0);
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// `x − 3 + 4e^{−x/2} − e^{−x}` = Σ_{n≥3} (−1)ⁿ(4/2ⁿ − 1)xⁿ/n!
fn denom_const_part(x: f64) -> f64 {
    if x >= SERIES_LIMIT {
        return x - 3.0 + 4.0 * (-0.5 * x).exp() - (-x).exp();
    }
    let mut sum = 0.0;
    let mut term = -x.powi(3) / 6.0;
    for n in 3..60 {
        sum += term * (4.0 * 0.5f64.powi(n) - 1.0);
        term *= -x / (n as f64 + 1.0);
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Exact infinite-prior detection threshold δB̃(t) = √ΔB̃²(t):
///
/// ```text
/// δB̃ = M/(4γJ√η) · √[(1 + 2ηJMt) / (a·e^{−Mt} + 4e^{−Mt/2}(4ηJ + 1) + b)]
/// a = −(2ηJ(Mt + 4) + 1),   b = Mt + 2ηJ(Mt − 4) − 3
/// ```
///
/// The denominator vanishes like ηJ(Mt)⁴/24 as t → 0 and is evaluated as a
/// series there.
pub fn riccati_analytic(p: &PhysicalParams, t: f64) -> Result<f64, EstimatorError> {
    if !(t > 0.0) {
        return Err(EstimatorError::NonPositiveTime(t));
    }
    let x = p.meas_strength * t;
    let k = 2.0 * p.efficiency * p.j_total;
    let denominator = k * denom_j_part(x) + denom_const_part(x);
    if !(denominator > 0.0) {
        return Err(EstimatorError::NonPositiveDenominator { t, denominator });
    }
    let prefactor = p.meas_strength / (4.0 * p.gamma * p.j_total * p.efficiency.sqrt());
    Ok(prefactor * ((1.0 + k * x) / denominator).sqrt())
}

/// Long-time form δB̃ ≈ (1/γJ)·√(3/(Mηt³)), valid for t ≫ 1/(JM).
pub fn detection_threshold_asymptotic(p: &PhysicalParams, t: f64) -> f64 {
    if t <= 10.0 / (p.j_total * p.meas_strength) {
        debug!(
            "t = {t:e} s is not long compared with 1/(JM) = {:e} s",
            1.0 / (p.j_total * p.meas_strength)
        );
    }
    (3.0 / (p.meas_strength * p.efficiency * t.powi(3))).sqrt() / (p.gamma * p.j_total)
}

/// Projection-noise limit δB ≃ 1/(γ√(J·T₂·t)) with T₂ at its bound 2/M.
pub fn shotnoise_limit(p: &PhysicalParams, t_tot: f64) -> f64 {
    1.0 / (p.gamma * (p.j_total * p.t2_bound() * t_tot).sqrt())
}
