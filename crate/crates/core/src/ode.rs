//! Adaptive Dormand–Prince 5(4) integration of small fixed-size ODE systems.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e}")]
    StepUnderflow { t: f64 },
    #[error("exceeded {0} steps")]
    TooManySteps(usize),
    #[error("non-finite state at t = {t:e}")]
    NonFinite { t: f64 },
}

/// Error-controlled integrator. The accepted step size carries over between
/// calls to [`Dopri5::advance`], so integrating through a dense sequence of
/// output times costs little more than a single long call.
#[derive(Debug, Clone)]
pub struct Dopri5<const N: usize> {
    pub rtol: f64,
    pub atol: [f64; N],
    pub max_steps: usize,
    h: f64,
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth- minus fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

impl<const N: usize> Dopri5<N> {
    pub fn new(rtol: f64, atol: [f64; N]) -> Self {
        Dopri5 {
            rtol,
            atol,
            max_steps: 1_000_000,
            h: 0.0,
        }
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1`.
    pub fn advance<F>(&mut self, mut f: F, t0: f64, y0: [f64; N], t1: f64) -> Result<[f64; N], OdeError>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(y0);
        }
        let mut t = t0;
        let mut y = y0;
        let mut h = if self.h > 0.0 { self.h } else { span * 1e-3 };
        let mut steps = 0;
        while t < t1 {
            if steps >= self.max_steps {
                return Err(OdeError::TooManySteps(self.max_steps));
            }
            steps += 1;
            let last = t + h >= t1;
            let h_try = if last { t1 - t } else { h };
            if h_try <= f64::EPSILON * t.abs() {
                return Err(OdeError::StepUnderflow { t });
            }

            let k1 = f(t, &y);
            let k2 = f(t + C2 * h_try, &axpy(&y, h_try, &[(A21, &k1)]));
            let k3 = f(t + C3 * h_try, &axpy(&y, h_try, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(
                t + C4 * h_try,
                &axpy(&y, h_try, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = f(
                t + C5 * h_try,
                &axpy(&y, h_try, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + h_try,
                &axpy(
                    &y,
                    h_try,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let y_new = axpy(
                &y,
                h_try,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = f(t + h_try, &y_new);

            let mut err = 0.0f64;
            for i in 0..N {
                let e = h_try
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.atol[i] + self.rtol * y[i].abs().max(y_new[i].abs());
                let r = e / sc;
                err = err.max(r.abs());
            }
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                if h_try <= f64::EPSILON * t.abs().max(f64::MIN_POSITIVE) {
                    return Err(OdeError::NonFinite { t });
                }
                h = 0.2 * h_try;
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { t1 } else { t + h_try };
                y = y_new;
                // Keep the natural step, not one clipped to hit t1.
                h = if last { h.max(h_try) } else { h_try * factor };
            } else {
                h = h_try * factor.min(1.0);
            }
        }
        self.h = h;
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut ode = Dopri5::new(1e-12, [1e-300]);
        let y = ode.advance(|_, y| [-2.0 * y[0]], 0.0, [1.0], 3.0).unwrap();
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-12 * 1e-2);
    }

    #[test]
    fn harmonic_oscillator_over_many_outputs() {
        let mut ode = Dopri5::new(1e-11, [1e-14, 1e-14]);
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        for k in 1..=100 {
            let t1 = k as f64 * 0.1;
            y = ode.advance(|_, y| [y[1], -y[0]], t, y, t1).unwrap();
            t = t1;
        }
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn stiff_start_resolved() {
        // y' = -(y - t)/(t + eps) has rate 1/eps at t = 0.
        let eps = 1e-9;
        let mut ode = Dopri5::new(1e-10, [1e-300]);
        let y = ode
            .advance(|t, y| [-(y[0] - t) / (t + eps) + 1.0], 0.0, [1.0], 1.0)
            .unwrap();
        // Exact: y = t + eps/(t+eps) · y0.
        let exact = 1.0 + eps / (1.0 + eps);
        assert!((y[0] - exact).abs() < 1e-8);
    }
}
