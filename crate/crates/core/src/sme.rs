//! Full stochastic master equation for small spins.
//!
//! The conditional density matrix of a spin-J on its (2J+1)-dimensional space
//! obeys
//!
//! ```text
//! dρ = −i[H, ρ]dt + M·𝒟[Ĵz]ρ dt + √(Mη)·ℋ[Ĵz]ρ dW
//! 𝒟[r]ρ = rρr† − (r†rρ + ρr†r)/2
//! ℋ[r]ρ = rρ + ρr† − tr[(r + r†)ρ]ρ
//! ```
//!
//! with `H = −γB·Ĵy`, which turns the x-polarized state towards +z so that
//! d⟨Ĵz⟩ = +γB⟨Ĵx⟩dt as in the Gaussian model. This module integrates it by
//! brute force and compares the first two Ĵz moments with the Gaussian
//! trajectory driven by the same Wiener increments.

use std::io::{self, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{simulate_trajectory, DynamicsError};
use crate::grid::{GridError, TimeGrid};
use crate::params::PhysicalParams;
use crate::seed::SeedSpec;

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest spin the dense integrator accepts.
pub const MAX_J: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmeError {
    #[error("spin quantum number {0} is not a non-negative half-integer")]
    NotHalfInteger(f64),
    #[error("J = {0} exceeds the dense-oracle limit {MAX_J}")]
    TooLarge(f64),
    #[error("density matrix invariant violated at t = {t:e}: {what} = {value:e}; reduce the step")]
    InvariantViolation { t: f64, what: &'static str, value: f64 },
    #[error("step {dt:e} exceeds the stability bound {bound:e} = 1/(100·M·(2J+1)²)")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Angular momentum matrices in the Ĵz basis ordered m = J, J−1, …, −J.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    pub j: f64,
    pub dim: usize,
    pub jx: CMatrix,
    pub jy: CMatrix,
    pub jz: CMatrix,
}

impl SpinOperators {
    /// m for basis index `i`.
    pub fn m(&self, i: usize) -> f64 {
        self.j - i as f64
    }

    /// Largest elementwise deviation from `[jx, jy] = i·jz`.
    pub fn commutator_error(&self) -> f64 {
        let c = &self.jx * &self.jy - &self.jy * &self.jx - self.jz.map(|z| I * z);
        c.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest elementwise deviation from `jx² + jy² + jz² = J(J+1)·1`.
    pub fn casimir_error(&self) -> f64 {
        let c = &self.jx * &self.jx + &self.jy * &self.jy + &self.jz * &self.jz
            - CMatrix::identity(self.dim, self.dim) * Complex64::from(self.j * (self.j + 1.0));
        c.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn build_spin_operators(j: f64) -> Result<SpinOperators, SmeError> {
    let two_j = 2.0 * j;
    if !(two_j >= 0.0) || two_j.fract() != 0.0 {
        return Err(SmeError::NotHalfInteger(j));
    }
    if j > MAX_J {
        return Err(SmeError::TooLarge(j));
    }
    let dim = two_j as usize + 1;
    let m = |i: usize| j - i as f64;
    // J₊|m⟩ = √(J(J+1) − m(m+1)) |m+1⟩; |m+1⟩ sits at index i−1.
    let mut jp = CMatrix::zeros(dim, dim);
    for i in 1..dim {
        let mi = m(i);
        jp[(i - 1, i)] = Complex64::from((j * (j + 1.0) - mi * (mi + 1.0)).sqrt());
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm) * Complex64::from(0.5);
    let jy = (&jp - &jm) * Complex64::new(0.0, -0.5);
    let jz = CMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |i, _| Complex64::from(m(i))));
    Ok(SpinOperators { j, dim, jx, jy, jz })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: CMatrix,
}

/// Hermiticity and trace tolerance.
pub const STATE_TOLERANCE: f64 = 1e-10;
/// Most negative eigenvalue tolerated.
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

impl DensityMatrix {
    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::from(0.5);
        h.symmetric_eigenvalues().min()
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn check(&self, t: f64) -> Result<(), SmeError> {
        let herm = self.hermiticity_error();
        if herm > STATE_TOLERANCE {
            return Err(SmeError::InvariantViolation { t, what: "hermiticity error", value: herm });
        }
        let tr = (self.trace() - Complex64::from(1.0)).norm();
        if tr > STATE_TOLERANCE {
            return Err(SmeError::InvariantViolation { t, what: "trace error", value: tr });
        }
        if !self.is_positive(POSITIVITY_TOLERANCE) {
            return Err(SmeError::InvariantViolation {
                t,
                what: "minimum eigenvalue",
                value: self.min_eigenvalue(),
            });
        }
        Ok(())
    }

    /// Whether every eigenvalue is at least `−tol`: ρ + tol·1 has a Cholesky
    /// factor exactly then, and factoring is far cheaper than diagonalizing.
    pub fn is_positive(&self, tol: f64) -> bool {
        let n = self.rho.nrows();
        let h = (&self.rho + self.rho.adjoint()) * Complex64::from(0.5)
            + CMatrix::identity(n, n) * Complex64::from(tol);
        h.cholesky().is_some()
    }

    fn hermitize_normalize(&mut self) {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::from(0.5);
        let tr = h.trace().re;
        self.rho = h / Complex64::from(tr);
    }
}

/// |J⟩ₓ, the x-polarized coherent spin state. Its Ĵz amplitudes are
/// √C(2J, J+m)/2^J.
pub fn coherent_spin_state_x(ops: &SpinOperators) -> DensityMatrix {
    let n = ops.dim - 1;
    // C(n, k)/2ⁿ built multiplicatively to stay in range.
    let mut weights = vec![0.0; ops.dim];
    let mut c = 0.5f64.powi(n as i32);
    for (k, w) in weights.iter_mut().enumerate() {
        *w = c;
        c *= (n - k) as f64 / (k + 1) as f64;
    }
    let psi = nalgebra::DVector::from_iterator(ops.dim, weights.iter().map(|w| Complex64::from(w.sqrt())));
    DensityMatrix {
        rho: &psi * psi.adjoint(),
    }
}

/// (tr ρĴz, tr ρĴz² − (tr ρĴz)²). Ĵz is diagonal, so only populations enter.
pub fn oracle_moments(rho: &DensityMatrix, ops: &SpinOperators) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..ops.dim {
        let p = rho.rho[(i, i)].re;
        let m = ops.m(i);
        m1 += p * m;
        m2 += p * m * m;
    }
    (m1, m2 - m1 * m1)
}

/// Parameters of one SME step. η = 0 (pure dephasing) is allowed here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmeModel {
    /// γB, rad/s.
    pub larmor: f64,
    pub meas_strength: f64,
    pub efficiency: f64,
}

impl From<&PhysicalParams> for SmeModel {
    fn from(p: &PhysicalParams) -> Self {
        SmeModel {
            larmor: p.larmor_frequency(),
            meas_strength: p.meas_strength,
            efficiency: p.efficiency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmeScheme {
    /// Explicit Euler–Maruyama on the equation as written.
    EulerMaruyama,
    /// Completely positive measurement-operator update, first order like
    /// Euler–Maruyama but positivity preserving:
    /// `ρ' ∝ K ρ K† + (1−η)M·dt·ĴzρĴz` with
    /// `K = 1 − (iH + M/2·Ĵz²)dt + √(Mη)Ĵz·dy + Mη/2·Ĵz²(dy² − dt)` and
    /// `dy = dW + 2√(Mη)⟨Ĵz⟩dt`.
    #[default]
    Kraus,
}

/// Tridiagonal matrix stored by bands: `diag[i]`, `upper[i] = T[i][i+1]`,
/// `lower[i] = T[i+1][i]`.
#[derive(Debug, Clone)]
struct Tridiagonal {
    diag: Vec<Complex64>,
    upper: Vec<Complex64>,
    lower: Vec<Complex64>,
}

impl Tridiagonal {
    fn from_dense(a: &CMatrix) -> Self {
        let n = a.nrows();
        Tridiagonal {
            diag: (0..n).map(|i| a[(i, i)]).collect(),
            upper: (0..n.saturating_sub(1)).map(|i| a[(i, i + 1)]).collect(),
            lower: (0..n.saturating_sub(1)).map(|i| a[(i + 1, i)]).collect(),
        }
    }

    /// `T·A`
    fn mul(&self, a: &CMatrix) -> CMatrix {
        let n = self.diag.len();
        CMatrix::from_fn(n, a.ncols(), |i, j| {
            let mut v = self.diag[i] * a[(i, j)];
            if i + 1 < n {
                v += self.upper[i] * a[(i + 1, j)];
            }
            if i > 0 {
                v += self.lower[i - 1] * a[(i - 1, j)];
            }
            v
        })
    }
}

/// `diag(d)·ρ·diag(d)` for real `d`.
fn sandwich_diag(rho: &CMatrix, d: &[f64]) -> CMatrix {
    CMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| rho[(i, j)] * (d[i] * d[j]))
}

/// One step of the master equation. The result is Hermitized and
/// renormalized; its invariants are checked against the module tolerances.
pub fn sme_step(
    rho: &DensityMatrix,
    ops: &SpinOperators,
    model: &SmeModel,
    t: f64,
    dt: f64,
    dw: f64,
    scheme: SmeScheme,
) -> Result<DensityMatrix, SmeError> {
    let mut next = sme_step_raw(rho, ops, model, dt, dw, scheme);
    next.hermitize_normalize();
    next.check(t + dt)?;
    Ok(next)
}

/// The update before Hermitization and renormalization.
pub fn sme_step_raw(
    rho: &DensityMatrix,
    ops: &SpinOperators,
    model: &SmeModel,
    dt: f64,
    dw: f64,
    scheme: SmeScheme,
) -> DensityMatrix {
    let m = model.meas_strength;
    let eta = model.efficiency;
    let k = (m * eta).sqrt();
    let z: Vec<f64> = (0..ops.dim).map(|i| ops.m(i)).collect();
    let r = &rho.rho;
    let (mean, _) = oracle_moments(rho, ops);
    // H = −γB·Ĵy, tridiagonal in the Ĵz basis.
    let mut h = Tridiagonal::from_dense(&ops.jy);
    for v in h.diag.iter_mut().chain(&mut h.upper).chain(&mut h.lower) {
        *v *= -model.larmor;
    }
    match scheme {
        SmeScheme::EulerMaruyama => {
            // −i[H, ρ] = −i(Hρ − (Hρ)†) for Hermitian H and ρ.
            let hr = h.mul(r);
            let ham = (&hr - hr.adjoint()) * (-I * dt);
            // 𝒟[Ĵz]ρ and ℋ[Ĵz]ρ elementwise, Ĵz being diagonal.
            let rest = CMatrix::from_fn(ops.dim, ops.dim, |i, j| {
                let (a, b) = (z[i], z[j]);
                r[(i, j)] * (m * dt * (a * b - 0.5 * (a * a + b * b)) + k * dw * (a + b - 2.0 * mean))
            });
            DensityMatrix { rho: r + ham + rest }
        }
        SmeScheme::Kraus => {
            let dy = dw + 2.0 * k * mean * dt;
            let mut kr = h;
            for v in kr.diag.iter_mut().chain(&mut kr.upper).chain(&mut kr.lower) {
                *v *= -I * dt;
            }
            for (i, d) in kr.diag.iter_mut().enumerate() {
                let a = z[i];
                *d += Complex64::from(
                    1.0 - 0.5 * m * a * a * dt + k * a * dy + 0.5 * m * eta * a * a * (dy * dy - dt),
                );
            }
            // K ρ K† = (K (Kρ)†)†
            let kr_rho = kr.mul(r);
            let mut out = kr.mul(&kr_rho.adjoint()).adjoint();
            if eta < 1.0 {
                out += sandwich_diag(r, &z) * Complex64::from((1.0 - eta) * m * dt);
            }
            DensityMatrix { rho: out }
        }
    }
}

/// Step bound 1/(100·M·(2J+1)²).
pub fn stable_step(j: f64, meas_strength: f64) -> f64 {
    let d = 2.0 * j + 1.0;
    1.0 / (100.0 * meas_strength * d * d)
}

/// Uniform grid over `[0, p.t_total]` at the stability bound.
pub fn oracle_grid(p: &PhysicalParams) -> Result<TimeGrid, SmeError> {
    Ok(TimeGrid::uniform(p.t_total, stable_step(p.j_total, p.meas_strength))?)
}

/// Pathwise SME-vs-Gaussian comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub j: f64,
    pub times: Vec<f64>,
    pub sme_mean: Vec<f64>,
    pub sme_var: Vec<f64>,
    pub gauss_mean: Vec<f64>,
    pub gauss_var: Vec<f64>,
    /// Most negative density-matrix eigenvalue over about 200 sampled steps.
    /// Every step is separately checked against the positivity tolerance.
    pub min_eigenvalue: f64,
}

impl OracleComparison {
    pub fn d_mean(&self) -> Vec<f64> {
        self.sme_mean.iter().zip(&self.gauss_mean).map(|(a, b)| (a - b).abs()).collect()
    }

    pub fn d_var(&self) -> Vec<f64> {
        self.sme_var.iter().zip(&self.gauss_var).map(|(a, b)| (a - b).abs()).collect()
    }

    pub fn max_d_mean(&self) -> f64 {
        self.d_mean().into_iter().fold(0.0, f64::max)
    }

    pub fn max_d_var(&self) -> f64 {
        self.d_var().into_iter().fold(0.0, f64::max)
    }

    /// Mean-deviation allowance 0.05·√(J/2).
    pub fn mean_threshold(&self) -> f64 {
        0.05 * (self.j / 2.0).sqrt()
    }

    pub fn passes(&self) -> bool {
        self.max_d_mean() <= self.mean_threshold()
    }

    /// Writes `t,d_mean,d_var`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,d_mean,d_var")?;
        for ((t, dm), dv) in self.times.iter().zip(self.d_mean()).zip(self.d_var()) {
            writeln!(w, "{t:e},{dm:e},{dv:e}")?;
        }
        Ok(())
    }
}

pub fn compare_to_gaussian(
    p: &PhysicalParams,
    grid: &TimeGrid,
    seed: SeedSpec,
) -> Result<OracleComparison, SmeError> {
    compare_to_gaussian_with(p, grid, seed, SmeScheme::default())
}

/// Simulates the Gaussian trajectory, then replays its Wiener increments
/// through the master equation.
pub fn compare_to_gaussian_with(
    p: &PhysicalParams,
    grid: &TimeGrid,
    seed: SeedSpec,
    scheme: SmeScheme,
) -> Result<OracleComparison, SmeError> {
    let ops = build_spin_operators(p.j_total)?;
    let bound = stable_step(p.j_total, p.meas_strength);
    let dt_max = (0..grid.n_steps()).map(|k| grid.step(k)).fold(0.0, f64::max);
    if dt_max > bound * (1.0 + 1e-9) {
        return Err(SmeError::StepTooLarge { dt: dt_max, bound });
    }
    let rec = simulate_trajectory(p, grid, seed)?;
    let model = SmeModel::from(p);
    let n = grid.n_steps();
    let mut rho = coherent_spin_state_x(&ops);
    let mut out = OracleComparison {
        j: p.j_total,
        times: Vec::with_capacity(n + 1),
        sme_mean: Vec::with_capacity(n + 1),
        sme_var: Vec::with_capacity(n + 1),
        gauss_mean: rec.states.iter().map(|s| s.mean_jz).collect(),
        gauss_var: rec.states.iter().map(|s| s.var_jz).collect(),
        min_eigenvalue: rho.min_eigenvalue(),
    };
    let record = |out: &mut OracleComparison, rho: &DensityMatrix, t: f64| {
        let (m, v) = oracle_moments(rho, &ops);
        out.times.push(t);
        out.sme_mean.push(m);
        out.sme_var.push(v);
    };
    record(&mut out, &rho, grid.t(0));
    let sample = (n / 200).max(1);
    for k in 0..n {
        rho = sme_step(&rho, &ops, &model, grid.t(k), grid.step(k), rec.noise[k], scheme)?;
        if (k + 1) % sample == 0 || k + 1 == n {
            out.min_eigenvalue = out.min_eigenvalue.min(rho.min_eigenvalue());
        }
        record(&mut out, &rho, grid.t(k + 1));
    }
    Ok(out)
}

/// Result of the η = 0 dephasing check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasingReport {
    pub j: f64,
    pub t: f64,
    /// Largest |observed/expected − 1| over all coherences.
    pub max_rel_error: f64,
}

/// Evolves the x-polarized state under pure Ĵz dephasing (B = 0, η = 0) and
/// compares every coherence with ρ_mm'(0)·exp(−M(m−m')²t/2). The run lasts
/// until the outermost coherence has decayed by e⁻².
pub fn dephasing_check(j: f64, meas_strength: f64, scheme: SmeScheme) -> Result<DephasingReport, SmeError> {
    let ops = build_spin_operators(j)?;
    let model = SmeModel {
        larmor: 0.0,
        meas_strength,
        efficiency: 0.0,
    };
    let rate_max = 0.5 * meas_strength * (2.0 * j).powi(2);
    let t_end = if rate_max > 0.0 { 2.0 / rate_max } else { 1.0 / meas_strength };
    let grid = TimeGrid::uniform(t_end, stable_step(j, meas_strength))?;
    let rho0 = coherent_spin_state_x(&ops);
    let mut rho = rho0.clone();
    for k in 0..grid.n_steps() {
        rho = sme_step(&rho, &ops, &model, grid.t(k), grid.step(k), 0.0, scheme)?;
    }
    let t = grid.t_end();
    let mut max_rel_error: f64 = 0.0;
    for a in 0..ops.dim {
        for b in 0..ops.dim {
            let dm = ops.m(a) - ops.m(b);
            let expected = rho0.rho[(a, b)] * (-0.5 * meas_strength * dm * dm * t).exp();
            if expected == ZERO {
                continue;
            }
            max_rel_error = max_rel_error.max((rho.rho[(a, b)] / expected - 1.0).norm());
        }
    }
    Ok(DephasingReport { j, t, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::from(x)
    }

    #[test]
    fn spin_half_and_one() {
        let h = build_spin_operators(0.5).unwrap();
        assert_eq!(h.jz, CMatrix::from_row_slice(2, 2, &[c(0.5), ZERO, ZERO, c(-0.5)]));
        let one = build_spin_operators(1.0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(one.jx[(0, 1)].re, s, max_relative = 1e-15);
        assert_relative_eq!(one.jx[(1, 2)].re, s, max_relative = 1e-15);
        assert_eq!(one.jz[(2, 2)], c(-1.0));
    }

    #[test]
    fn algebra_holds() {
        for j in [0.0, 0.5, 1.0, 1.5, 2.0, 5.0, 10.0, 20.0] {
            let ops = build_spin_operators(j).unwrap();
            assert!(ops.commutator_error() < 1e-12, "j = {j}");
            assert!(ops.casimir_error() < 1e-12 * (j * j).max(1.0), "j = {j}");
        }
        assert!(build_spin_operators(0.3).is_err());
        assert!(build_spin_operators(-1.0).is_err());
    }

    #[test]
    fn coherent_state_moments() {
        for j in [0.5, 2.0, 10.0, 20.0] {
            let ops = build_spin_operators(j).unwrap();
            let rho = coherent_spin_state_x(&ops);
            let (m, v) = oracle_moments(&rho, &ops);
            assert!(m.abs() < 1e-12);
            assert!((v - j / 2.0).abs() < 1e-10);
            let jx = (&rho.rho * &ops.jx).trace();
            assert!((jx - c(j)).norm() < 1e-10);
            rho.check(0.0).unwrap();
        }
    }

    #[test]
    fn coherent_state_is_top_eigenvector_of_jx() {
        let ops = build_spin_operators(2.0).unwrap();
        let rho = coherent_spin_state_x(&ops);
        let eig = ops.jx.clone().symmetric_eigen();
        let top = eig.eigenvalues.imax();
        assert!((eig.eigenvalues[top] - 2.0).abs() < 1e-12);
        let v = eig.eigenvectors.column(top);
        let proj = v.adjoint() * &rho.rho * v;
        assert!((proj[(0, 0)].re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eigenstate_moments() {
        let ops = build_spin_operators(3.0).unwrap();
        let mut rho = CMatrix::zeros(ops.dim, ops.dim);
        rho[(2, 2)] = c(1.0);
        assert_eq!(oracle_moments(&DensityMatrix { rho }, &ops), (1.0, 0.0));
    }

    #[test]
    fn identity_map_without_dynamics() {
        let ops = build_spin_operators(3.0).unwrap();
        let rho = coherent_spin_state_x(&ops);
        let model = SmeModel {
            larmor: 0.0,
            meas_strength: 0.0,
            efficiency: 1.0,
        };
        for scheme in [SmeScheme::EulerMaruyama, SmeScheme::Kraus] {
            let next = sme_step_raw(&rho, &ops, &model, 1e-3, 0.0, scheme);
            assert!((&next.rho - &rho.rho).iter().all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn raw_step_preserves_trace_to_first_order() {
        let ops = build_spin_operators(4.0).unwrap();
        let rho = coherent_spin_state_x(&ops);
        let model = SmeModel {
            larmor: 3.0,
            meas_strength: 1.0,
            efficiency: 0.7,
        };
        let dt = stable_step(4.0, 1.0);
        let em = sme_step_raw(&rho, &ops, &model, dt, 0.3 * dt.sqrt(), SmeScheme::EulerMaruyama);
        assert!((em.trace() - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn dephasing_law() {
        for j in [0.5, 1.0, 2.0, 3.5, 5.0] {
            let r = dephasing_check(j, 1.0, SmeScheme::default()).unwrap();
            assert!(r.max_rel_error < 0.01, "{r:?}");
        }
    }

    #[test]
    fn precession_direction_matches_gaussian_drift() {
        let ops = build_spin_operators(5.0).unwrap();
        let model = SmeModel {
            larmor: 1.0,
            meas_strength: 0.0,
            efficiency: 1.0,
        };
        let mut rho = coherent_spin_state_x(&ops);
        let dt = 1e-4;
        for k in 0..100 {
            rho = sme_step(&rho, &ops, &model, k as f64 * dt, dt, 0.0, SmeScheme::Kraus).unwrap();
        }
        // ⟨Ĵz⟩ = J·sin(γBt) ≈ 5·0.01
        let (m, _) = oracle_moments(&rho, &ops);
        assert!((m - 5.0 * (0.01f64).sin()).abs() < 1e-5, "{m}");
    }

    #[test]
    fn matched_noise_comparison_j10() {
        let p = PhysicalParams {
            j_total: 10.0,
            gamma: 1.0,
            b_true: 0.0,
            meas_strength: 1.0,
            efficiency: 1.0,
            prior_b_variance: crate::params::PriorVariance::Infinite,
            t_total: 0.1,
        };
        let grid = oracle_grid(&p).unwrap();
        let cmp = compare_to_gaussian(&p, &grid, SeedSpec::new(3, 0)).unwrap();
        assert!(cmp.passes(), "max d_mean {} > {}", cmp.max_d_mean(), cmp.mean_threshold());
        assert!(cmp.min_eigenvalue >= -POSITIVITY_TOLERANCE);
        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), grid.n_steps() + 2);
    }

    #[test]
    fn rejects_coarse_grid() {
        let p = PhysicalParams {
            j_total: 2.0,
            meas_strength: 1.0,
            t_total: 0.1,
            ..PhysicalParams::benchmark()
        };
        let grid = TimeGrid::uniform(0.1, 0.01).unwrap();
        assert!(matches!(
            compare_to_gaussian(&p, &grid, SeedSpec::new(0, 0)),
            Err(SmeError::StepTooLarge { .. })
        ));
    }
}
