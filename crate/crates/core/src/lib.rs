//! Continuous-measurement atomic magnetometry.
//!
//! A collective spin J, polarized along x, precesses about a field B into the
//! z direction while Ĵz is measured continuously. This crate simulates the
//! Gaussian conditional spin trajectory and its photocurrent, estimates B with
//! a Kalman filter and a regression baseline, predicts the filter error from
//! its Riccati equation and closed forms, and checks the Gaussian model
//! against a full stochastic master equation at small J.

pub mod commands;
pub mod config;
pub mod dynamics;
pub mod estimators;
pub mod grid;
pub mod montecarlo;
pub mod ode;
pub mod params;
pub mod seed;
pub mod sme;

pub use dynamics::{simulate_trajectory, ConditionalState, TrajectoryRecord};
pub use grid::TimeGrid;
pub use params::{GammaConvention, PhysicalParams, PriorVariance};
pub use seed::{substream, SeedSpec};
