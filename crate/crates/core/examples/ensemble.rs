//! Monte-Carlo ensemble: mean-square error of both estimators against the
//! Riccati prediction.
//!
//! `cargo run --release --example ensemble [n_traj]`

use std::error::Error;

use qmag::montecarlo::{run_ensemble, EnsembleSpec, EstimatorKind};
use qmag::{PhysicalParams, TimeGrid};

fn main() -> Result<(), Box<dyn Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let p = PhysicalParams {
        t_total: 1e-4,
        ..PhysicalParams::benchmark()
    };
    let grid = TimeGrid::for_params(&p)?;
    let spec = EnsembleSpec::new(p, grid, n, 42).with_checkpoint_times(&[1e-8, 1e-7, 1e-6, 1e-5, 1e-4]);
    let stats = run_ensemble(&spec)?;

    println!("{n} trajectories, B = {:e} G", p.b_true);
    println!("{:>9} {:>11} {:>12} {:>12} {:>9}", "t (s)", "estimator", "rms (G)", "sqrt(V22)", "MSE/V22");
    for r in &stats.rows {
        println!(
            "{:>9.1e} {:>11} {:>12.4e} {:>12.4e} {:>9.3}",
            r.t,
            r.estimator,
            r.rms(),
            r.predicted_v22.sqrt(),
            r.mse / r.predicted_v22
        );
    }
    let last = stats.for_estimator(EstimatorKind::Regression).last().unwrap();
    println!("least-squares mean estimate at {:.0e} s: {:.4e} G", last.t, last.mean_b);
    Ok(())
}
