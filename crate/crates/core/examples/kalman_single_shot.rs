//! Quantum Kalman filter on a single record: the field estimate and its
//! predicted uncertainty as the record grows.
//!
//! `cargo run --release --example kalman_single_shot [seed]`

use std::error::Error;

use qmag::estimators::{regression_estimate, run_filter};
use qmag::{simulate_trajectory, substream, PhysicalParams, TimeGrid};

fn main() -> Result<(), Box<dyn Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let p = PhysicalParams {
        t_total: 1e-3,
        ..PhysicalParams::benchmark()
    };
    let grid = TimeGrid::for_params(&p)?;
    let rec = simulate_trajectory(&p, &grid, substream(seed, 0))?;
    let trace = run_filter(&p, &rec)?;

    println!("true B = {:e} G", p.b_true);
    println!("{:>10} {:>14} {:>12} {:>14}", "t (s)", "B estimate", "±sqrt(V22)", "least squares");
    for t in [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3] {
        let k = grid.nearest_index(t);
        let s = &trace.states[k];
        let b = s.b_estimate().unwrap_or(f64::NAN);
        let sd = s.covariance().map(|v| v.yy.sqrt()).unwrap_or(f64::NAN);
        let ls = regression_estimate(&rec, &p, grid.t(k)).unwrap_or(f64::NAN);
        println!("{:>10.1e} {b:>14.6e} {sd:>12.3e} {ls:>14.6e}", grid.t(k));
    }
    Ok(())
}
