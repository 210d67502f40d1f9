//! RMS error at a fixed time for several atom numbers. The filter follows
//! 1/J; shot noise follows 1/√J.
//!
//! `cargo run --release --example heisenberg_scaling [n_traj]`

use std::error::Error;

use qmag::montecarlo::{scaling_study, EnsembleSpec, EstimatorKind};
use qmag::{PhysicalParams, TimeGrid};

fn main() -> Result<(), Box<dyn Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let p = PhysicalParams {
        t_total: 1e-4,
        ..PhysicalParams::benchmark()
    };
    let grid = TimeGrid::for_params(&p)?;
    let mut base = EnsembleSpec::new(p, grid.clone(), n, 5).with_estimators(&[EstimatorKind::Qkf]);
    base.checkpoints = vec![grid.n_steps()];
    let result = scaling_study(&base, &[1e4, 1e5, 1e6, 4e6])?;

    println!("t = {:e} s, {n} trajectories per J", result.t_check);
    for pt in &result.points {
        println!(
            "J = {:>8.1e}  rms {:.4e} ± {:.1e} G  (predicted {:.4e})",
            pt.j, pt.rms, pt.rms_stderr, pt.predicted
        );
    }
    println!("fitted slope {:.4}", result.slope(EstimatorKind::Qkf).unwrap());
    println!("predicted slope {:.4}, shot-noise slope {:.4}", result.predicted_slope, result.shotnoise_slope);
    Ok(())
}
