//! One conditional trajectory with no applied field: the photocurrent settles
//! onto a random offset fixed in the first ~1/(JM) of the record.
//!
//! `cargo run --release --example photocurrent [seed]`

use std::error::Error;

use qmag::dynamics::{default_cutoff_hz, lowpass_filter};
use qmag::{simulate_trajectory, substream, PhysicalParams, TimeGrid};

fn main() -> Result<(), Box<dyn Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let p = PhysicalParams {
        b_true: 0.0,
        t_total: 1e-5,
        ..PhysicalParams::benchmark()
    };
    let grid = TimeGrid::for_params(&p)?;
    let rec = simulate_trajectory(&p, &grid, substream(seed, 0))?;

    let steps: Vec<f64> = (0..grid.n_steps()).map(|k| grid.step(k)).collect();
    let cutoff = default_cutoff_hz(&p);
    let smooth = lowpass_filter(&rec.y, &steps, cutoff)?;

    let sigma = (p.j_total / 2.0).sqrt();
    println!("J = {:e}, {} steps, filter cutoff {cutoff:.3e} Hz", p.j_total, grid.n_steps());
    println!("{:>12} {:>14} {:>14}", "t (s)", "<Jz>/sigma", "filtered y");
    let every = (grid.n_steps() / 20).max(1);
    for k in (0..grid.n_steps()).step_by(every) {
        println!(
            "{:>12.3e} {:>14.4} {:>14.4e}",
            grid.t(k),
            rec.states[k].mean_jz / sigma,
            smooth[k]
        );
    }
    let last = rec.states.last().unwrap();
    println!(
        "final offset {:.4} projection-noise units, conditional variance {:.3e}",
        last.mean_jz / sigma,
        last.var_jz
    );
    Ok(())
}
