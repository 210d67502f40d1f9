//! Replays the Gaussian model's noise through the full master equation at
//! small J, then checks pure dephasing against its closed form.
//!
//! `cargo run --release --example master_equation_check [J]`

use std::error::Error;

use qmag::sme::{compare_to_gaussian, dephasing_check, oracle_grid, SmeScheme};
use qmag::{substream, PhysicalParams, PriorVariance};

fn main() -> Result<(), Box<dyn Error>> {
    let j: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10.0);
    let p = PhysicalParams {
        j_total: j,
        gamma: 1.0,
        b_true: 0.0,
        meas_strength: 1.0,
        efficiency: 1.0,
        prior_b_variance: PriorVariance::Infinite,
        t_total: 0.1,
    }
    .validate()?;
    let grid = oracle_grid(&p)?;
    let cmp = compare_to_gaussian(&p, &grid, substream(3, 0))?;
    println!("J = {j}: {} steps of {:.3e} s", grid.n_steps(), grid.dt());
    println!(
        "max |Δ<Jz>| = {:.4e} (limit {:.4e}), max |Δvar| = {:.4e}, smallest eigenvalue {:.2e}",
        cmp.max_d_mean(),
        cmp.mean_threshold(),
        cmp.max_d_var(),
        cmp.min_eigenvalue
    );
    println!("agreement: {}", if cmp.passes() { "yes" } else { "no" });

    for jd in [0.5, 1.0, 2.0, 5.0] {
        let r = dephasing_check(jd, 1.0, SmeScheme::Kraus)?;
        println!("dephasing J = {jd}: max relative error {:.3e}", r.max_rel_error);
    }
    Ok(())
}
