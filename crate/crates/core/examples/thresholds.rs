//! Predicted detection thresholds δB̃(t): numerical covariance propagation,
//! the closed form for an uninformative prior, its long-time limit, and the
//! classical shot-noise bound.
//!
//! `cargo run --release --example thresholds`

use std::error::Error;

use qmag::estimators::{detection_threshold_asymptotic, riccati_analytic, riccati_at_times, shotnoise_limit};
use qmag::{PhysicalParams, PriorVariance};

fn main() -> Result<(), Box<dyn Error>> {
    let p = PhysicalParams::benchmark();
    let flat = p.with_prior(PriorVariance::Infinite);
    let times: Vec<f64> = (0..=12).map(|i| 1e-9 * 10f64.powf(i as f64 / 2.0)).collect();

    let mut pts = vec![0.0];
    pts.extend(&times);
    let finite = riccati_at_times(&p, &pts)?;
    let infinite = riccati_at_times(&flat, &pts)?;

    println!(
        "{:>10} {:>13} {:>13} {:>13} {:>13} {:>13}",
        "t (s)", "finite prior", "flat prior", "closed form", "t^-3/2 limit", "shot noise"
    );
    for (i, &t) in times.iter().enumerate() {
        let v = |s: &qmag::estimators::RiccatiSolution| s.v22(i + 1).map(f64::sqrt).unwrap_or(f64::NAN);
        println!(
            "{t:>10.2e} {:>13.4e} {:>13.4e} {:>13.4e} {:>13.4e} {:>13.4e}",
            v(&finite),
            v(&infinite),
            riccati_analytic(&flat, t)?,
            detection_threshold_asymptotic(&p, t),
            shotnoise_limit(&p, t)
        );
    }
    println!("all values in G");
    Ok(())
}
