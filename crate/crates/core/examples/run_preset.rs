//! Runs a command from a config file, as the `qmag` binary does.
//!
//! `cargo run --release --example run_preset -- presets/oracle_j10.toml oracle-check`

use std::error::Error;
use std::path::PathBuf;

use qmag::commands::run_command;
use qmag::config::{load_config, Overrides};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "presets/oracle_j10.toml".into()));
    let command = args.next().unwrap_or_else(|| "oracle-check".into());

    let mut cfg = load_config(&path)?;
    cfg.apply(&Overrides {
        out: Some(std::env::temp_dir().join("qmag-example")),
        ..Overrides::default()
    });
    let report = run_command(&command, &cfg)?;
    for c in &report.checks {
        println!("{} {}: {}", c.label(), c.name, c.detail);
    }
    for f in &report.outputs {
        println!("wrote {}", f.display());
    }
    Ok(())
}
