use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qmag::commands::run_command;
use qmag::config::{load_config, Overrides};
use qmag::GammaConvention;

#[derive(Parser)]
#[command(name = "qmag", version, about = "Continuous-measurement magnetometry simulator")]
struct Cli {
    /// Worker threads for ensemble runs (default: all cores). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One conditional trajectory, its photocurrent and the filter trace.
    Simulate(Common),
    /// Monte-Carlo estimator errors against the predicted thresholds.
    Ensemble(Common),
    /// RMS error against J at a fixed time.
    Scaling(Common),
    /// Compare with the full master equation at small J.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-traj")]
    n_traj: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "gamma-convention", value_enum)]
    gamma_convention: Option<Convention>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Angular,
    Cycles,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Ensemble(a) => ("ensemble", a),
        Command::Scaling(a) => ("scaling", a),
        Command::OracleCheck(a) => ("oracle-check", a),
    };
    let result = load_config(&args.config).map_err(Into::into).and_then(|mut cfg| {
        cfg.apply(&Overrides {
            seed: args.seed,
            n_traj: args.n_traj,
            out: args.out.clone(),
            gamma_convention: args.gamma_convention.map(|c| match c {
                Convention::Angular => GammaConvention::Angular,
                Convention::Cycles => GammaConvention::Cycles,
            }),
        });
        run_command(name, &cfg)
    });
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for c in &report.checks {
        println!("{} {}: {}", c.label(), c.name, c.detail);
    }
    for p in &report.outputs {
        println!("wrote {}", p.display());
    }
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        let failures: Vec<_> = report
            .failures()
            .iter()
            .map(|c| json!({ "name": c.name, "detail": c.detail }))
            .collect();
        println!("{}", json!({ "command": name, "failures": failures }));
        ExitCode::FAILURE
    }
}
