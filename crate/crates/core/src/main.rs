use cascade_lab::experiment::{load_config, run};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs one experiment configuration and writes its CSV artifacts.
#[derive(Debug, Parser)]
#[command(name = "cascade-lab", version)]
struct Args {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Output directory for CSV files and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a configuration key, e.g. `--set grid.horizon=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Negative test: succeed only if a check fails or the run is refused.
    #[arg(long)]
    expect_fail: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let loaded = match load_config(&args.config, &args.overrides) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let outcome = run(&loaded.config);
    for c in &outcome.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(r) = &outcome.refusal {
        println!("REFUSED: {r}");
    }
    match outcome.write(&args.out) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    }
    if outcome.passed() != args.expect_fail {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
