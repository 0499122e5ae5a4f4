use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ttst_cli::config::{ExperimentConfig, OutputFormat};
use ttst_cli::{report, selftest};

/// Space-time spectral collocation CDR solver in tensor-train format.
#[derive(Parser)]
#[command(name = "ttst", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to the flat key-value config file.
        #[arg(long)]
        config: PathBuf,
        /// Report destination (defaults to the config's `out`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report format, overriding the config.
        #[arg(long, value_parser = ["csv", "json"])]
        format: Option<String>,
    },
    /// Run the library invariant suite.
    Selftest,
}

/// Seed override through the environment, e.g. `TTST_SEED=1 ttst run ...`.
fn env_seed() -> Option<u64> {
    std::env::var("TTST_SEED").ok().and_then(|v| v.parse().ok())
}

fn run(config: PathBuf, out: Option<PathBuf>, format: Option<String>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&config, env_seed()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(path) = out {
        cfg.out = Some(path);
    }
    if let Some(fmt) = format {
        cfg.format = match fmt.as_str() {
            "json" => OutputFormat::Json,
            _ => OutputFormat::Csv,
        };
    }
    let rows = match ttst_cli::run_experiment(&cfg) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("experiment failed: {e}");
            return ExitCode::from(1);
        }
    };
    let emit = |rows: &[ttst_cli::RunRow]| -> std::io::Result<()> {
        match &cfg.out {
            Some(path) => {
                let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
                report::write_report(&mut file, rows, cfg.format)
            }
            None => report::write_report(&mut std::io::stdout().lock(), rows, cfg.format),
        }
    };
    if let Err(e) = emit(&rows) {
        eprintln!("cannot write report: {e}");
        return ExitCode::from(1);
    }
    if rows.iter().any(|r| r.failed()) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_selftest() -> ExitCode {
    let checks = selftest::run();
    let mut ok = true;
    for (name, passed) in &checks {
        println!("{} {}", if *passed { "[PASS]" } else { "[FAIL]" }, name);
        ok &= passed;
    }
    if ok {
        println!("selftest: {} checks passed", checks.len());
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            format,
        } => run(config, out, format),
        Command::Selftest => run_selftest(),
    }
}
