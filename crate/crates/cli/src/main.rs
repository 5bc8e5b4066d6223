use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use comoving_cli::{list_scenarios, parse_config, run, write_outputs, Suite};

/// Runs verification suites for flows of rough velocity fields.
#[derive(Parser, Debug)]
#[command(name = "comoving", version)]
struct Args {
    /// Scenario configuration file.
    #[arg(required_unless_present = "list")]
    config: Option<PathBuf>,
    /// Run only these suites (repeatable).
    #[arg(long = "suite", value_name = "NAME")]
    suites: Vec<Suite>,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print the built-in scenarios and exit.
    #[arg(long)]
    list: bool,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let args = Args::parse();
    if args.list {
        print!("{}", list_scenarios());
        return Ok(ExitCode::SUCCESS);
    }
    let path = args.config.expect("clap enforces the config argument");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("{}: invalid configuration", path.display());
            eprintln!("{errors}");
            return Ok(ExitCode::from(2));
        }
    };
    if !args.suites.is_empty() {
        config.suites = args.suites;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let summary = run(&config)?;
    write_outputs(&summary, &config.output_dir)?;
    for o in &summary.outcomes {
        println!(
            "{:<17} {:<4} checks={:<4} failures={:<3} worst_ratio={:.3e} wall={:.2?}{}",
            o.suite.name(),
            if o.passed() { "pass" } else { "FAIL" },
            o.checks,
            o.failures,
            o.worst_ratio,
            o.wall_time,
            o.error
                .as_deref()
                .map(|e| format!(" error: {e}"))
                .unwrap_or_default()
        );
    }
    println!("outputs in {}", config.output_dir.display());
    Ok(if summary.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
