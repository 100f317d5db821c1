use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use weakinv_cli::pipeline::{self, Overrides, EXIT_CHECK_FAILED};
use weakinv_cli::{RunReport, Scenario};

#[derive(Debug, Parser)]
#[command(name = "weakinv", version, about = "Classify, verify and decompose weakly invariant systems")]
struct Cli {
    /// Overrides the scenario's sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for JSON reports and CSV trajectories.
    #[arg(long, global = true, default_value = "weakinv-out")]
    out: PathBuf,
    /// Tolerance override, repeatable.
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE", value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
    /// Print the JSON report instead of the table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Strong / Weak / PartialOnly / None. Exit 0, 0, 2, 3.
    Classify { scenario: String },
    /// Full property battery. Exit 4 when any check fails.
    Verify { scenario: String },
    /// Cascade integration against direct integration. Exit 4 above tolerance.
    Decompose {
        scenario: String,
        #[arg(long, allow_hyphen_values = true)]
        t: Option<f64>,
        /// Quotient start point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y0: Option<Vec<f64>>,
        /// Algebra coordinates of the group start point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        g0: Option<Vec<f64>>,
    },
    /// Builtin groups, actions, field families, charts and scenarios.
    List,
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value: f64 = value.parse().map_err(|e| format!("tolerance `{name}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

fn load(arg: &str, cli: &Cli) -> Result<Scenario> {
    let mut s = Scenario::resolve(arg)?;
    Overrides {
        seed: cli.seed,
        tolerances: cli.tol.clone(),
    }
    .apply(&mut s)?;
    Ok(s)
}

fn emit(report: &RunReport, cli: &Cli) -> Result<()> {
    let json = report.to_json();
    std::fs::create_dir_all(&cli.out).with_context(|| format!("cannot create {}", cli.out.display()))?;
    let path = cli.out.join(format!("{}_{}.json", report.scenario, report.command));
    std::fs::write(&path, &json).with_context(|| format!("cannot write {}", path.display()))?;
    if cli.json {
        write_stdout(&json)
    } else {
        write_stdout(&format!("{}report: {}\n", report.to_table(), path.display()))
    }
}

/// A closed pipe (`weakinv ... | head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Classify { scenario } => {
            let s = load(scenario, cli)?;
            let (report, class) = pipeline::classify(&s)?;
            emit(&report, cli)?;
            Ok(pipeline::classify_exit_code(class))
        }
        Command::Verify { scenario } => {
            let s = load(scenario, cli)?;
            let report = pipeline::verify(&s)?;
            emit(&report, cli)?;
            Ok(if report.failures() == 0 { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Decompose { scenario, t, y0, g0 } => {
            let s = load(scenario, cli)?;
            let report = pipeline::decompose(&s, *t, y0.clone(), g0.clone(), Path::new(&cli.out))?;
            emit(&report, cli)?;
            Ok(if report.failures() == 0 { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::List => {
            write_stdout(&pipeline::list())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
