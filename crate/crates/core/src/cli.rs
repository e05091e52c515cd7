//! Command-line surface.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 simulated and
//! closed-form values disagree (`theory-check`), 3 internal invariant
//! violation.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::engine::format_fill;
use crate::error::{ConfigError, TheoryError};
use crate::experiment::{format_float, run_sweep, run_task, write_csv, write_csv_file, PlanSection, SweepConfig, SweepError};
use crate::population::TpSlRegime;
use crate::strategy::{relative_error, return_error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ORACLE_MISMATCH: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

/// Relative disagreement at which `theory-check` fails.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "pyramid-sim", version, about = "Pump-and-dump market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the repetition count.
    #[arg(long, global = true, value_name = "N")]
    reps: Option<u32>,
    /// Output CSV; standard output when neither this nor the config names one.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Extra diagnostics on standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep ratio x single order size.
    SweepOrderSize,
    /// Sweep ratio x buy periods x sell periods for a batch plan.
    SweepPeriods,
    /// One simulation of the first grid point with its full fill trace.
    SingleRun,
    /// Compare simulated outcomes with the closed form on every grid point.
    TheoryCheck,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Mismatch(String),
    Invariant(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Run { .. } => Failure::Invariant(e.to_string()),
            SweepError::Config(_) | SweepError::Output { .. } => Failure::Config(e.to_string()),
        }
    }
}

impl From<TheoryError> for Failure {
    fn from(e: TheoryError) -> Self {
        Failure::Invariant(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(format!("output: {e}"))
    }
}

pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    run(args, &mut io::stdout().lock(), &mut io::stderr().lock())
}

pub fn run<I: IntoIterator<Item = OsString>>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let _ = write!(err, "{e}");
            return EXIT_CONFIG;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let (code, message) = match failure {
                Failure::Config(m) => (EXIT_CONFIG, m),
                Failure::Mismatch(m) => (EXIT_ORACLE_MISMATCH, m),
                Failure::Invariant(m) => (EXIT_INVARIANT, m),
            };
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

fn load_config(cli: &Cli) -> Result<SweepConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.master_seed = seed;
    }
    if let Some(reps) = cli.reps {
        config.run.repetitions = reps;
    }
    if let Some(out) = &cli.out {
        config.run.output = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let mut config = load_config(cli)?;
    match cli.command {
        Command::SweepOrderSize => {
            if !matches!(config.plan, PlanSection::Single { .. }) {
                return Err(Failure::Config("sweep-order-size needs a plan of kind \"single\"".into()));
            }
            sweep(&config, cli.verbose, out, err)
        }
        Command::SweepPeriods => {
            if !matches!(config.plan, PlanSection::Batch { .. }) {
                return Err(Failure::Config("sweep-periods needs a plan of kind \"batch\"".into()));
            }
            sweep(&config, cli.verbose, out, err)
        }
        Command::SingleRun => single_run(&config, out),
        Command::TheoryCheck => {
            if config.population.tp_sl != TpSlRegime::None {
                config.population.tp_sl = TpSlRegime::None;
                if cli.verbose {
                    writeln!(err, "theory-check: take-profit/stop-loss disabled")?;
                }
            }
            theory_check(&config, cli.verbose, out)
        }
    }
}

fn sweep(config: &SweepConfig, verbose: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let records = run_sweep(config)?;
    match &config.run.output {
        Some(path) => write_csv_file(&records, path)?,
        None => write_csv(&records, &mut *out).map_err(|e| Failure::Config(format!("output: {e}")))?,
    }
    if verbose {
        let exhausted = records.iter().filter(|r| r.outputs.is_none()).count();
        writeln!(err, "{} runs, {} with an exhausted book", records.len(), exhausted)?;
    }
    Ok(())
}

fn single_run(config: &SweepConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let task = config.tasks()[0];
    let (record, outcome) = run_task(config, task)?;
    if let Some(outcome) = &outcome {
        for period in &outcome.period_results {
            for fill in &period.fills {
                writeln!(out, "{}", format_fill(period.period_index, fill))?;
            }
            writeln!(
                out,
                "period {} anchor={} close={} waves={:?}",
                period.period_index,
                format_float(period.anchor_price),
                format_float(period.closing_price),
                period.cascade_counts
            )?;
        }
    }
    write_csv(&[record], &mut *out).map_err(|e| Failure::Config(format!("output: {e}")))?;
    Ok(())
}

fn theory_check(config: &SweepConfig, verbose: bool, out: &mut dyn Write) -> Result<(), Failure> {
    writeln!(out, "ratio,plan,repetition,quantity,simulated,theory,relative_error")?;
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for task in config.tasks() {
        let (_, outcome) = run_task(config, task)?;
        let Some(outcome) = outcome else { continue };
        let oracle = outcome.oracle()?;
        let rows = [
            ("m_buy", outcome.m_buy, oracle.m_buy, relative_error(outcome.m_buy, oracle.m_buy)),
            ("m_sell", outcome.m_sell, oracle.m_sell, relative_error(outcome.m_sell, oracle.m_sell)),
            ("r_mf", outcome.r_mf, oracle.r_mf, return_error(outcome.r_mf, oracle.r_mf)),
        ];
        for (name, sim, theory, rel) in rows {
            worst = worst.max(rel);
            writeln!(
                out,
                "{},{},{},{},{},{},{:.3e}",
                format_float(task.ratio),
                task.plan,
                task.repetition,
                name,
                format_float(sim),
                format_float(theory),
                rel
            )?;
        }
        if verbose {
            writeln!(
                out,
                "{},{},{},r_mf_first_order,{},{},{:.3e}",
                format_float(task.ratio),
                task.plan,
                task.repetition,
                format_float(outcome.r_mf),
                format_float(oracle.r_mf_approx),
                (outcome.r_mf - oracle.r_mf_approx).abs()
            )?;
        }
        checked += 1;
    }
    writeln!(out, "checked {checked} runs, worst relative error {worst:.3e}")?;
    if worst >= ORACLE_TOLERANCE {
        return Err(Failure::Mismatch(format!(
            "simulation and closed form disagree: relative error {worst:.3e} >= {ORACLE_TOLERANCE:e}"
        )));
    }
    Ok(())
}
