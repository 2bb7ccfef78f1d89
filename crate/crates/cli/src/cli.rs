//! Command-line front end.

use crate::acceptance::{parse_criterion, run_suite, SuiteOptions, CRITERIA};
use crate::config::{default_seed, load, ExperimentKind, Overrides};
use crate::error::{exit, CliError, CliResult};
use crate::experiments::run;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "irand", version, about = "Experiments on random compositions of intermittent maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// n^(1/alpha) x_n(w) against its quenched limit.
    Asymptotics(RunArgs),
    /// P(R > n) for the first return to (1/2, 1].
    Tail(RunArgs),
    /// Ulam invariant density with refinement and cone checks.
    Density(RunArgs),
    /// Decay of correlations under the invariant measure.
    Correlation(RunArgs),
    /// Limit laws of Birkhoff sums.
    Limits(RunArgs),
    /// Infinite invariant measure regime (alpha >= 1).
    Infinite(RunArgs),
    /// All acceptance criteria, or one of them.
    AcceptAll(AcceptArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config file; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set alpha=0.4` or `--set tolerances.rel=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: results].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AcceptArgs {
    /// Run one criterion, by number or name.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: results/acceptance].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn set_workers(k: Option<usize>) -> CliResult<()> {
    let Some(k) = k else { return Ok(()) };
    if k == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| CliError::config(format!("--workers: {e}")))
}

fn kind_of(c: &Command) -> ExperimentKind {
    match c {
        Command::Asymptotics(_) => ExperimentKind::Asymptotics,
        Command::Tail(_) => ExperimentKind::Tail,
        Command::Density(_) => ExperimentKind::Density,
        Command::Correlation(_) => ExperimentKind::Correlation,
        Command::Limits(_) => ExperimentKind::Limits,
        Command::Infinite(_) => ExperimentKind::Infinite,
        Command::AcceptAll(_) => ExperimentKind::AcceptAll,
    }
}

fn experiment(kind: ExperimentKind, a: RunArgs) -> CliResult<i32> {
    let cfg = load(
        kind,
        &Overrides {
            config: a.config,
            sets: a.sets,
            seed: a.seed,
            out: a.out,
        },
    )?;
    set_workers(a.workers)?;
    let t0 = Instant::now();
    let r = run(&cfg)?;
    println!("{kind}: wrote {} files to {}", r.files.len(), r.dir.display());
    if let Some(v) = &r.verdict {
        for c in &v.checks {
            println!("  [{}] {} = {} ({})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.condition);
        }
        println!("{kind}: {} in {:.1} s", if v.pass { "PASS" } else { "FAIL" }, t0.elapsed().as_secs_f64());
    }
    Ok(if r.pass() { exit::PASS } else { exit::FAIL })
}

fn accept(a: AcceptArgs) -> CliResult<i32> {
    let only = a.criterion.as_deref().map(parse_criterion).transpose()?;
    set_workers(a.workers)?;
    let opts = SuiteOptions {
        seed: a.seed.unwrap_or_else(default_seed),
        out: a.out.unwrap_or_else(|| PathBuf::from("results/acceptance")),
        only,
    };
    let total = if only.is_some() { 1 } else { CRITERIA.len() };
    println!("accept-all: seed {}, {} criteria, output {}", opts.seed, total, opts.out.display());
    let t0 = Instant::now();
    let r = run_suite(&opts, |c| {
        println!(
            "[{}] {} {} ({:.1} s)",
            if c.pass { "pass" } else { "FAIL" },
            c.criterion.dir(),
            c.criterion.title,
            c.elapsed.as_secs_f64()
        );
        for k in c.checks.iter().filter(|k| !k.pass) {
            println!("       {} = {} ({})", k.name, k.value, k.condition);
        }
    })?;
    let passed = r.results.iter().filter(|c| c.pass).count();
    println!("accept-all: {passed}/{} passed in {:.1} s", r.results.len(), t0.elapsed().as_secs_f64());
    Ok(if r.pass() { exit::PASS } else { exit::FAIL })
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::PASS };
        }
    };
    let kind = kind_of(&cli.command);
    let res = match cli.command {
        Command::AcceptAll(a) => accept(a),
        Command::Asymptotics(a)
        | Command::Tail(a)
        | Command::Density(a)
        | Command::Correlation(a)
        | Command::Limits(a)
        | Command::Infinite(a) => experiment(kind, a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("irand {kind}: {e}");
            e.exit_code()
        }
    }
}
