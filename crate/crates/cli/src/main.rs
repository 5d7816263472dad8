//! Batch driver for the multipatch solver: iteration sweeps over levels and
//! variants, and manufactured-solution convergence studies.
//!
//! The worker-thread count for per-patch parallelism is taken from the
//! `SOLVER_THREADS` environment variable; unset means one thread per core.
//! Iteration counts do not depend on it.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ietidp_cli::config::{parse_levels, ExperimentConfig, Rhs};
use ietidp_cli::run;

#[derive(Parser)]
#[command(name = "ietidp", version, about = "Multipatch spline Poisson solver: dual-primal tearing with multigrid inner solvers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an iteration sweep; writes one CSV row per (level, variant).
    Solve(SolveArgs),
    /// Run a convergence study against the closed-form solution.
    Converge(ConvergeArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// JSON experiment config; mutually exclusive with the inline flags.
    #[arg(long, conflicts_with_all = ["variants", "patches", "degree", "levels", "tol", "out", "json", "rhs", "seed"])]
    config: Option<PathBuf>,

    /// Variants to run (comma list or repeated): dd, mgd, mgmg, mgmgs.
    #[arg(long = "variant", value_delimiter = ',')]
    variants: Vec<String>,

    /// Patch grid on the quarter annulus.
    #[arg(long, num_args = 2, value_names = ["NTHETA", "NR"])]
    patches: Option<Vec<usize>>,

    /// Spline degree of the solution space.
    #[arg(long)]
    degree: Option<usize>,

    /// Refinement levels: inclusive range "2..5" or comma list "2,3,4".
    #[arg(long)]
    levels: Option<String>,

    /// Outer relative residual target.
    #[arg(long)]
    tol: Option<f64>,

    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Optional JSON mirror of the records.
    #[arg(long)]
    json: Option<PathBuf>,

    /// Right-hand side: manufactured or constant.
    #[arg(long)]
    rhs: Option<String>,

    /// Seed for calibration probes.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConvergeArgs {
    /// JSON experiment config (manufactured rhs, direct variant per level).
    #[arg(long)]
    config: PathBuf,
}

impl SolveArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        if let Some(path) = self.config {
            return ExperimentConfig::load(&path);
        }
        let patches = match self.patches.as_deref() {
            Some([a, b]) => [*a, *b],
            Some(_) => bail!("--patches takes exactly two values"),
            None => [8, 4],
        };
        let rhs = match self.rhs.as_deref() {
            None | Some("manufactured") => Rhs::Manufactured,
            Some("constant") => Rhs::Constant,
            Some(other) => bail!("unknown rhs {other:?}; expected manufactured or constant"),
        };
        let variants = if self.variants.is_empty() {
            vec!["dd".into(), "mgd".into(), "mgmg".into(), "mgmgs".into()]
        } else {
            self.variants
        };
        let cfg = ExperimentConfig {
            patches,
            degree: self.degree.unwrap_or(2),
            levels: parse_levels(self.levels.as_deref().unwrap_or("2..4"))?,
            variants,
            rhs,
            out_csv: self.out.unwrap_or_else(|| "results.csv".into()),
            out_json: self.json,
            outer_tol: self.tol,
            max_outer: None,
            basis_tol: None,
            dual_tol: None,
            interior_tol: None,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("SOLVER_THREADS") else { return Ok(()) };
    let n: usize = raw
        .parse()
        .with_context(|| format!("SOLVER_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        bail!("SOLVER_THREADS must be positive");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("installing the worker pool")?;
    Ok(())
}

fn main() -> Result<ExitCode> {
    init_thread_pool()?;
    let cli = Cli::parse();
    let all_converged = match cli.cmd {
        Cmd::Solve(args) => {
            let cfg = args.into_config()?;
            let (_, ok) = run::run_experiment(&cfg)?;
            ok
        }
        Cmd::Converge(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let (_, ok) = run::run_convergence(&cfg)?;
            ok
        }
    };
    Ok(if all_converged { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
