//! Sweep execution and reporting: one record per (level, variant) cell,
//! written as CSV and optionally mirrored as JSON.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ietidp::assembly::l2_error;
use ietidp::geometry::{annulus_exact_solution, annulus_load, MultiPatch};
use ietidp::ieti::{solve, Partition, Variant};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Rhs};

/// Inner radius of the quarter annulus.
pub const R0: f64 = 1.0;
/// Outer radius of the quarter annulus.
pub const R1: f64 = 2.0;

/// One solved cell of the sweep. A failed solve is kept in the table with
/// `converged` false, zero iteration counts, and residual -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub level: u32,
    pub dofs: usize,
    pub outer_it: usize,
    pub inner_it_gtilde: f64,
    pub inner_it_basis: f64,
    pub inner_it_dual: f64,
    pub t_assembly_s: f64,
    pub t_setup_s: f64,
    pub t_solve_s: f64,
    pub residual: f64,
    pub converged: bool,
}

const CSV_HEADER: &str = "variant,level,dofs,outer_it,inner_it_gtilde,inner_it_basis,inner_it_dual,t_assembly_s,t_setup_s,t_solve_s,residual,converged";

impl RunRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.level,
            self.dofs,
            self.outer_it,
            self.inner_it_gtilde,
            self.inner_it_basis,
            self.inner_it_dual,
            self.t_assembly_s,
            self.t_setup_s,
            self.t_solve_s,
            self.residual,
            self.converged,
        )
    }
}

fn rhs_fn(rhs: Rhs) -> impl Fn(f64, f64) -> f64 + Sync {
    move |x, y| match rhs {
        Rhs::Manufactured => annulus_load(R0, R1, x, y),
        Rhs::Constant => 1.0,
    }
}

fn build_domain(cfg: &ExperimentConfig, level: u32) -> MultiPatch {
    let spans = 1usize << level;
    MultiPatch::quarter_annulus(cfg.patches[0], cfg.patches[1], R0, R1, cfg.degree, spans)
}

/// Runs the full sweep. Returns the records and whether every cell
/// converged.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<RunRecord>, bool)> {
    let opts = cfg.solve_options();
    let variants = cfg.parsed_variants();
    let load = rhs_fn(cfg.rhs);
    let mut records = Vec::new();
    let mut all_converged = true;

    println!("{:>8} {:>6} {:>8} {:>9} {:>7} {:>7} {:>7} {:>9} {:>10}",
             "variant", "level", "dofs", "outer_it", "g~", "basis", "dual", "t_solve", "residual");
    for &level in &cfg.levels {
        let mp = build_domain(cfg, level);
        for &variant in &variants {
            let rec = match solve(&mp, &load, variant, &opts) {
                Ok(sol) => RunRecord {
                    variant: variant.name().to_string(),
                    level,
                    dofs: sol.distinct_dofs,
                    outer_it: sol.outer_iterations,
                    inner_it_gtilde: sol.stats.gtilde,
                    inner_it_basis: sol.stats.basis,
                    inner_it_dual: sol.stats.dual,
                    t_assembly_s: sol.timings.assembly,
                    t_setup_s: sol.timings.setup,
                    t_solve_s: sol.timings.solve,
                    residual: sol.residual,
                    converged: sol.converged,
                },
                Err(e) => {
                    eprintln!("{} level {level}: solve failed: {e}", variant.name());
                    let dofs = Partition::build(&mp)
                        .map(|p| p.total_distinct_dofs())
                        .unwrap_or(0);
                    RunRecord {
                        variant: variant.name().to_string(),
                        level,
                        dofs,
                        outer_it: 0,
                        inner_it_gtilde: 0.0,
                        inner_it_basis: 0.0,
                        inner_it_dual: 0.0,
                        t_assembly_s: 0.0,
                        t_setup_s: 0.0,
                        t_solve_s: 0.0,
                        residual: -1.0,
                        converged: false,
                    }
                }
            };
            println!(
                "{:>8} {:>6} {:>8} {:>9} {:>7.1} {:>7.1} {:>7.1} {:>8.2}s {:>10.2e}",
                rec.variant, rec.level, rec.dofs, rec.outer_it,
                rec.inner_it_gtilde, rec.inner_it_basis, rec.inner_it_dual,
                rec.t_solve_s, rec.residual,
            );
            all_converged &= rec.converged;
            records.push(rec);
        }
    }

    write_csv(&cfg.out_csv, &records)?;
    if let Some(path) = &cfg.out_json {
        let text = serde_json::to_string_pretty(&records)?;
        std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok((records, all_converged))
}

pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{CSV_HEADER}").unwrap();
    for r in records {
        writeln!(text, "{}", r.csv_row()).unwrap();
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One level of the convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub level: u32,
    pub h: f64,
    pub l2_error: f64,
    /// log2(previous error / this error); absent on the first level.
    pub rate: Option<f64>,
    pub converged: bool,
}

/// Solves with the direct variant per level and reports the relative L2
/// error against the closed-form solution, with observed log2 rates.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<(Vec<ConvergenceRow>, bool)> {
    if cfg.rhs != Rhs::Manufactured {
        bail!("convergence studies need the manufactured right-hand side");
    }
    let opts = cfg.solve_options();
    let load = rhs_fn(cfg.rhs);
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut all_converged = true;

    println!("{:>6} {:>10} {:>12} {:>6}", "level", "h", "l2_error", "rate");
    for &level in &cfg.levels {
        let mp = build_domain(cfg, level);
        let sol = solve(&mp, &load, Variant::DirectDirect, &opts)?;
        let (mut err2, mut norm2) = (0.0, 0.0);
        for (patch, coeffs) in mp.patches.iter().zip(&sol.per_patch) {
            let (e2, n2) = l2_error(patch, coeffs, |x, y| annulus_exact_solution(R0, R1, x, y));
            err2 += e2;
            norm2 += n2;
        }
        let error = (err2 / norm2).sqrt();
        let rate = rows.last().map(|prev: &ConvergenceRow| (prev.l2_error / error).log2());
        let h = 0.5f64.powi(level as i32);
        match rate {
            Some(r) => println!("{:>6} {:>10.3e} {:>12.4e} {:>6.2}", level, h, error, r),
            None => println!("{:>6} {:>10.3e} {:>12.4e} {:>6}", level, h, error, "-"),
        }
        all_converged &= sol.converged;
        rows.push(ConvergenceRow { level, h, l2_error: error, rate, converged: sol.converged });
    }

    let mut text = String::from("level,h,l2_error,rate,converged\n");
    for r in &rows {
        let rate = r.rate.map(|v| v.to_string()).unwrap_or_default();
        writeln!(text, "{},{},{},{},{}", r.level, r.h, r.l2_error, rate, r.converged).unwrap();
    }
    std::fs::write(&cfg.out_csv, text)
        .with_context(|| format!("writing {}", cfg.out_csv.display()))?;
    Ok((rows, all_converged))
}
