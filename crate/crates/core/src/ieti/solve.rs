//! Variant dispatch and the outer dual iteration.

use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use crate::geometry::MultiPatch;
use crate::linalg::pcg;

use super::operators::{
    assemble_all, Counters, DualSystem, FOperator, InnerStats, MsdOperator, PatchOperators,
};
use super::partition::Partition;
use super::{saddle, SolveOptions, SolverError, Variant};

/// Wall clock breakdown of one solve, in seconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub assembly: f64,
    pub setup: f64,
    pub solve: f64,
}

/// Outcome of a solve. Coefficients are reported per patch over the full
/// tensor lattice, with boundary coefficients present as zeros.
#[derive(Debug, Clone)]
pub struct Solution {
    pub per_patch: Vec<Vec<f64>>,
    pub outer_iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub stats: InnerStats,
    pub timings: Timings,
    pub distinct_dofs: usize,
}

/// Solve the Poisson problem on `mp` with the requested variant.
pub fn solve(
    mp: &MultiPatch,
    load: &(dyn Fn(f64, f64) -> f64 + Sync),
    variant: Variant,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    let part = Partition::build(mp)?;
    if variant == Variant::MgMgSaddle {
        return saddle::solve(mp, load, &part, opts);
    }

    let t0 = Instant::now();
    let assembled = assemble_all(&mp.patches, load);
    let t_assembly = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let counters = Counters::default();
    let ops: Vec<PatchOperators> = mp
        .patches
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            PatchOperators::build(
                p,
                k,
                &part.patches[k],
                &part,
                &assembled[k].0,
                &assembled[k].1,
                variant,
                opts,
                &counters,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sys = DualSystem::assemble(&part, &ops, opts, &counters)?;
    let t_setup = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let (d, scale) = sys.dual_rhs()?;
    let d_norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (lambda, report) = if d_norm <= 1e-13 * scale {
        (vec![0.0; d.len()], crate::linalg::SolveReport::trivial())
    } else {
        let f_op = FOperator { sys: &sys, error: Mutex::new(None) };
        let msd = MsdOperator { sys: &sys };
        let out = pcg(&f_op, Some(&msd), &d, opts.outer_tol, opts.max_outer)?;
        if let Some(err) = f_op.error.into_inner().unwrap() {
            return Err(err.into());
        }
        out
    };
    let per_patch = sys.recover(&lambda, opts.interior_tol)?;
    let t_solve = t2.elapsed().as_secs_f64();

    Ok(Solution {
        per_patch,
        outer_iterations: report.iterations,
        residual: report.residual,
        converged: report.converged(),
        stats: counters.stats(),
        timings: Timings { assembly: t_assembly, setup: t_setup, solve: t_solve },
        distinct_dofs: part.total_distinct_dofs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::l2_error;
    use crate::geometry::{annulus_exact_solution, annulus_load};
    use crate::ieti::monolithic_solve;

    fn annulus_rhs(x: f64, y: f64) -> f64 {
        annulus_load(1.0, 2.0, x, y)
    }

    fn relative_max_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut gap = 0.0f64;
        let mut scale = 1e-30f64;
        for (va, vb) in a.iter().zip(b) {
            for (x, y) in va.iter().zip(vb) {
                gap = gap.max((x - y).abs());
                scale = scale.max(x.abs());
            }
        }
        gap / scale
    }

    #[test]
    fn direct_variant_matches_the_monolithic_solver() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 2);
        let opts = SolveOptions { outer_tol: 1e-12, ..Default::default() };
        let sol = solve(&mp, &annulus_rhs, Variant::DirectDirect, &opts).unwrap();
        assert!(sol.converged, "stopped after {} iterations", sol.outer_iterations);
        let mono = monolithic_solve(&mp, &annulus_rhs).unwrap();
        assert!(
            relative_max_gap(&sol.per_patch, &mono) < 1e-9,
            "gap {}",
            relative_max_gap(&sol.per_patch, &mono)
        );
    }

    #[test]
    fn all_variants_agree_on_a_small_problem() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 4);
        let opts = SolveOptions { outer_tol: 1e-10, ..Default::default() };
        let reference = solve(&mp, &annulus_rhs, Variant::DirectDirect, &opts).unwrap();
        for variant in [Variant::MgDirect, Variant::MgMg, Variant::MgMgSaddle] {
            let sol = solve(&mp, &annulus_rhs, variant, &opts).unwrap();
            assert!(sol.converged, "{variant} stopped after {}", sol.outer_iterations);
            let gap = relative_max_gap(&sol.per_patch, &reference.per_patch);
            assert!(gap < 1e-7, "{variant} disagrees by {gap}");
        }
    }

    #[test]
    fn torn_solution_is_continuous_and_accurate() {
        let mp = MultiPatch::quarter_annulus(4, 2, 1.0, 2.0, 2, 4);
        let opts = SolveOptions::default();
        let sol = solve(&mp, &annulus_rhs, Variant::DirectDirect, &opts).unwrap();
        assert!(sol.converged);
        let part = Partition::build(&mp).unwrap();
        assert!(part.continuity_residual(&sol.per_patch) < 1e-6);

        let exact = |x: f64, y: f64| annulus_exact_solution(1.0, 2.0, x, y);
        let mut err2 = 0.0;
        let mut norm2 = 0.0;
        for (patch, coeffs) in mp.patches.iter().zip(&sol.per_patch) {
            let (e, n) = l2_error(patch, coeffs, &exact);
            err2 += e;
            norm2 += n;
        }
        let rel = (err2 / norm2).sqrt();
        assert!(rel < 5e-3, "relative error {rel}");
    }

    #[test]
    fn inner_counters_are_populated_for_inexact_variants() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 4);
        let opts = SolveOptions::default();
        let sol = solve(&mp, &annulus_rhs, Variant::MgMg, &opts).unwrap();
        assert!(sol.converged);
        assert!(sol.stats.gtilde > 0.0);
        assert!(sol.stats.basis > 0.0);
        assert!(sol.stats.dual > 0.0);
        assert!(sol.distinct_dofs > 0);

        let saddle = solve(&mp, &annulus_rhs, Variant::MgMgSaddle, &opts).unwrap();
        assert!(saddle.converged);
        assert_eq!(saddle.stats.gtilde, 0.0);
        assert_eq!(saddle.stats.basis, 0.0);
        assert_eq!(saddle.stats.dual, 0.0);
    }
}
