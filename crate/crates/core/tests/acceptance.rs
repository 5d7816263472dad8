//! Acceptance suite for the quarter annulus benchmark. One test per
//! criterion: iteration-count behavior of the four variants, inner
//! iteration plateaus, cross-variant and dense-oracle equivalence,
//! algebraic invariants of the building blocks, discretization
//! convergence, and spectral ordering of the calibrated preconditioners.
//! Every test prints the numbers it judges so a failure carries its
//! evidence in the captured output.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ietidp::assembly::{assemble_load, assemble_stiffness, l2_error, parameter_mass};
use ietidp::geometry::{annulus_exact_solution, annulus_load, MultiPatch, Patch};
use ietidp::ieti::operators::{Counters, DualSystem, PatchOperators};
use ietidp::ieti::{monolithic_solve, solve, Partition, SolveOptions, Variant, VARIANTS};
use ietidp::linalg::{
    bpcg, calibrate_spd_order, dot, sz_pcg, FnOperator, LinearOperator, OrderDirection,
    ScaledOperator, SparseMatrix, SzPreconditioner,
};
use ietidp::multigrid::build_patch_hierarchy;
use ietidp::splines::{prolongation_1d, KnotVector};

const R0: f64 = 1.0;
const R1: f64 = 2.0;

fn rhs(x: f64, y: f64) -> f64 {
    annulus_load(R0, R1, x, y)
}

fn exact(x: f64, y: f64) -> f64 {
    annulus_exact_solution(R0, R1, x, y)
}

/// Benchmark domain: 8x4 patches, degree 2, 2^level spans per direction.
fn benchmark(level: u32) -> MultiPatch {
    MultiPatch::quarter_annulus(8, 4, R0, R1, 2, 1usize << level)
}

fn toy(n_theta: usize, n_r: usize, degree: usize, level: u32) -> MultiPatch {
    MultiPatch::quarter_annulus(n_theta, n_r, R0, R1, degree, 1usize << level)
}

struct Run {
    outer: usize,
    gtilde: f64,
    basis: f64,
    dual: f64,
    dofs: usize,
}

struct Sweep {
    runs: BTreeMap<(u32, &'static str), Run>,
    wall: f64,
}

static SWEEP: OnceLock<Sweep> = OnceLock::new();

/// Shared benchmark sweep: levels 2 through 5, all four variants, default
/// options. Computed once; the iteration-count criteria all read from it.
fn sweep() -> &'static Sweep {
    SWEEP.get_or_init(|| {
        let opts = SolveOptions::default();
        let start = Instant::now();
        let mut runs = BTreeMap::new();
        for level in 2..=5u32 {
            let mp = benchmark(level);
            for variant in VARIANTS {
                let sol = solve(&mp, &rhs, variant, &opts).expect("benchmark solve");
                assert!(
                    sol.converged,
                    "{} level {level} stopped at residual {:.3e} without converging",
                    variant.name(),
                    sol.residual
                );
                runs.insert(
                    (level, variant.name()),
                    Run {
                        outer: sol.outer_iterations,
                        gtilde: sol.stats.gtilde,
                        basis: sol.stats.basis,
                        dual: sol.stats.dual,
                        dofs: sol.distinct_dofs,
                    },
                );
            }
        }
        Sweep { runs, wall: start.elapsed().as_secs_f64() }
    })
}

fn build_ops(
    mp: &MultiPatch,
    part: &Partition,
    variant: Variant,
    opts: &SolveOptions,
    counters: &Counters,
) -> Vec<PatchOperators> {
    mp.patches
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let k_full = assemble_stiffness(p);
            let f_full = assemble_load(p, rhs);
            PatchOperators::build(
                p,
                k,
                &part.patches[k],
                part,
                &k_full,
                &f_full,
                variant,
                opts,
                counters,
            )
            .expect("patch operators")
        })
        .collect()
}

#[test]
fn criterion_01_direct_variant_iteration_window() {
    let s = sweep();
    let counts: Vec<usize> = (2..=5).map(|l| s.runs[&(l, "D-D")].outer).collect();
    for (level, &c) in (2..=5u32).zip(&counts) {
        println!(
            "level {level} D-D: {c} outer iterations at {} dofs",
            s.runs[&(level, "D-D")].dofs
        );
    }
    println!("benchmark sweep wall time {:.1} s", s.wall);

    // One size beyond the benchmark window for context on the plateau.
    let six = solve(&benchmark(6), &rhs, Variant::DirectDirect, &SolveOptions::default())
        .expect("level 6 solve");
    println!(
        "level 6 D-D: {} outer iterations at {} dofs",
        six.outer_iterations, six.distinct_dofs
    );

    assert!(s.wall < 300.0, "benchmark sweep took {:.1} s, budget is 300 s", s.wall);
    for (w, level) in counts.windows(2).zip(3..=5u32) {
        assert!(
            w[1] as i64 - w[0] as i64 <= 2,
            "D-D outer iterations jump from {} to {} entering level {level}",
            w[0],
            w[1]
        );
    }
    for (level, &c) in (2..=5u32).zip(&counts) {
        assert!(
            (7..=14).contains(&c),
            "level {level} D-D outer iterations {c} outside [7, 14] (sweep: {counts:?})"
        );
    }
}

#[test]
fn criterion_02_inexact_interior_solver_matches_direct() {
    let s = sweep();
    for level in 2..=5u32 {
        let dd = s.runs[&(level, "D-D")].outer as i64;
        let mgd = s.runs[&(level, "MG-D")].outer as i64;
        println!("level {level}: D-D {dd}, MG-D {mgd}");
        assert!(
            (mgd - dd).abs() <= 1,
            "level {level}: MG-D outer iterations {mgd} differ from D-D {dd} by more than 1"
        );
    }
}

#[test]
fn criterion_03_inexact_local_solver_matches_direct() {
    let s = sweep();
    for level in 2..=5u32 {
        let dd = s.runs[&(level, "D-D")].outer as i64;
        let mgmg = s.runs[&(level, "MG-MG")].outer as i64;
        println!("level {level}: D-D {dd}, MG-MG {mgmg}");
        assert!(
            (mgmg - dd).abs() <= 1,
            "level {level}: MG-MG outer iterations {mgmg} differ from D-D {dd} by more than 1"
        );
    }
}

#[test]
fn criterion_04_saddle_variant_iteration_bound() {
    let s = sweep();
    for level in 2..=5u32 {
        let dd = s.runs[&(level, "D-D")].outer;
        let sad = s.runs[&(level, "MG-MG-S")].outer;
        println!("level {level}: D-D {dd}, MG-MG-S {sad}");
        assert!(
            sad as f64 <= 2.0 * dd as f64,
            "level {level}: MG-MG-S outer iterations {sad} exceed 2x D-D ({dd})"
        );
    }
}

#[test]
fn criterion_05_inner_iteration_plateau() {
    let s = sweep();
    let pick = |f: fn(&Run) -> f64| -> Vec<f64> {
        (3..=5u32).map(|l| f(&s.runs[&(l, "MG-MG")])).collect()
    };
    let buckets = [
        ("reduced rhs", pick(|r| r.gtilde)),
        ("basis", pick(|r| r.basis)),
        ("dual", pick(|r| r.dual)),
    ];
    for (label, vals) in buckets {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "MG-MG {label} solves, levels 3..5: {:.2?} (band width {:.2})",
            vals,
            hi - lo
        );
        assert!(
            hi - lo <= 3.0,
            "MG-MG average {label} iterations vary by {:.2} across levels 3..5",
            hi - lo
        );
    }
}

/// Largest relative entrywise gap between two per-patch coefficient sets.
fn relative_max_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut scale = 0.0f64;
    let mut gap = 0.0f64;
    for (pa, pb) in a.iter().zip(b) {
        assert_eq!(pa.len(), pb.len());
        for (&x, &y) in pa.iter().zip(pb) {
            scale = scale.max(x.abs());
            gap = gap.max((x - y).abs());
        }
    }
    gap / scale
}

#[test]
fn criterion_06_variants_agree_on_the_solution() {
    let opts = SolveOptions { outer_tol: 1e-10, ..SolveOptions::default() };
    for level in 2..=4u32 {
        let mp = benchmark(level);
        let reference = solve(&mp, &rhs, Variant::DirectDirect, &opts).expect("D-D solve");
        for variant in [Variant::MgDirect, Variant::MgMg, Variant::MgMgSaddle] {
            let sol = solve(&mp, &rhs, variant, &opts).expect("variant solve");
            let gap = relative_max_gap(&sol.per_patch, &reference.per_patch);
            println!("level {level} {} vs D-D: relative max gap {gap:.2e}", variant.name());
            assert!(
                gap <= 1e-5,
                "level {level}: {} deviates from D-D by {gap:.2e}",
                variant.name()
            );
        }
    }

    let mp = toy(2, 2, 2, 3);
    let mono = monolithic_solve(&mp, &rhs).expect("monolithic solve");
    for variant in VARIANTS {
        let sol = solve(&mp, &rhs, variant, &opts).expect("toy solve");
        let gap = relative_max_gap(&sol.per_patch, &mono);
        println!("2x2 toy {} vs monolithic: relative max gap {gap:.2e}", variant.name());
        assert!(
            gap <= 1e-5,
            "2x2 toy: {} deviates from the monolithic solve by {gap:.2e}",
            variant.name()
        );
    }
}

/// Reduced interface rhs by dense interior elimination.
fn dense_reduced_rhs(op: &PatchOperators) -> Vec<f64> {
    if op.f_interior.is_empty() {
        return op.f_interface.clone();
    }
    let kii = op.k_ii.to_dense();
    let xi = kii
        .lu()
        .solve(&DVector::from_column_slice(&op.f_interior))
        .expect("interior block solve");
    let coupled = op.k_bi.matvec(xi.as_slice());
    op.f_interface.iter().zip(&coupled).map(|(&f, &c)| f - c).collect()
}

/// Local coarse matrix by dense constrained solves: entry (i, j) is the
/// energy product of the basis solutions for unit constraint values.
fn dense_primal_energy(op: &PatchOperators) -> DMatrix<f64> {
    let n = op.k_active.nrows();
    let nc = op.c_active.nrows();
    let dim = n + nc;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&op.k_active.to_dense());
    let cd = op.c_active.to_dense();
    kkt.view_mut((n, 0), (nc, n)).copy_from(&cd);
    kkt.view_mut((0, n), (n, nc)).copy_from(&cd.transpose());
    let lu = kkt.lu();

    let mut w = DMatrix::<f64>::zeros(n, nc);
    for j in 0..nc {
        let mut b = DVector::<f64>::zeros(dim);
        b[n + j] = 1.0;
        let sol = lu.solve(&b).expect("dense constrained solve");
        w.column_mut(j).copy_from(&sol.rows(0, n));
    }
    w.transpose() * op.k_active.to_dense() * w
}

/// Dense oracle for the dual operator: block-diagonal active stiffness
/// with chained primal difference constraints, factored directly. Column
/// j is the interface jump of the constrained solve against multiplier
/// load e_j.
fn dense_dual_operator(part: &Partition, ops: &[PatchOperators]) -> DMatrix<f64> {
    let mut a_off = vec![0usize];
    for op in ops {
        a_off.push(a_off.last().unwrap() + op.k_active.nrows());
    }
    let n = *a_off.last().unwrap();

    let mut owners: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::new(); part.num_primal()];
    for (k, list) in part.constraints.iter().enumerate() {
        for lc in list {
            let row: Vec<(usize, f64)> = lc
                .terms
                .iter()
                .map(|&(full, wgt)| {
                    let pos = part.patches[k].active_position(full).expect("active constraint dof");
                    (a_off[k] + pos, wgt)
                })
                .collect();
            owners[lc.primal_index].push(row);
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for group in &owners {
        for pair in group.windows(2) {
            let mut row = pair[0].clone();
            row.extend(pair[1].iter().map(|&(c, wgt)| (c, -wgt)));
            rows.push(row);
        }
    }

    let dim = n + rows.len();
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    for (k, op) in ops.iter().enumerate() {
        let na = op.k_active.nrows();
        kkt.view_mut((a_off[k], a_off[k]), (na, na)).copy_from(&op.k_active.to_dense());
    }
    for (i, row) in rows.iter().enumerate() {
        for &(c, wgt) in row {
            kkt[(n + i, c)] += wgt;
            kkt[(c, n + i)] += wgt;
        }
    }
    let lu = kkt.lu();

    let jump = part.jump_matrix();
    let m = jump.nrows();
    let mut w_to_col = Vec::new();
    for (k, pd) in part.patches.iter().enumerate() {
        for &pos in &pd.interface_pos_in_active {
            w_to_col.push(a_off[k] + pos);
        }
    }

    let mut f_dense = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let lifted = jump.matvec_transpose(&e);
        let mut b = DVector::<f64>::zeros(dim);
        for (t, &col) in w_to_col.iter().enumerate() {
            b[col] += lifted[t];
        }
        let sol = lu.solve(&b).expect("dense saddle solve");
        let traces: Vec<f64> = w_to_col.iter().map(|&c| sol[c]).collect();
        let col = jump.matvec(&traces);
        f_dense.column_mut(j).copy_from_slice(&col);
    }
    f_dense
}

/// Dense image of the dual operator as applied by the solver.
fn applied_dual_operator(sys: &DualSystem, m: usize) -> DMatrix<f64> {
    let mut f = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let col = sys.apply_f(&e).expect("dual operator apply");
        f.column_mut(j).copy_from_slice(&col);
    }
    f
}

#[test]
fn criterion_07_small_instance_oracles() {
    let opts = SolveOptions::default();
    for (nt, nr) in [(2usize, 1usize), (2, 2)] {
        let mp = toy(nt, nr, 2, 2);
        let part = Partition::build(&mp).expect("partition");
        let counters = Counters::default();
        let ops = build_ops(&mp, &part, Variant::DirectDirect, &opts, &counters);

        let mut worst = 0.0f64;
        for op in &ops {
            let oracle = dense_reduced_rhs(op);
            let scale = oracle.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            for (o, g) in oracle.iter().zip(&op.g_tilde) {
                worst = worst.max((o - g).abs() / scale);
            }
        }
        println!("{nt}x{nr} toy reduced rhs vs dense elimination: {worst:.2e}");
        assert!(worst <= 1e-7, "{nt}x{nr} toy: reduced rhs gap {worst:.2e}");

        let mut worst = 0.0f64;
        for op in &ops {
            let oracle = dense_primal_energy(op);
            let gap = (&oracle - &op.s_pp_local).amax() / oracle.amax();
            worst = worst.max(gap);
        }
        println!("{nt}x{nr} toy coarse matrix vs dense energies: {worst:.2e}");
        assert!(worst <= 1e-7, "{nt}x{nr} toy: coarse matrix gap {worst:.2e}");

        let sys = DualSystem::assemble(&part, &ops, &opts, &counters).expect("dual system");
        let m = part.num_multipliers;
        let oracle = dense_dual_operator(&part, &ops);
        let actual = applied_dual_operator(&sys, m);
        let gap = (&oracle - &actual).amax() / oracle.amax();
        println!("{nt}x{nr} toy dual operator ({m} multipliers) vs dense: {gap:.2e}");
        assert!(gap <= 1e-7, "{nt}x{nr} toy: dual operator gap {gap:.2e}");
    }

    // Constrained saddle solvers against one dense augmented factorization.
    let mp = MultiPatch::quarter_annulus(1, 1, R0, R1, 2, 8);
    let patch = &mp.patches[0];
    let part = Partition::build(&mp).expect("partition");
    let pd = &part.patches[0];
    let k_full = assemble_stiffness(patch);
    let k_act = k_full.submatrix(&pd.active, &pd.active);
    let n = k_act.nrows();
    let nc = 2usize;
    assert!(n + nc <= 200, "augmented system dimension {} too large", n + nc);

    // Mean value and a ramp: two independent full-rank constraint rows.
    let mut trips = Vec::new();
    for j in 0..n {
        trips.push((0, j, 1.0 / n as f64));
        trips.push((1, j, (j + 1) as f64 / n as f64));
    }
    let c = SparseMatrix::from_triplets(nc, n, &trips).expect("constraint rows");

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE55);
    let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let dim = n + nc;
    let mut aug = DMatrix::<f64>::zeros(dim, dim);
    aug.view_mut((0, 0), (n, n)).copy_from(&k_act.to_dense());
    let cd = c.to_dense();
    aug.view_mut((n, 0), (nc, n)).copy_from(&cd);
    aug.view_mut((0, n), (n, nc)).copy_from(&cd.transpose());
    let mut b = DVector::<f64>::zeros(dim);
    b.rows_mut(0, n).copy_from_slice(&f);
    b.rows_mut(n, nc).copy_from_slice(&g);
    let reference = aug.lu().solve(&b).expect("dense augmented solve");
    let ref_norm = reference.norm();

    let mass = parameter_mass(patch).submatrix(&pd.active, &pd.active);
    let reg = k_act.add_scaled(opts.regularization, &mass).expect("regularized matrix");
    let hier = build_patch_hierarchy(&patch.basis1, &patch.basis2, reg, pd.dirichlet_sides)
        .expect("hierarchy");
    let cycles = opts.neumann_cycles;

    let above = calibrate_spd_order(
        &k_act,
        &hier.preconditioner(cycles),
        OrderDirection::Above,
        opts.margin,
        opts.seed,
    )
    .expect("hull calibration");
    let a_hat_inv = ScaledOperator { inner: hier.preconditioner(cycles), scale: 1.0 / above };
    let prec = SzPreconditioner::build(&c, &a_hat_inv, 0.99).expect("saddle preconditioner");
    let sol = sz_pcg(&k_act, &c, &a_hat_inv, &prec, &f, &g, 1e-12, 500).expect("sz solve");
    let gap = solution_gap(&sol.x, &sol.y, &reference, n) / ref_norm;
    println!("constrained solver vs dense factorization ({dim} unknowns): {gap:.2e} in {} iterations", sol.report.iterations);
    assert!(gap <= 1e-8, "constrained solver gap {gap:.2e}");

    let below = calibrate_spd_order(
        &k_act,
        &hier.preconditioner(cycles),
        OrderDirection::Below,
        opts.margin,
        opts.seed,
    )
    .expect("floor calibration");
    let a0_inv = ScaledOperator { inner: hier.preconditioner(cycles), scale: 1.0 / below };
    let kd = k_act.to_dense();
    let kchol = kd.cholesky().expect("SPD active block");
    let schur = &cd * kchol.solve(&cd.transpose());
    let schur_inv = schur.try_inverse().expect("nonsingular dual Schur block");
    let s0_inv = FnOperator::new(nc, move |x, y| {
        let out = &schur_inv * DVector::from_column_slice(x);
        y.copy_from_slice(out.as_slice());
    });
    let sol = bpcg(&k_act, &c, &a0_inv, &s0_inv, &f, &g, 1e-12, 500).expect("transformed solve");
    let gap = solution_gap(&sol.x, &sol.y, &reference, n) / ref_norm;
    println!("transformed saddle solver vs dense factorization ({dim} unknowns): {gap:.2e} in {} iterations", sol.report.iterations);
    assert!(gap <= 1e-8, "transformed saddle solver gap {gap:.2e}");
}

fn solution_gap(x: &[f64], y: &[f64], reference: &DVector<f64>, n: usize) -> f64 {
    let mut s = 0.0;
    for (i, &v) in x.iter().enumerate() {
        s += (v - reference[i]) * (v - reference[i]);
    }
    for (j, &v) in y.iter().enumerate() {
        s += (v - reference[n + j]) * (v - reference[n + j]);
    }
    s.sqrt()
}

/// Identities of the energy-minimizing basis on one patch. Returns the
/// worst gaps for: C phi = I, S-orthogonality against the constraint
/// kernel, the coarse matrix against phi^T S phi, and idempotence of the
/// interpolation projection phi C.
fn basis_identity_gaps(op: &PatchOperators) -> (f64, f64, f64, f64) {
    let nb = op.phi.nrows();
    let nc = op.phi.ncols();
    let cd = op.c_iface.to_dense();

    let mut interp = 0.0f64;
    let mut s_phi = DMatrix::<f64>::zeros(nb, nc);
    for j in 0..nc {
        let col: Vec<f64> = op.phi.column(j).iter().cloned().collect();
        let cv = op.c_iface.matvec(&col);
        for (i, &v) in cv.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            interp = interp.max((v - want).abs());
        }
        s_phi.column_mut(j).copy_from_slice(&op.schur_apply(&col));
    }

    // Kernel projector I - C^T (C C^T)^-1 C; rows of C are independent.
    let cct = &cd * cd.transpose();
    let cct_chol = cct.cholesky().expect("full row rank constraints");
    let mut orth = 0.0f64;
    for j in 0..nc {
        let v = s_phi.column(j).clone_owned();
        let proj = &v - cd.transpose() * cct_chol.solve(&(&cd * &v));
        orth = orth.max(proj.amax() / v.norm().max(1e-300));
    }

    let gram = op.phi.transpose() * &s_phi;
    let coarse = (&gram - &op.s_pp_local).amax() / op.s_pp_local.amax().max(1e-300);

    let p = &op.phi * &cd;
    let idem = (&p * &p - &p).amax() / p.amax().max(1.0);

    (interp, orth, coarse, idem)
}

#[test]
fn criterion_08_algebraic_invariants() {
    // Spline partition of unity and constant reproduction under dyadic
    // refinement. Row sums of the prolongation are dyadic rationals, so
    // constants survive bit-exactly.
    for degree in [1usize, 2, 3] {
        for spans in [4usize, 8] {
            let kv = KnotVector::uniform_open(degree, spans);
            for s in 0..=200 {
                let t = s as f64 / 200.0;
                let (_, vals) = kv.eval(t);
                let sum: f64 = vals.iter().sum();
                assert!(
                    (sum - 1.0).abs() <= 1e-13,
                    "degree {degree}, {spans} spans: basis sums to {sum} at t={t}"
                );
            }
            let fine = kv.refine_dyadic();
            let p = prolongation_1d(&kv, &fine).expect("prolongation");
            let ones = vec![1.0; p.ncols()];
            for (i, &v) in p.matvec(&ones).iter().enumerate() {
                assert!(v == 1.0, "degree {degree}: prolongation row {i} sums to {v}");
            }
        }
    }
    println!("partition of unity and constant reproduction hold");

    // Coarse operators are exact restriction-prolongation products.
    let mp = MultiPatch::quarter_annulus(1, 1, R0, R1, 2, 16);
    let patch = &mp.patches[0];
    let part = Partition::build(&mp).expect("partition");
    let pd = &part.patches[0];
    let k_act = assemble_stiffness(patch).submatrix(&pd.active, &pd.active);
    let hier = build_patch_hierarchy(&patch.basis1, &patch.basis2, k_act, pd.dirichlet_sides)
        .expect("hierarchy");
    let mut worst = 0.0f64;
    for l in 0..hier.num_levels() - 1 {
        let p = hier.prolongation(l).to_dense();
        let fine = hier.level_matrix(l + 1).to_dense();
        let coarse = hier.level_matrix(l).to_dense();
        let gap = (p.transpose() * fine * p - &coarse).amax() / coarse.amax();
        worst = worst.max(gap);
    }
    println!("coarse operator identity over {} levels: {worst:.2e}", hier.num_levels());
    assert!(worst <= 1e-12, "coarse operator gap {worst:.2e}");

    // V-cycle symmetry and level-independent contraction.
    for level in 2..=5u32 {
        let mp = MultiPatch::quarter_annulus(1, 1, R0, R1, 2, 1usize << level);
        let patch = &mp.patches[0];
        let part = Partition::build(&mp).expect("partition");
        let pd = &part.patches[0];
        let k_act = assemble_stiffness(patch).submatrix(&pd.active, &pd.active);
        let n = k_act.nrows();
        let hier =
            build_patch_hierarchy(&patch.basis1, &patch.basis2, k_act.clone(), pd.dirichlet_sides)
                .expect("hierarchy");
        let pre = hier.preconditioner(1);

        let mut m = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            m.column_mut(j).copy_from_slice(&pre.apply(&e));
        }
        let sym = (&m - m.transpose()).amax() / m.amax();
        assert!(sym <= 1e-10, "level {level}: cycle asymmetry {sym:.2e}");

        let mut rng = ChaCha8Rng::seed_from_u64(level as u64);
        let mut z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rho = 0.0f64;
        for _ in 0..120 {
            let az = k_act.matvec(&z);
            let gz = pre.apply(&az);
            for (zi, gi) in z.iter_mut().zip(&gz) {
                *zi -= gi;
            }
            let norm = dot(&z, &z).sqrt();
            rho = norm;
            for zi in z.iter_mut() {
                *zi /= norm;
            }
        }
        println!("level {level}: cycle asymmetry {sym:.2e}, error contraction {rho:.3}");
        assert!(rho < 0.5, "level {level}: V-cycle contraction {rho:.3} not below 0.5");
    }

    // Basis identities on every patch of the 2x2 toy.
    let opts = SolveOptions::default();
    let mp = toy(2, 2, 2, 3);
    let part = Partition::build(&mp).expect("partition");
    let counters = Counters::default();
    let ops = build_ops(&mp, &part, Variant::DirectDirect, &opts, &counters);
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for op in &ops {
        let (interp, orth, coarse, idem) = basis_identity_gaps(op);
        worst = (
            worst.0.max(interp),
            worst.1.max(orth),
            worst.2.max(coarse),
            worst.3.max(idem),
        );
    }
    println!(
        "basis identities on the 2x2 toy: interpolation {:.2e}, orthogonality {:.2e}, coarse matrix {:.2e}, idempotence {:.2e}",
        worst.0, worst.1, worst.2, worst.3
    );
    assert!(worst.0 <= 1e-8, "C phi = I violated by {:.2e}", worst.0);
    assert!(worst.1 <= 1e-7, "S-orthogonality violated by {:.2e}", worst.1);
    assert!(worst.2 <= 1e-7, "coarse matrix identity violated by {:.2e}", worst.2);
    assert!(worst.3 <= 1e-10, "projection idempotence violated by {:.2e}", worst.3);

    // Symmetry of the dual operator on the same toy.
    let sys = DualSystem::assemble(&part, &ops, &opts, &counters).expect("dual system");
    let f_dense = applied_dual_operator(&sys, part.num_multipliers);
    let sym = (&f_dense - f_dense.transpose()).amax() / f_dense.amax();
    println!("dual operator asymmetry: {sym:.2e}");
    assert!(sym <= 1e-8, "dual operator asymmetry {sym:.2e}");

    // Floating patches reproduce constants through the primal basis.
    let mp8 = benchmark(2);
    let part8 = Partition::build(&mp8).expect("partition");
    let counters8 = Counters::default();
    let ops8 = build_ops(&mp8, &part8, Variant::DirectDirect, &opts, &counters8);
    let mut saw_floating = false;
    let mut pou = 0.0f64;
    for op in ops8.iter().filter(|op| op.floating) {
        saw_floating = true;
        let ones = DVector::from_element(op.phi.ncols(), 1.0);
        let v = &op.phi * ones;
        for &x in v.iter() {
            pou = pou.max((x - 1.0).abs());
        }
        let (interp, orth, coarse, idem) = basis_identity_gaps(op);
        assert!(interp <= 1e-8 && orth <= 1e-7 && coarse <= 1e-7 && idem <= 1e-10);
    }
    assert!(saw_floating, "benchmark domain has no floating patch");
    println!("floating-patch basis partition of unity: {pou:.2e}");
    assert!(pou <= 1e-7, "floating-patch basis misses constants by {pou:.2e}");
}

#[test]
fn criterion_09_manufactured_solution_convergence() {
    let opts = SolveOptions { outer_tol: 1e-10, ..SolveOptions::default() };
    for degree in [1usize, 2] {
        let mut errors = Vec::new();
        for level in 2..=5u32 {
            let mp = toy(2, 2, degree, level);
            let sol = solve(&mp, &rhs, Variant::DirectDirect, &opts).expect("toy solve");
            let (mut err2, mut norm2) = (0.0, 0.0);
            for (k, patch) in mp.patches.iter().enumerate() {
                let (e, n) = l2_error(patch, &sol.per_patch[k], exact);
                err2 += e;
                norm2 += n;
            }
            errors.push((err2 / norm2).sqrt());
        }
        let rates: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let shown: Vec<String> = errors.iter().map(|e| format!("{e:.3e}")).collect();
        println!("degree {degree}: relative errors {shown:?}, rates {rates:.2?}");
        let want = degree as f64 + 0.7;
        for (i, &r) in rates.iter().enumerate().skip(1) {
            assert!(
                r >= want,
                "degree {degree}: rate {r:.2} at refinement step {} below {want}",
                i + 1
            );
        }
    }
}

#[test]
fn criterion_10_preconditioner_ordering_and_local_convergence() {
    let opts = SolveOptions::default();
    for level in 2..=5u32 {
        let mp = benchmark(level);
        let part = Partition::build(&mp).expect("partition");
        let counters = Counters::default();
        let mut worst_its = 0usize;
        let mut min_ratio = f64::INFINITY;
        for (k, patch) in mp.patches.iter().enumerate() {
            let k_full = assemble_stiffness(patch);
            let f_full = assemble_load(patch, rhs);
            let op = PatchOperators::build(
                patch,
                k,
                &part.patches[k],
                &part,
                &k_full,
                &f_full,
                Variant::MgMg,
                &opts,
                &counters,
            )
            .expect("patch operators");
            let pd = &part.patches[k];
            let n = op.k_active.nrows();
            let nc = op.c_active.nrows();

            let mut rng = ChaCha8Rng::seed_from_u64(1000 * level as u64 + k as u64);
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let local = op.local.as_ref().expect("constrained solver");
            let (_, _, its) = local.solve(&r, &g, 1e-12, 200).expect("tight local solve");
            worst_its = worst_its.max(its);

            // The calibrated hull, rebuilt from its recipe: regularized
            // hierarchy cycles scaled to sit above the active stiffness.
            let mass = parameter_mass(patch).submatrix(&pd.active, &pd.active);
            let reg =
                op.k_active.add_scaled(opts.regularization, &mass).expect("regularized matrix");
            let hier =
                build_patch_hierarchy(&patch.basis1, &patch.basis2, reg, pd.dirichlet_sides)
                    .expect("hierarchy");
            let hat = calibrate_spd_order(
                &op.k_active,
                &hier.preconditioner(opts.neumann_cycles),
                OrderDirection::Above,
                opts.margin,
                opts.seed.wrapping_add(k as u64),
            )
            .expect("hull calibration");
            let ghat = ScaledOperator {
                inner: hier.preconditioner(opts.neumann_cycles),
                scale: 1.0 / hat,
            };
            for _ in 0..100 {
                let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = ghat.apply(&z);
                let above = dot(&z, &y);
                let below = dot(&y, &op.k_active.matvec(&y));
                assert!(
                    above > below,
                    "level {level} patch {k}: hull ordering fails, {above:.6e} <= {below:.6e}"
                );
                min_ratio = min_ratio.min(above / below);
            }
        }
        println!(
            "level {level}: worst constrained solve {worst_its} iterations, hull ordering margin {:.4}",
            min_ratio
        );
        assert!(worst_its <= 200);
    }
}

fn _assert_patch_type(p: &Patch) -> (usize, usize) {
    p.dims()
}
