use ietidp::geometry::{annulus_load, MultiPatch};
use ietidp::ieti::{solve, SolveOptions, Variant, VARIANTS};

fn main() {
    let opts = SolveOptions::default();
    for level in 2..=5u32 {
        let spans = 1usize << level;
        let mp = MultiPatch::quarter_annulus(8, 4, 1.0, 2.0, 2, spans);
        for variant in VARIANTS {
            let t = std::time::Instant::now();
            match solve(&mp, &|x, y| annulus_load(1.0, 2.0, x, y), variant, &opts) {
                Ok(sol) => println!(
                    "level {level} {variant:>7}: outer {:3}  res {:.2e}  conv {}  dofs {}  g {:.1} b {:.1} d {:.1}  [{:.2}s]",
                    sol.outer_iterations,
                    sol.residual,
                    sol.converged,
                    sol.distinct_dofs,
                    sol.stats.gtilde,
                    sol.stats.basis,
                    sol.stats.dual,
                    t.elapsed().as_secs_f64(),
                ),
                Err(e) => println!("level {level} {variant:>7}: ERROR {e}"),
            }
        }
    }
}
