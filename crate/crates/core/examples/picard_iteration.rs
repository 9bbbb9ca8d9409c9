//! Picard iteration of the clipped classical system on a validated horizon.

use leno::experiments::ClippedProblem;

fn main() -> leno::Result<()> {
    let problem = ClippedProblem::default();
    let horizon = problem.horizon(0.5, 65)?;
    println!(
        "T0 = {} after {} halvings (Lipschitz bound {:.4}, semigroup bound {:.4})",
        horizon.t0, horizon.halvings, horizon.lipschitz, horizon.c0
    );
    let (solution, trace) = problem.solve(horizon.t0, 65, 0.75, 12, 1e-14)?;
    let envelope = 2.0 * horizon.lipschitz * horizon.t0;
    for w in trace.steps.windows(2) {
        println!(
            "k = {:>2}  eta = {:.3e}  ratio {:.3e}  envelope 2BT0/(k+1) = {:.3e}",
            w[1].k,
            w[1].eta,
            w[1].eta / w[0].eta,
            envelope / (w[0].k + 1) as f64
        );
    }
    println!("solution has {} nodes, max |U| = {:.4}", solution.n_times(), solution.max_abs());
    Ok(())
}
