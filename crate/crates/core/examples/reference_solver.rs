//! IMEX simulation of the saturated system from a perturbed equilibrium,
//! with a Richardson estimate of the time-stepping error.

use leno::basis::Domain;
use leno::gm::{ReactionSystem, SaturatedGMParams};
use leno::picard::weighted_norm;
use leno::solver::{initial_condition, simulate, RichardsonEstimate};
use ndarray::Axis;

fn main() -> leno::Result<()> {
    let domain = Domain::rectangle(100.0, 100.0, 32, 32)?;
    let s_eq = 0.708;
    let system = ReactionSystem::saturated(SaturatedGMParams::new(s_eq)?, 1)?;
    let ic = initial_condition(&domain, s_eq, 0, 7, 0.05)?;
    let times: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
    let sim = simulate(&ic, &domain, &system, 0.1, &times)?;
    println!("t      min u    max u    spread of u");
    for (k, t) in sim.field.times().iter().enumerate() {
        let u = sim.field.snapshot(k).index_axis(Axis(0), 0).to_owned();
        let (lo, hi) = u.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        println!("{t:<6} {lo:.4}   {hi:.4}   {:.4}", hi - lo);
    }
    println!("minimum over the run {:.4}, positivity warning {}", sim.min_value, sim.positivity_warning);

    let short: Vec<f64> = (0..=4).map(|k| 0.5 * k as f64).collect();
    let (est, _) = RichardsonEstimate::measure(&ic, &domain, &system, 0.05, &short, |d| weighted_norm(d, 0.75))?;
    println!("Richardson: ratio {:.3}, error estimate {:.3e}", est.ratio(), est.error_estimate());
    Ok(())
}
