//! Truncation error of the rank-N kernel against a high-rank reference,
//! and the fitted decay exponent.

use leno::basis::Domain;
use leno::green::{rank_error_sweep, GreenParams, RankSweepConfig};

fn main() -> leno::Result<()> {
    let domain = Domain::interval(1.0, 256)?;
    let params = GreenParams::new(0.01, 0.1, 1.0, 1.0, 256)?;
    for beta in [0.75, 0.5] {
        let cfg = RankSweepConfig {
            beta,
            ranks: vec![4, 8, 16, 32],
            n_ref: 256,
            t0: 0.5,
            times: None,
        };
        let report = rank_error_sweep(&domain, &params, &cfg)?;
        println!("beta = {beta}: fitted slope {:.3} (theory {:.3})", report.fitted_slope, report.slope_theory());
        for (n, e) in report.ranks.iter().zip(&report.errors_weighted) {
            println!("  N = {n:>3}  weighted error {e:.4e}");
        }
        if let Some(n) = report.rank_for(1e-2) {
            println!("  smallest swept rank with error <= 1e-2: {n}");
        }
    }
    Ok(())
}
