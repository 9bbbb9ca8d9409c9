//! Structural checks of the generalized reaction, the clipped variant and
//! the saturated equilibria.

use leno::gm::{
    equilibrium, lipschitz_bound, reaction_saturated, validate_assumptions, ClipBox, ClippedGM, GMParams,
    SaturatedGMParams, SAT_REGIMES,
};

fn main() -> leno::Result<()> {
    let classical = GMParams::classical(0.1);
    println!("{}", validate_assumptions(&classical, 0.01, 0.1, &[]));

    let clip = ClipBox::new([0.7, 0.7], [1.4, 1.4])?;
    let clipped = ClippedGM { params: classical, clip };
    println!("Lipschitz bound of the clipped reaction on {clip:?}: {:.4}", lipschitz_bound(&clipped, &clip, &[]));

    for s in SAT_REGIMES {
        let (u, v, p) = equilibrium(s)?;
        let [fu, fv] = reaction_saturated(u, v, &SaturatedGMParams::new(s)?);
        println!("s = {s}: (u*, v*) = ({u:.4}, {v:.4}), p_sat = {p:.5}, residual ({fu:.1e}, {fv:.1e})");
    }
    Ok(())
}
