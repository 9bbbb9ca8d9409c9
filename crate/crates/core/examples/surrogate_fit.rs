//! Fits a ReLU network to the clipped reaction on its box.

use leno::gm::{ClipBox, ClippedGM, GMParams, Nonlinearity};
use leno::nn::{fit_surrogate, SurrogateConfig};

fn main() -> leno::Result<()> {
    let clip = ClipBox::new([0.7, 0.7], [1.4, 1.4])?;
    let target = ClippedGM {
        params: GMParams::classical(0.1),
        clip,
    };
    let mut cfg = SurrogateConfig::new(3);
    cfg.train.epochs = 80;
    cfg.n_samples = 4096;
    cfg.grid_per_axis = 24;
    cfg.schedule = vec![vec![32, 32], vec![64, 64]];
    let fit = fit_surrogate(&target, &clip, &[1.0], 0.05, &cfg)?;
    for s in &fit.stages {
        println!("hidden {:?}: {} parameters, sup error {:.4e}", s.hidden, s.n_params, s.achieved);
    }
    println!("target 0.05 met: {}", fit.target_met);
    let (x, u, v) = ([0.5], 1.1, 0.9);
    let exact = target.eval(&x, u, v);
    let approx = fit.surrogate.eval(&x, u, v);
    println!("G(0.5, {u}, {v}) = {exact:?}, surrogate {approx:?}");
    Ok(())
}
