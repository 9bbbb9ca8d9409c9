//! Neumann eigenpairs of a rectangle and the discrete cosine round trip.

use leno::basis::{Domain, EigenBasis};
use ndarray::Array3;

fn main() -> leno::Result<()> {
    let domain = Domain::rectangle(2.0, 1.0, 32, 16)?;
    let basis = EigenBasis::new(&domain, 8)?;
    println!("lowest eigenpairs on [0, 2] x [0, 1]:");
    for m in basis.modes() {
        println!("  index {:?}  mu = {:.6}", m.index, m.eigenvalue);
    }

    // A smooth two-channel field, analyzed with every resolvable mode.
    let field = Array3::from_shape_fn((2, 16, 32), |(c, j, i)| {
        let [x, y] = domain.cell_center(i, j);
        (1.0 + c as f64) * (x * y).sin() + (3.0 * x).cos()
    });
    let full = EigenBasis::full(&domain)?;
    let coeffs = full.forward(field.view())?;
    let back = full.inverse(&coeffs)?;
    let err = back.iter().zip(&field).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round trip with {} modes: max error {err:.2e}", full.len());

    // Truncation keeps the low-frequency content.
    for n in [4, 16, 64, 256] {
        let b = EigenBasis::new(&domain, n)?;
        let approx = b.inverse(&b.forward(field.view())?)?;
        let rms = (approx.iter().zip(&field).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / field.len() as f64).sqrt();
        println!("  N = {n:>3}: rms truncation error {rms:.3e}");
    }
    Ok(())
}
