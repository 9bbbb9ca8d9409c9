//! Property tests of the numerical building blocks.

use leno::basis::{Domain, EigenBasis};
use leno::gm::ClipBox;
use leno::green::{semigroup_apply, ExpIntegrator};
use leno::harness::Config;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn field(nx: usize, ny: usize, seed: u64) -> Array3<f64> {
    // Deterministic pseudo-random values from a splitmix-style hash.
    Array3::from_shape_fn((2, ny, nx), |(c, j, i)| {
        let mut z = seed ^ ((c * 7919 + j * 104_729 + i) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn full_basis_round_trip(nx in 4usize..14, ny in 3usize..10, lx in 0.5f64..5.0, seed: u64) {
        // ny = 3 stands for the 1D case.
        let ny = if ny == 3 { 1 } else { ny };
        let d = if ny == 1 { Domain::interval(lx, nx).unwrap() } else { Domain::rectangle(lx, 1.3, nx, ny).unwrap() };
        let f = field(nx, ny, seed);
        let b = EigenBasis::full(&d).unwrap();
        let back = b.inverse(&b.forward(f.view()).unwrap()).unwrap();
        for (a, e) in back.iter().zip(&f) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn truncation_is_a_projection(n in 1usize..30, seed: u64) {
        let d = Domain::rectangle(1.0, 2.0, 6, 5).unwrap();
        let b = EigenBasis::new(&d, n).unwrap();
        let once = b.inverse(&b.forward(field(6, 5, seed).view()).unwrap()).unwrap();
        let twice = b.inverse(&b.forward(once.view()).unwrap()).unwrap();
        for (a, e) in once.iter().zip(&twice) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn semigroup_never_grows_coefficients(t in 0.0f64..5.0, d in 0.0f64..2.0, lambda in 0.0f64..2.0, seed: u64) {
        let dom = Domain::rectangle(1.0, 1.0, 6, 6).unwrap();
        let b = EigenBasis::new(&dom, 20).unwrap();
        let c = b.forward(field(6, 6, seed).view()).unwrap();
        let out = semigroup_apply(&c, &b, t, d, lambda).unwrap();
        for (a, e) in out.coeffs.iter().zip(c.coeffs.iter()) {
            prop_assert!(a.abs() <= e.abs());
        }
    }

    #[test]
    fn duhamel_is_linear_and_monotone(rate in 0.0f64..50.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let times: Vec<f64> = (0..12).map(|k| 0.1 * k as f64 * (1.0 + 0.05 * k as f64)).collect();
        let integ = ExpIntegrator::new(&[rate], &times).unwrap();
        let f = Array2::from_shape_fn((times.len(), 1), |(n, _)| (n as f64).sin());
        let g = Array2::from_shape_fn((times.len(), 1), |(n, _)| 1.0 + n as f64);
        let lhs = integ.convolve(&(&f * a + &g * b));
        let rhs = integ.convolve(&f) * a + integ.convolve(&g) * b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        // Positive forcing integrates to a positive value.
        let pos = integ.convolve(&g);
        prop_assert!(pos.iter().skip(1).all(|&v| v > 0.0));
    }

    #[test]
    fn clamp_is_idempotent_and_inside(lo in 0.1f64..1.0, w in 0.1f64..2.0, u in -5.0f64..5.0, v in -5.0f64..5.0) {
        let clip = ClipBox::new([lo, lo], [lo + w, lo + 2.0 * w]).unwrap();
        let (a, b) = clip.clamp(u, v);
        prop_assert!(clip.contains(a, b));
        prop_assert_eq!(clip.clamp(a, b), (a, b));
    }

    #[test]
    fn config_hash_ignores_line_order(seed in 0u64..1000, t0 in 0.01f64..0.99, swap: bool) {
        let lines = [format!("seed = {seed}"), format!("rank.t0 = {t0}")];
        let text = if swap { format!("{}\n{}\n", lines[1], lines[0]) } else { format!("{}\n{}\n", lines[0], lines[1]) };
        let a = Config::parse(&text).unwrap();
        let b = Config::parse(&format!("{}\n{}\n", lines[0], lines[1])).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }
}
