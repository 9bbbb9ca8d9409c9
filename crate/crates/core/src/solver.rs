//! Spectral IMEX reference solver and randomized initial conditions.
//!
//! One step is `U* = U + dt R(x, U)` on the grid, followed by exact
//! propagation of every cosine mode through `exp(-dt (d μ + λ))`.

use ndarray::{Array2, Array3, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{axis_eigenvalue, CosineTransform, Domain, GridField};
use crate::error::{Error, Result};
use crate::field::{check_nodes, SpaceTimeField};
use crate::gm::{equilibrium, ReactionSystem};
use crate::green::decay;

/// Amplitude of the Gaussian perturbation of the equilibrium.
pub const DEFAULT_NOISE: f64 = 0.05;
/// Values below this count as a positivity violation.
pub const POSITIVITY_TOLERANCE: f64 = -1e-6;

/// Standard normal sample addressed by `(seed, stream, index)`.
///
/// Uses a ChaCha block keyed by `seed`, stream `stream`, positioned at the
/// word `4 * index`, then Box–Muller on the two 64-bit draws found there.
pub fn standard_normal(seed: u64, stream: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(4 * index as u128);
    let unit = |x: u64| ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u1 = unit(rng.next_u64());
    let u2 = unit(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Seed of trajectory `index` derived from a base seed (splitmix64 finalizer).
pub fn trajectory_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `u* + noise ξ_u`, `v* + noise ξ_v` with `ξ` keyed by seed, regime, channel, cell.
pub fn initial_condition(
    domain: &Domain,
    s_eq: f64,
    regime_index: usize,
    seed: u64,
    noise: f64,
) -> Result<GridField> {
    if !(noise >= 0.0) {
        return Err(Error::Parameter(format!("noise amplitude must be >= 0, got {noise}")));
    }
    let (u_eq, v_eq, _) = equilibrium(s_eq)?;
    let nx = domain.nx();
    Ok(Array3::from_shape_fn((2, domain.ny(), nx), |(c, j, i)| {
        let base = if c == 0 { u_eq } else { v_eq };
        if noise == 0.0 {
            return base;
        }
        let stream = 2 * regime_index as u64 + c as u64;
        base + noise * standard_normal(seed, stream, (j * nx + i) as u64)
    }))
}

/// A simulated trajectory and its positivity monitor.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub field: SpaceTimeField,
    pub min_value: f64,
    pub positivity_warning: bool,
}

/// Step counts reaching each store time; `dt` must divide every gap.
fn step_counts(dt: f64, store_times: &[f64]) -> Result<Vec<usize>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    check_nodes(store_times)?;
    store_times
        .iter()
        .map(|&t| {
            let n = (t / dt).round();
            if (n * dt - t).abs() > 1e-9 * t.max(1.0) {
                Err(Error::Parameter(format!(
                    "time step {dt} does not divide store time {t}"
                )))
            } else {
                Ok(n as usize)
            }
        })
        .collect()
}

/// Exact per-mode propagator over one step.
struct Propagator {
    transform: CosineTransform,
    factors: [Array2<f64>; 2],
}

impl Propagator {
    fn new(domain: &Domain, system: &ReactionSystem, dt: f64) -> Result<Self> {
        let transform = CosineTransform::new(domain, domain.nx(), domain.ny())?;
        let factors = [0, 1].map(|c| {
            Array2::from_shape_fn((domain.ny(), domain.nx()), |(my, mx)| {
                let mu = axis_eigenvalue(mx, domain.lx())
                    + if domain.dim() == 2 { axis_eigenvalue(my, domain.ly()) } else { 0.0 };
                decay(system.linear.diffusivity[c] * mu + system.linear.decay[c], dt)
            })
        });
        Ok(Self { transform, factors })
    }

    fn apply(&self, state: &GridField) -> GridField {
        let mut coeffs = self.transform.analyze(state.view());
        for (c, mut block) in coeffs.axis_iter_mut(Axis(0)).enumerate() {
            block *= &self.factors[c];
        }
        self.transform.synthesize(coeffs.view())
    }
}

/// Cell-center coordinates in row-major order.
pub fn cell_centers(domain: &Domain) -> Vec<[f64; 2]> {
    (0..domain.ny())
        .flat_map(|j| (0..domain.nx()).map(move |i| (i, j)))
        .map(|(i, j)| domain.cell_center(i, j))
        .collect()
}

/// Adds `dt R(x, U)` to `state` in place.
fn explicit_reaction(
    state: &mut GridField,
    domain: &Domain,
    centers: &[[f64; 2]],
    system: &ReactionSystem,
    dt: f64,
) {
    let nx = domain.nx();
    let dim = domain.dim();
    for (flat, p) in centers.iter().enumerate() {
        let (j, i) = (flat / nx, flat % nx);
        let x = &p[..dim];
        let r = system.reaction.eval(x, state[[0, j, i]], state[[1, j, i]]);
        state[[0, j, i]] += dt * r[0];
        state[[1, j, i]] += dt * r[1];
    }
}

/// First-order IMEX integration recording the state at `store_times`.
pub fn simulate(
    ic: &GridField,
    domain: &Domain,
    system: &ReactionSystem,
    dt: f64,
    store_times: &[f64],
) -> Result<Simulation> {
    domain.check_field(&ic.view())?;
    if ic.dim().0 != 2 {
        return Err(crate::error::dim_err("2 channels", ic.dim().0));
    }
    let counts = step_counts(dt, store_times)?;
    let propagator = Propagator::new(domain, system, dt)?;
    let centers = cell_centers(domain);

    let mut out = SpaceTimeField::zeros(domain, store_times.to_vec(), 2)?;
    let mut state = ic.clone();
    let mut min_value = state.iter().copied().fold(f64::INFINITY, f64::min);
    let mut step = 0usize;
    for (k, &target) in counts.iter().enumerate() {
        while step < target {
            explicit_reaction(&mut state, domain, &centers, system, dt);
            state = propagator.apply(&state);
            step += 1;
            let mut finite = true;
            for &v in state.iter() {
                finite &= v.is_finite();
                min_value = min_value.min(v);
            }
            if !finite {
                return Err(Error::Divergence {
                    step,
                    time: step as f64 * dt,
                });
            }
        }
        out.snapshot_mut(k).assign(&state);
    }
    Ok(Simulation {
        field: out,
        min_value,
        positivity_warning: min_value < POSITIVITY_TOLERANCE,
    })
}

/// Richardson diagnostics from runs at `dt`, `dt/2`, `dt/4`.
#[derive(Clone, Copy, Debug)]
pub struct RichardsonEstimate {
    /// `‖U_dt − U_{dt/2}‖`.
    pub coarse_gap: f64,
    /// `‖U_{dt/2} − U_{dt/4}‖`.
    pub fine_gap: f64,
}

impl RichardsonEstimate {
    /// Observed halving ratio; about 2 for a first-order scheme.
    pub fn ratio(&self) -> f64 {
        self.coarse_gap / self.fine_gap
    }

    /// Error estimate of the `dt/4` solution assuming first order.
    pub fn error_estimate(&self) -> f64 {
        self.fine_gap
    }

    /// Runs the three step sizes and measures gaps with `norm` of a difference.
    pub fn measure(
        ic: &GridField,
        domain: &Domain,
        system: &ReactionSystem,
        dt: f64,
        store_times: &[f64],
        norm: impl Fn(&SpaceTimeField) -> f64,
    ) -> Result<(Self, SpaceTimeField)> {
        let a = simulate(ic, domain, system, dt, store_times)?.field;
        let b = simulate(ic, domain, system, dt / 2.0, store_times)?.field;
        let c = simulate(ic, domain, system, dt / 4.0, store_times)?.field;
        let est = Self {
            coarse_gap: norm(&a.difference(&b)?),
            fine_gap: norm(&b.difference(&c)?),
        };
        Ok((est, c))
    }
}
