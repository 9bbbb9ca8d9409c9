//! Reaction terms of the generalized Gierer–Meinhardt system.
//!
//! `g₁ = ρ₁ u^p / v^q + σ₁`, `g₂ = ρ₂ u^r / v^s + σ₂`. The clipped variant
//! replaces `(u, v)` by `(max(u, m̃₁), max(v, m̃₂))`, which makes it globally
//! Lipschitz. The saturated system used by the experiments lives here too.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::green::GreenParams;

type CoefFn = dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync;

/// A coefficient `ρ(x, u, v)` or source `σ(x)`; sources ignore `u, v`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Function(Arc<CoefFn>),
}

impl Coefficient {
    pub fn function(f: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: f64, v: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Function(f) => f(x, u, v),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Self::Constant(c)
    }
}

/// Exponents and coefficients of `g₁, g₂`.
#[derive(Clone, Debug)]
pub struct GMParams {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub rho: [Coefficient; 2],
    pub sigma: [Coefficient; 2],
}

impl GMParams {
    /// Constant-coefficient system.
    pub fn new(p: f64, q: f64, r: f64, s: f64, rho: [f64; 2], sigma: [f64; 2]) -> Self {
        Self {
            p,
            q,
            r,
            s,
            rho: rho.map(Coefficient::Constant),
            sigma: sigma.map(Coefficient::Constant),
        }
    }

    /// `p = 2, q = 1, r = 2, s = 0` with unit `ρ` and source `σ₁`.
    pub fn classical(sigma1: f64) -> Self {
        Self::new(2.0, 1.0, 2.0, 0.0, [1.0, 1.0], [sigma1, 0.0])
    }

    /// Net self-activation index `ϱ = (p - 1) / r`.
    pub fn self_activation(&self) -> f64 {
        (self.p - 1.0) / self.r
    }

    /// Net cross-inhibition index `γ = q / (s + 1)`.
    pub fn cross_inhibition(&self) -> f64 {
        self.q / (self.s + 1.0)
    }

    pub fn is_spatially_uniform(&self) -> bool {
        self.rho.iter().chain(&self.sigma).all(Coefficient::is_constant)
    }
}

/// Lower clipping bounds and the upper bounds of the trajectory box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl ClipBox {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        for c in 0..2 {
            if !(lo[c] > 0.0 && lo[c] < hi[c] && hi[c].is_finite()) {
                return Err(Error::Parameter(format!(
                    "clip box channel {c}: need 0 < lo < hi, got [{}, {}]",
                    lo[c], hi[c]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn clip_below(&self, u: f64, v: f64) -> (f64, f64) {
        (u.max(self.lo[0]), v.max(self.lo[1]))
    }

    #[inline]
    pub fn clamp(&self, u: f64, v: f64) -> (f64, f64) {
        (u.clamp(self.lo[0], self.hi[0]), v.clamp(self.lo[1], self.hi[1]))
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (self.lo[0]..=self.hi[0]).contains(&u) && (self.lo[1]..=self.hi[1]).contains(&v)
    }
}

impl Default for ClipBox {
    fn default() -> Self {
        Self {
            lo: [0.1, 0.1],
            hi: [10.0, 10.0],
        }
    }
}

/// `g₁, g₂` for positive arguments.
pub fn reaction_general(u: f64, v: f64, x: &[f64], params: &GMParams) -> Result<[f64; 2]> {
    if !(u > 0.0 && v > 0.0) {
        return Err(Error::Positivity { u, v });
    }
    Ok(raw_reaction(u, v, x, params))
}

#[inline]
fn raw_reaction(u: f64, v: f64, x: &[f64], params: &GMParams) -> [f64; 2] {
    let g1 = params.rho[0].eval(x, u, v) * u.powf(params.p) / v.powf(params.q)
        + params.sigma[0].eval(x, u, v);
    let g2 = params.rho[1].eval(x, u, v) * u.powf(params.r) / v.powf(params.s)
        + params.sigma[1].eval(x, u, v);
    [g1, g2]
}

/// `g̃ᵢ(x, u, v) = gᵢ(x, max(u, m̃₁), max(v, m̃₂))`; total on `ℝ²`.
#[inline]
pub fn reaction_clipped(u: f64, v: f64, x: &[f64], params: &GMParams, clip: &ClipBox) -> [f64; 2] {
    let (uc, vc) = clip.clip_below(u, v);
    raw_reaction(uc, vc, x, params)
}

/// Outcome of one checkable item of the coefficient assumptions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Assumed,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Assumed => "assumed",
        })
    }
}

#[derive(Clone, Debug)]
pub struct AssumptionCheck {
    pub item: char,
    pub condition: &'static str,
    pub status: CheckStatus,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub self_activation: f64,
    pub cross_inhibition: f64,
    pub items: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn status(&self, item: char) -> Option<CheckStatus> {
        self.items.iter().find(|c| c.item == item).map(|c| c.status)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "self-activation index = {}, cross-inhibition index = {}",
            self.self_activation, self.cross_inhibition
        )?;
        for c in &self.items {
            writeln!(f, "({}) {:<36} {}", c.item, c.condition, c.status)?;
        }
        Ok(())
    }
}

/// Checks items (a)–(e) and (g); (f) is recorded as assumed. Infima of
/// function-valued coefficients are taken over `probe_points` and a fixed
/// positive `(u, v)` lattice.
pub fn validate_assumptions(
    params: &GMParams,
    d1: f64,
    d2: f64,
    probe_points: &[Vec<f64>],
) -> ValidationReport {
    let rho_ = params.self_activation();
    let gamma = params.cross_inhibition();
    let status = |ok: bool| if ok { CheckStatus::Pass } else { CheckStatus::Fail };

    let lattice: Vec<f64> = (0..9).map(|k| 10f64.powf(-1.0 + 0.25 * k as f64)).collect();
    let origin = vec![0.0; 2];
    let points: Vec<&[f64]> = if probe_points.is_empty() {
        vec![origin.as_slice()]
    } else {
        probe_points.iter().map(Vec::as_slice).collect()
    };
    let inf_of = |c: &Coefficient| -> f64 {
        if let Coefficient::Constant(v) = c {
            return *v;
        }
        let mut inf = f64::INFINITY;
        for x in &points {
            for &u in &lattice {
                for &v in &lattice {
                    inf = inf.min(c.eval(x, u, v));
                }
            }
        }
        inf
    };

    let items = vec![
        AssumptionCheck {
            item: 'a',
            condition: "d1 < d2",
            status: status(d1 < d2),
        },
        AssumptionCheck {
            item: 'b',
            condition: "p > 1, q > 0, r > 0",
            status: status(params.p > 1.0 && params.q > 0.0 && params.r > 0.0),
        },
        AssumptionCheck {
            item: 'c',
            condition: "-1 < s <= 0",
            status: status(params.s > -1.0 && params.s <= 0.0),
        },
        AssumptionCheck {
            item: 'd',
            condition: "self-activation < cross-inhibition",
            status: status(rho_ < gamma),
        },
        AssumptionCheck {
            item: 'e',
            condition: "0 < (p - 1) / r < 1",
            status: status(rho_ > 0.0 && rho_ < 1.0),
        },
        AssumptionCheck {
            item: 'f',
            condition: "C1 coefficients, bounded rho",
            status: CheckStatus::Assumed,
        },
        AssumptionCheck {
            item: 'g',
            condition: "inf sigma1 > 0, inf rho2 > 0",
            status: status(inf_of(&params.sigma[0]) > 0.0 && inf_of(&params.rho[1]) > 0.0),
        },
    ];
    ValidationReport {
        self_activation: rho_,
        cross_inhibition: gamma,
        items,
    }
}

/// A pointwise nonlinearity `G̃(x, U)` feeding the Duhamel term.
pub trait Nonlinearity: Send + Sync {
    fn eval(&self, x: &[f64], u: f64, v: f64) -> [f64; 2];

    /// `∂G̃ᵢ/∂(u, v)`; defaults to central differences.
    fn jacobian(&self, x: &[f64], u: f64, v: f64) -> [[f64; 2]; 2] {
        let hu = 1e-6 * u.abs().max(1.0);
        let hv = 1e-6 * v.abs().max(1.0);
        let up = self.eval(x, u + hu, v);
        let um = self.eval(x, u - hu, v);
        let vp = self.eval(x, u, v + hv);
        let vm = self.eval(x, u, v - hv);
        [
            [(up[0] - um[0]) / (2.0 * hu), (vp[0] - vm[0]) / (2.0 * hv)],
            [(up[1] - um[1]) / (2.0 * hu), (vp[1] - vm[1]) / (2.0 * hv)],
        ]
    }
}

/// `G̃` of the generalized system with lower clipping.
#[derive(Clone, Debug)]
pub struct ClippedGM {
    pub params: GMParams,
    pub clip: ClipBox,
}

impl Nonlinearity for ClippedGM {
    #[inline]
    fn eval(&self, x: &[f64], u: f64, v: f64) -> [f64; 2] {
        reaction_clipped(u, v, x, &self.params, &self.clip)
    }

    fn jacobian(&self, x: &[f64], u: f64, v: f64) -> [[f64; 2]; 2] {
        let p = &self.params;
        if !(p.rho[0].is_constant() && p.rho[1].is_constant()) {
            let fd = |nl: &Self| {
                // Default central differences through the trait.
                struct Wrap<'a>(&'a ClippedGM);
                impl Nonlinearity for Wrap<'_> {
                    fn eval(&self, x: &[f64], u: f64, v: f64) -> [f64; 2] {
                        self.0.eval(x, u, v)
                    }
                }
                Wrap(nl).jacobian(x, u, v)
            };
            return fd(self);
        }
        let (uc, vc) = self.clip.clip_below(u, v);
        let du = if u > self.clip.lo[0] { 1.0 } else { 0.0 };
        let dv = if v > self.clip.lo[1] { 1.0 } else { 0.0 };
        let r1 = p.rho[0].eval(x, uc, vc);
        let r2 = p.rho[1].eval(x, uc, vc);
        let pow_d = |base: f64, e: f64| if e == 0.0 { 0.0 } else { e * base.powf(e - 1.0) };
        [
            [
                du * r1 * pow_d(uc, p.p) / vc.powf(p.q),
                -dv * r1 * uc.powf(p.p) * p.q * vc.powf(-p.q - 1.0),
            ],
            [
                du * r2 * pow_d(uc, p.r) / vc.powf(p.s),
                -dv * r2 * uc.powf(p.r) * p.s * vc.powf(-p.s - 1.0),
            ],
        ]
    }
}

/// Induced ∞-norm (max absolute row sum) of a 2×2 matrix.
pub fn jacobian_norm(j: &[[f64; 2]; 2]) -> f64 {
    (j[0][0].abs() + j[0][1].abs()).max(j[1][0].abs() + j[1][1].abs())
}

/// Points per axis of the `(u, v)` sample grid of [`lipschitz_bound`].
pub const LIPSCHITZ_SAMPLES: usize = 256;

/// `1.1 ×` the largest Jacobian norm of `G̃` over a 256×256 grid of the box,
/// taken at every point of `x_samples` (one arbitrary point suffices for
/// spatially uniform coefficients).
pub fn lipschitz_bound(nl: &dyn Nonlinearity, clip: &ClipBox, x_samples: &[Vec<f64>]) -> f64 {
    let origin = [vec![0.0]];
    let xs: &[Vec<f64>] = if x_samples.is_empty() { &origin } else { x_samples };
    let n = LIPSCHITZ_SAMPLES;
    let axis = |c: usize, k: usize| clip.lo[c] + (clip.hi[c] - clip.lo[c]) * k as f64 / (n - 1) as f64;
    let mut best = 0.0f64;
    for x in xs {
        for a in 0..n {
            let u = axis(0, a);
            for b in 0..n {
                let v = axis(1, b);
                best = best.max(jacobian_norm(&nl.jacobian(x, u, v)));
            }
        }
    }
    1.1 * best
}

/// Decay constant of the inhibitor in the saturated system.
pub const SAT_INHIBITOR_DECAY: f64 = 0.9;
/// Prefactor of both saturated reaction terms.
pub const SAT_SCALE: f64 = 0.5;
/// Diffusivities of the saturated system.
pub const SAT_DIFFUSIVITY: [f64; 2] = [0.1, 2.0];
/// Equilibrium regimes used in the experiments.
pub const SAT_REGIMES: [f64; 3] = [0.708, 0.785, 0.85];

/// `(u*, v*, p_sat)` for the regime `s`: `u* = s`, `v* = s² / 0.9` and
/// `p_sat = (0.9 - s) / s³` solves `1 / (1 + p s²) = s / 0.9`.
pub fn equilibrium(s_eq: f64) -> Result<(f64, f64, f64)> {
    if !(s_eq > 0.0 && s_eq < SAT_INHIBITOR_DECAY) {
        return Err(Error::Parameter(format!(
            "equilibrium parameter must lie in (0, 0.9), got {s_eq}"
        )));
    }
    let p = (SAT_INHIBITOR_DECAY - s_eq) / (s_eq * s_eq * s_eq);
    Ok((s_eq, s_eq * s_eq / SAT_INHIBITOR_DECAY, p))
}

/// Parameters of the saturated two-species system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturatedGMParams {
    pub s_eq: f64,
    pub p_sat: f64,
}

impl SaturatedGMParams {
    pub fn new(s_eq: f64) -> Result<Self> {
        let (_, _, p_sat) = equilibrium(s_eq)?;
        Ok(Self { s_eq, p_sat })
    }

    pub fn equilibrium_state(&self) -> (f64, f64) {
        (self.s_eq, self.s_eq * self.s_eq / SAT_INHIBITOR_DECAY)
    }
}

/// Lower clip applied to `v` in the saturated reaction.
pub const SAT_V_FLOOR: f64 = 1e-8;

/// Full reaction `(f_u, f_v)` of the saturated system, including decay terms.
#[inline]
pub fn reaction_saturated(u: f64, v: f64, sp: &SaturatedGMParams) -> [f64; 2] {
    let v = v.max(SAT_V_FLOOR);
    let u2 = u * u;
    [
        SAT_SCALE * (u2 / ((1.0 + sp.p_sat * u2) * v) - u),
        SAT_SCALE * (u2 - SAT_INHIBITOR_DECAY * v),
    ]
}

/// The whole saturated reaction, decay included, as a nonlinearity.
#[derive(Clone, Copy, Debug)]
pub struct SaturatedReaction(pub SaturatedGMParams);

impl Nonlinearity for SaturatedReaction {
    #[inline]
    fn eval(&self, _x: &[f64], u: f64, v: f64) -> [f64; 2] {
        reaction_saturated(u, v, &self.0)
    }
}

/// The saturated reaction with its linear decay removed and `v` clipped
/// below, i.e. the `G̃` of the integral form whose kernel carries
/// `λ = (0.5, 0.45)`.
#[derive(Clone, Copy, Debug)]
pub struct SaturatedNonlinear {
    pub params: SaturatedGMParams,
    pub clip: ClipBox,
}

impl Nonlinearity for SaturatedNonlinear {
    #[inline]
    fn eval(&self, _x: &[f64], u: f64, v: f64) -> [f64; 2] {
        let (u, v) = self.clip.clip_below(u, v);
        let u2 = u * u;
        [
            SAT_SCALE * u2 / ((1.0 + self.params.p_sat * u2) * v),
            SAT_SCALE * u2,
        ]
    }

    fn jacobian(&self, _x: &[f64], u: f64, v: f64) -> [[f64; 2]; 2] {
        let du = if u > self.clip.lo[0] { 1.0 } else { 0.0 };
        let dv = if v > self.clip.lo[1] { 1.0 } else { 0.0 };
        let (u, v) = self.clip.clip_below(u, v);
        let p = self.params.p_sat;
        let den = 1.0 + p * u * u;
        [
            [
                du * SAT_SCALE * 2.0 * u / (den * den * v),
                -dv * SAT_SCALE * u * u / (den * v * v),
            ],
            [du * SAT_SCALE * 2.0 * u, 0.0],
        ]
    }
}

/// A linear part (diffusion and decay) plus an explicit nonlinearity.
#[derive(Clone)]
pub struct ReactionSystem {
    pub linear: GreenParams,
    pub reaction: Arc<dyn Nonlinearity>,
}

impl fmt::Debug for ReactionSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReactionSystem")
            .field("linear", &self.linear)
            .finish_non_exhaustive()
    }
}

impl ReactionSystem {
    /// The saturated system with the whole reaction explicit (no decay in
    /// the linear part), so spatially uniform equilibria are exact fixed
    /// points of the time stepper.
    pub fn saturated(sp: SaturatedGMParams, rank: usize) -> Result<Self> {
        Ok(Self {
            linear: GreenParams::new(SAT_DIFFUSIVITY[0], SAT_DIFFUSIVITY[1], 0.0, 0.0, rank)?,
            reaction: Arc::new(SaturatedReaction(sp)),
        })
    }

    /// The saturated system in integral form: decay moved into the kernel.
    pub fn saturated_split(sp: SaturatedGMParams, clip: ClipBox, rank: usize) -> Result<Self> {
        Ok(Self {
            linear: GreenParams::new(
                SAT_DIFFUSIVITY[0],
                SAT_DIFFUSIVITY[1],
                SAT_SCALE,
                SAT_SCALE * SAT_INHIBITOR_DECAY,
                rank,
            )?,
            reaction: Arc::new(SaturatedNonlinear { params: sp, clip }),
        })
    }

    /// The generalized system with clipped reaction.
    pub fn clipped_gm(linear: GreenParams, params: GMParams, clip: ClipBox) -> Self {
        Self {
            linear,
            reaction: Arc::new(ClippedGM { params, clip }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const X: [f64; 1] = [0.3];

    #[test]
    fn classical_indices_and_validation() {
        let p = GMParams::classical(0.1);
        assert_eq!(p.self_activation(), 0.5);
        assert_eq!(p.cross_inhibition(), 1.0);
        let rep = validate_assumptions(&p, 0.01, 0.1, &[]);
        assert!(rep.all_pass(), "{rep}");
        assert_eq!(rep.status('f'), Some(CheckStatus::Assumed));
    }

    #[test]
    fn validation_failures() {
        let mut p = GMParams::classical(0.1);
        p.p = 1.0;
        assert_eq!(validate_assumptions(&p, 0.01, 0.1, &[]).status('b'), Some(CheckStatus::Fail));

        // ϱ = γ: p = 3, r = 2 gives ϱ = 1 = q / (s + 1) with q = 1.
        let mut p = GMParams::classical(0.1);
        p.p = 3.0;
        let rep = validate_assumptions(&p, 0.01, 0.1, &[]);
        assert_eq!(rep.status('d'), Some(CheckStatus::Fail));

        let p = GMParams::classical(0.0);
        assert_eq!(validate_assumptions(&p, 0.01, 0.1, &[]).status('g'), Some(CheckStatus::Fail));
        assert_eq!(validate_assumptions(&p, 0.2, 0.1, &[]).status('a'), Some(CheckStatus::Fail));

        let mut p = GMParams::classical(0.1);
        p.rho[1] = Coefficient::function(|x, _, _| x[0] - 0.5);
        let rep = validate_assumptions(&p, 0.01, 0.1, &[vec![0.25], vec![0.75]]);
        assert_eq!(rep.status('g'), Some(CheckStatus::Fail));
    }

    #[test]
    fn general_reaction_values() {
        let unit = GMParams::new(2.0, 1.0, 2.0, 0.0, [1.0, 1.0], [0.0, 0.0]);
        assert_eq!(reaction_general(1.0, 1.0, &X, &unit).unwrap(), [1.0, 1.0]);
        assert_eq!(reaction_general(2.0, 4.0, &X, &unit).unwrap(), [1.0, 4.0]);
        let shifted = GMParams::new(2.0, 1.0, 2.0, 0.0, [1.0, 1.0], [0.1, 0.0]);
        let a = reaction_general(2.0, 4.0, &X, &shifted).unwrap();
        assert_abs_diff_eq!(a[0], 1.1, epsilon = 1e-15);
        assert!(matches!(
            reaction_general(1.0, 0.0, &X, &unit),
            Err(Error::Positivity { .. })
        ));
    }

    #[test]
    fn clipping_matches_interior_and_floors() {
        let p = GMParams::classical(0.1);
        let b = ClipBox::new([0.5, 0.5], [2.0, 2.0]).unwrap();
        assert_eq!(
            reaction_clipped(1.2, 0.9, &X, &p, &b),
            reaction_general(1.2, 0.9, &X, &p).unwrap()
        );
        assert_eq!(
            reaction_clipped(-0.5, 0.9, &X, &p, &b),
            reaction_clipped(0.5, 0.9, &X, &p, &b)
        );
        assert_eq!(
            reaction_clipped(0.1, -3.0, &X, &p, &b),
            reaction_general(0.5, 0.5, &X, &p).unwrap()
        );
    }

    #[test]
    fn clip_box_validation() {
        assert!(ClipBox::new([0.0, 0.1], [1.0, 1.0]).is_err());
        assert!(ClipBox::new([0.5, 0.1], [0.4, 1.0]).is_err());
        assert_eq!(ClipBox::default().lo, [0.1, 0.1]);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let nl = ClippedGM {
            params: GMParams::new(2.5, 1.3, 2.0, -0.4, [1.2, 0.8], [0.1, 0.2]),
            clip: ClipBox::new([0.3, 0.3], [3.0, 3.0]).unwrap(),
        };
        struct Fd<'a>(&'a ClippedGM);
        impl Nonlinearity for Fd<'_> {
            fn eval(&self, x: &[f64], u: f64, v: f64) -> [f64; 2] {
                self.0.eval(x, u, v)
            }
        }
        for &(u, v) in &[(0.7, 1.1), (2.0, 0.5), (1.3, 2.9)] {
            let a = nl.jacobian(&X, u, v);
            let f = Fd(&nl).jacobian(&X, u, v);
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(a[i][j], f[i][j], epsilon = 1e-6 * a[i][j].abs().max(1.0));
                }
            }
        }
        let sat = SaturatedNonlinear {
            params: SaturatedGMParams::new(0.785).unwrap(),
            clip: ClipBox::new([0.2, 0.2], [2.0, 2.0]).unwrap(),
        };
        struct FdS(SaturatedNonlinear);
        impl Nonlinearity for FdS {
            fn eval(&self, x: &[f64], u: f64, v: f64) -> [f64; 2] {
                self.0.eval(x, u, v)
            }
        }
        let a = sat.jacobian(&X, 0.9, 0.7);
        let f = FdS(sat).jacobian(&X, 0.9, 0.7);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(a[i][j], f[i][j], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn lipschitz_of_constant_and_identity() {
        let b = ClipBox::new([1.0, 1.0], [2.0, 2.0]).unwrap();
        let constant = ClippedGM {
            params: GMParams::new(2.0, 1.0, 2.0, 0.0, [0.0, 0.0], [0.3, 0.3]),
            clip: b,
        };
        assert_eq!(lipschitz_bound(&constant, &b, &[]), 0.0);
        let identity = ClippedGM {
            params: GMParams::new(1.0, 0.0, 1.0, 0.0, [1.0, 0.0], [0.0, 0.0]),
            clip: b,
        };
        assert!(lipschitz_bound(&identity, &b, &[]) >= 1.0);
    }

    #[test]
    fn lipschitz_bound_is_reproducible_and_holds_on_pairs() {
        let b = ClipBox::new([0.5, 0.5], [2.0, 2.0]).unwrap();
        let nl = ClippedGM {
            params: GMParams::classical(0.1),
            clip: b,
        };
        let bound = lipschitz_bound(&nl, &b, &[]);
        assert!(bound.is_finite());
        assert_eq!(bound.to_bits(), lipschitz_bound(&nl, &b, &[]).to_bits());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (u1, v1, u2, v2): (f64, f64, f64, f64) = (
                rng.gen_range(0.0..2.0),
                rng.gen_range(0.0..2.0),
                rng.gen_range(0.0..2.0),
                rng.gen_range(0.0..2.0),
            );
            let a = nl.eval(&X, u1, v1);
            let c = nl.eval(&X, u2, v2);
            let lhs = (a[0] - c[0]).abs().max((a[1] - c[1]).abs());
            let rhs = bound * (u1 - u2).abs().max((v1 - v2).abs());
            assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn equilibrium_values() {
        let (_, _, p) = equilibrium(0.708).unwrap();
        assert_abs_diff_eq!(p, (0.9 - 0.708) / 0.708f64.powi(3), epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.54101, epsilon = 1e-5);
        let (_, v, _) = equilibrium(0.785).unwrap();
        assert_abs_diff_eq!(v, 0.68469, epsilon = 1e-5);
        let (_, _, p) = equilibrium(0.9 - 1e-9).unwrap();
        assert!(p > 0.0 && p < 1e-8);
        assert!(equilibrium(0.9).is_err());
        assert!(equilibrium(0.0).is_err());
    }

    #[test]
    fn saturated_equilibrium_is_fixed_point() {
        for &s in &SAT_REGIMES {
            let sp = SaturatedGMParams::new(s).unwrap();
            let lhs = 1.0 / (1.0 + sp.p_sat * s * s);
            assert_abs_diff_eq!(lhs, s / 0.9, epsilon = 1e-12);
            let (u, v) = sp.equilibrium_state();
            let r = reaction_saturated(u, v, &sp);
            assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12, "{r:?}");
        }
        let sp = SaturatedGMParams::new(0.708).unwrap();
        assert_eq!(reaction_saturated(0.0, 1.0, &sp)[0], 0.0);
    }

    #[test]
    fn split_saturated_reproduces_full_reaction() {
        let sp = SaturatedGMParams::new(0.785).unwrap();
        let sys = ReactionSystem::saturated_split(sp, ClipBox::default(), 1).unwrap();
        let (u, v) = (0.9, 0.8);
        let g = sys.reaction.eval(&X, u, v);
        let full = reaction_saturated(u, v, &sp);
        assert_abs_diff_eq!(g[0] - sys.linear.decay[0] * u, full[0], epsilon = 1e-15);
        assert_abs_diff_eq!(g[1] - sys.linear.decay[1] * v, full[1], epsilon = 1e-15);
    }
}
