//! Picard iteration on the Duhamel integral form.
//!
//! `Θ[U](t) = S(t) U₀ + ∫₀ᵗ Φ_N(t − s) G̃(U(s)) ds`, where `S(t) U₀` is the
//! truncated semigroup applied to the initial state. Both terms are computed
//! mode by mode; the forcing is linear in time between nodes.

use std::io::Write;
use std::sync::Arc;

use ndarray::{Array2, Array4, Axis};
use rayon::prelude::*;

use crate::basis::{Domain, EigenBasis, GridField, SpectralField};
use crate::error::{dim_err, Error, Result};
use crate::field::{check_nodes, SpaceTimeField};
use crate::gm::{ClipBox, Nonlinearity};
use crate::green::{semigroup_apply_pair, ExpIntegrator, GreenParams};
use crate::io::fmt_f64;
use crate::solver::cell_centers;

/// Horizon, nodes, rank and stopping rule of a Picard run.
#[derive(Clone, Debug)]
pub struct PicardConfig {
    /// Nodes on `[0, T₀]`, starting at 0.
    pub times: Vec<f64>,
    pub k_max: usize,
    /// Stop once `η_k` drops below this.
    pub tol: f64,
    pub beta: f64,
    /// Diffusivities, decay rates and spectral rank `N`.
    pub green: GreenParams,
    pub clip: ClipBox,
}

/// `count` uniform nodes on `[0, t0]`, endpoints included.
pub fn uniform_nodes(t0: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count).map(|k| t0 * k as f64 / (count - 1) as f64).collect()
}

impl PicardConfig {
    pub const DEFAULT_T0: f64 = 0.5;
    pub const DEFAULT_NODES: usize = 64;

    pub fn t0(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        check_nodes(&self.times)?;
        let t0 = self.t0();
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(Error::Parameter(format!("horizon T0 must lie in (0, 1), got {t0}")));
        }
        let n = domain.dim() as f64;
        if !(self.beta > n / 4.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!(
                "beta must lie in ({}, 1), got {}",
                n / 4.0,
                self.beta
            )));
        }
        if self.k_max == 0 {
            return Err(Error::Parameter("k_max must be at least 1".into()));
        }
        self.green.validate(false)
    }

    /// The same run over `count` uniform nodes on `[0, t0]`.
    pub fn with_horizon(&self, t0: f64, count: usize) -> Self {
        Self {
            times: uniform_nodes(t0, count),
            ..self.clone()
        }
    }
}

/// Outcome of shrinking `T₀` until `C₀ + e^{B T₀} − 1 < C₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Horizon {
    pub t0: f64,
    pub lipschitz: f64,
    pub c0: f64,
    pub c1: f64,
    pub halvings: usize,
}

/// Halves `t0` until the a-priori bound holds, with `C₁ = 2 C₀ + 1`.
pub fn validate_horizon(t0: f64, lipschitz: f64, c0: f64) -> Result<Horizon> {
    if !(t0 > 0.0 && lipschitz >= 0.0 && c0 >= 0.0) {
        return Err(Error::Parameter("horizon check needs t0 > 0, B >= 0, C0 >= 0".into()));
    }
    let c1 = 2.0 * c0 + 1.0;
    let (mut t, mut halvings) = (t0, 0);
    while c0 + (lipschitz * t).exp() - 1.0 >= c1 {
        t *= 0.5;
        halvings += 1;
    }
    Ok(Horizon {
        t0: t,
        lipschitz,
        c0,
        c1,
        halvings,
    })
}

/// `max_j t_j^β ‖U(t_j)‖_∞`; the node `t = 0` is weighted by `0^β`.
pub fn weighted_norm(u: &SpaceTimeField, beta: f64) -> f64 {
    assert!(beta >= 0.0, "weight exponent must be >= 0");
    u.times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let w = if beta == 0.0 { 1.0 } else { t.powf(beta) };
            let sup = u.snapshot(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if w == 0.0 {
                0.0
            } else {
                w * sup
            }
        })
        .fold(0.0, f64::max)
}

/// The operators `Θ`, `Θ̂` for a fixed domain, rank, node set and `G̃`.
pub struct PicardOperator {
    basis: EigenBasis,
    times: Vec<f64>,
    green: GreenParams,
    integrators: [ExpIntegrator; 2],
    centers: Vec<[f64; 2]>,
    nonlinearity: Arc<dyn Nonlinearity>,
}

impl PicardOperator {
    pub fn new(domain: &Domain, cfg: &PicardConfig, nonlinearity: Arc<dyn Nonlinearity>) -> Result<Self> {
        check_nodes(&cfg.times)?;
        cfg.green.validate(false)?;
        let basis = EigenBasis::new(domain, cfg.green.rank)?;
        let integrators = [
            ExpIntegrator::new(&cfg.green.rates(&basis, 0), &cfg.times)?,
            ExpIntegrator::new(&cfg.green.rates(&basis, 1), &cfg.times)?,
        ];
        Ok(Self {
            centers: cell_centers(domain),
            basis,
            times: cfg.times.clone(),
            green: cfg.green.clone(),
            integrators,
            nonlinearity,
        })
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn domain(&self) -> &Domain {
        self.basis.domain()
    }

    /// `S(t_j) U₀` at every node.
    pub fn semigroup_term(&self, u0: &GridField) -> Result<SpaceTimeField> {
        if u0.dim().0 != 2 {
            return Err(dim_err("2 channels", u0.dim().0));
        }
        let c0 = self.basis.forward(u0.view())?;
        let snaps = self
            .times
            .par_iter()
            .map(|&t| {
                let c = semigroup_apply_pair(&c0, &self.basis, t, &self.green)?;
                self.basis.inverse(&c)
            })
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::from_snapshots(self.domain(), self.times.clone(), &snaps)
    }

    fn forcing(&self, state: ndarray::ArrayView3<f64>, shift: Option<ndarray::ArrayView3<f64>>) -> GridField {
        let (_, ny, nx) = state.dim();
        let dim = self.domain().dim();
        let mut g = GridField::zeros((2, ny, nx));
        for (flat, p) in self.centers.iter().enumerate() {
            let (j, i) = (flat / nx, flat % nx);
            let (mut u, mut v) = (state[[0, j, i]], state[[1, j, i]]);
            if let Some(s) = &shift {
                u += s[[0, j, i]];
                v += s[[1, j, i]];
            }
            let r = self.nonlinearity.eval(&p[..dim], u, v);
            g[[0, j, i]] = r[0];
            g[[1, j, i]] = r[1];
        }
        g
    }

    /// `∫₀ᵗ Φ_N(t − s) G̃(U(s) + shift(s)) ds` at every node.
    fn duhamel(&self, u: &SpaceTimeField, shift: Option<&SpaceTimeField>) -> Result<SpaceTimeField> {
        self.check_input(u)?;
        if let Some(s) = shift {
            u.check_compatible(s)?;
        }
        let n_nodes = self.times.len();
        let coeffs: Vec<SpectralField> = (0..n_nodes)
            .into_par_iter()
            .map(|k| {
                let g = self.forcing(u.snapshot(k), shift.map(|s| s.snapshot(k)));
                self.basis.forward(g.view())
            })
            .collect::<Result<_>>()?;
        let n_modes = self.basis.len();
        let mut conv = [Array2::zeros((0, 0)), Array2::zeros((0, 0))];
        for (c, slot) in conv.iter_mut().enumerate() {
            let stacked = Array2::from_shape_fn((n_nodes, n_modes), |(k, m)| coeffs[k].coeffs[[c, m]]);
            *slot = self.integrators[c].convolve(&stacked);
        }
        let snaps = (0..n_nodes)
            .into_par_iter()
            .map(|k| {
                let mut s = SpectralField::zeros(2, n_modes);
                for c in 0..2 {
                    s.coeffs.row_mut(c).assign(&conv[c].row(k));
                }
                self.basis.inverse(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::from_snapshots(self.domain(), self.times.clone(), &snaps)
    }

    fn check_input(&self, u: &SpaceTimeField) -> Result<()> {
        if u.times() != self.times.as_slice() {
            return Err(dim_err(
                format!("{} configured nodes", self.times.len()),
                format!("{} nodes", u.n_times()),
            ));
        }
        let d = self.domain();
        if u.values().dim() != (self.times.len(), 2, d.ny(), d.nx()) {
            return Err(dim_err(
                format!("{:?}", (self.times.len(), 2, d.ny(), d.nx())),
                format!("{:?}", u.values().dim()),
            ));
        }
        Ok(())
    }

    /// `Θ[U] = S U₀ + Duhamel(G̃(U))` given the precomputed `S U₀`.
    pub fn theta(&self, u: &SpaceTimeField, semigroup: &SpaceTimeField) -> Result<SpaceTimeField> {
        let d = self.duhamel(u, None)?;
        d.check_compatible(semigroup)?;
        SpaceTimeField::new(
            self.domain().clone(),
            self.times.clone(),
            d.values() + semigroup.values(),
        )
    }

    /// `Θ̂[W] = Duhamel(G̃(W + S U₀))`.
    pub fn theta_hat(&self, w: &SpaceTimeField, semigroup: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.duhamel(w, Some(semigroup))
    }
}

/// `Θ[U]` from scratch (recomputes `S U₀`).
pub fn theta_apply(op: &PicardOperator, u: &SpaceTimeField, u0: &GridField) -> Result<SpaceTimeField> {
    let s = op.semigroup_term(u0)?;
    op.theta(u, &s)
}

/// `Θ̂[U]` from scratch.
pub fn theta_hat_apply(op: &PicardOperator, u: &SpaceTimeField, u0: &GridField) -> Result<SpaceTimeField> {
    let s = op.semigroup_term(u0)?;
    op.theta_hat(u, &s)
}

/// One iteration of a Picard run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardStep {
    /// `η_k = ‖U^{(k+1)} − U^{(k)}‖_∞`.
    pub k: usize,
    pub eta: f64,
    /// `‖U^{(k+1)} − U_ref‖_∞` when a reference is given.
    pub err_vs_ref: Option<f64>,
    /// Weighted norm of the same difference.
    pub weighted_err: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PicardTrace {
    pub steps: Vec<PicardStep>,
}

impl PicardTrace {
    pub fn etas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.eta).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,eta_k,err_vs_ref,weighted_err")?;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{}",
                s.k,
                fmt_f64(s.eta),
                opt(s.err_vs_ref),
                opt(s.weighted_err)
            )?;
        }
        Ok(())
    }

    /// Largest `η_{k+1} / η_k` divided by `c / (k + 1)` over `k ≥ 1`; the
    /// factorial envelope holds with constant `c` when this is at most 1.
    pub fn worst_ratio(&self, c: f64) -> f64 {
        self.steps
            .windows(2)
            .filter(|w| w[0].k >= 1 && w[0].eta > 0.0)
            .map(|w| (w[1].eta / w[0].eta) / (c / (w[0].k + 1) as f64))
            .fold(0.0, f64::max)
    }
}

/// Iterates `U^{(k+1)} = Θ[U^{(k)}]` from `U^{(0)} = S U₀`.
pub fn picard_solve(
    op: &PicardOperator,
    u0: &GridField,
    cfg: &PicardConfig,
    reference: Option<&SpaceTimeField>,
) -> Result<(SpaceTimeField, PicardTrace)> {
    let semigroup = op.semigroup_term(u0)?;
    if let Some(r) = reference {
        semigroup.check_compatible(r)?;
    }
    let mut current = semigroup.clone();
    let mut trace = PicardTrace::default();
    for k in 0..cfg.k_max {
        let next = op.theta(&current, &semigroup)?;
        let eta = next.max_abs_diff(&current)?;
        let (err_vs_ref, weighted_err) = match reference {
            Some(r) => {
                let diff = next.difference(r)?;
                (Some(diff.max_abs()), Some(weighted_norm(&diff, cfg.beta)))
            }
            None => (None, None),
        };
        trace.steps.push(PicardStep {
            k,
            eta,
            err_vs_ref,
            weighted_err,
        });
        current = next;
        if !eta.is_finite() {
            return Err(Error::Divergence { step: k, time: cfg.t0() });
        }
        if k >= 3 {
            let eta_1 = trace.steps[1].eta;
            if eta > 10.0 * eta_1 {
                return Err(Error::ContractionFailure { k, eta_k: eta, eta_1 });
            }
        }
        if eta < cfg.tol {
            break;
        }
    }
    Ok((current, trace))
}

/// `Γ(U₀) = Θ_net^{[k+1]}[S U₀]`: `k + 1` applications of `Θ` with the
/// surrogate in place of `G̃`. `op` must be built around the surrogate.
pub fn constructive_gamma(
    op: &PicardOperator,
    u0: &GridField,
    cfg: &PicardConfig,
    surrogate_box: &ClipBox,
    k: usize,
) -> Result<SpaceTimeField> {
    if surrogate_box != &cfg.clip {
        return Err(Error::Config(format!(
            "surrogate box {surrogate_box:?} differs from the clip box {:?}",
            cfg.clip
        )));
    }
    let semigroup = op.semigroup_term(u0)?;
    let mut current = semigroup.clone();
    for _ in 0..=k {
        current = op.theta(&current, &semigroup)?;
    }
    Ok(current)
}

/// `C₀ = max_j ‖S(t_j) U₀‖_∞` over the operator's nodes.
pub fn semigroup_bound(op: &PicardOperator, u0: &GridField) -> Result<f64> {
    Ok(op.semigroup_term(u0)?.max_abs())
}

/// Broadcasts one grid field to every node.
pub fn constant_in_time(domain: &Domain, times: &[f64], field: &GridField) -> Result<SpaceTimeField> {
    let (ch, ny, nx) = field.dim();
    let values = Array4::from_shape_fn((times.len(), ch, ny, nx), |(_, c, j, i)| field[[c, j, i]]);
    SpaceTimeField::new(domain.clone(), times.to_vec(), values)
}

/// Adds two compatible fields.
pub fn add_fields(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<SpaceTimeField> {
    a.check_compatible(b)?;
    let mut out = a.clone();
    out.values_mut().zip_mut_with(b.values(), |x, y| *x += y);
    Ok(out)
}

/// Channel `c` averaged over cells at every node.
pub fn spatial_mean(u: &SpaceTimeField, c: usize) -> Vec<f64> {
    u.values()
        .index_axis(Axis(1), c)
        .outer_iter()
        .map(|s| s.mean().unwrap_or(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gm::{ClippedGM, GMParams};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gm(rho: [f64; 2], sigma: [f64; 2], p: f64, q: f64) -> Arc<dyn Nonlinearity> {
        Arc::new(ClippedGM {
            params: GMParams::new(p, q, 2.0, 0.0, rho, sigma),
            clip: ClipBox::default(),
        })
    }

    fn setup(
        n: usize,
        lambda: f64,
        nl: Arc<dyn Nonlinearity>,
        times: Vec<f64>,
    ) -> (Domain, PicardConfig, PicardOperator) {
        let d = Domain::interval(1.0, n).unwrap();
        let cfg = PicardConfig {
            times,
            k_max: 10,
            tol: 1e-13,
            beta: 0.5,
            green: GreenParams::new(0.01, 0.1, lambda, lambda, n).unwrap(),
            clip: ClipBox::default(),
        };
        let op = PicardOperator::new(&d, &cfg, nl).unwrap();
        (d, cfg, op)
    }

    fn random_ic(n: usize, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((2, 1, n), |_| rng.gen_range(0.5..1.5))
    }

    #[test]
    fn zero_nonlinearity_gives_semigroup() {
        let (_, _, op) = setup(16, 0.3, gm([0.0, 0.0], [0.0, 0.0], 2.0, 1.0), uniform_nodes(0.5, 9));
        let u0 = random_ic(16, 1);
        let s = op.semigroup_term(&u0).unwrap();
        let th = theta_apply(&op, &s, &u0).unwrap();
        assert!(th.max_abs_diff(&s).unwrap() < 1e-15);
        assert_eq!(theta_hat_apply(&op, &s, &u0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn constant_forcing_grows_linearly() {
        let (d, _, op) = setup(8, 0.0, gm([0.0, 0.0], [0.7, 0.2], 2.0, 1.0), uniform_nodes(0.5, 6));
        let u0 = Array3::from_elem((2, 1, 8), 1.3);
        let s = op.semigroup_term(&u0).unwrap();
        let th = op.theta(&constant_in_time(&d, op.times(), &u0).unwrap(), &s).unwrap();
        for (k, &t) in op.times().iter().enumerate() {
            for v in th.snapshot(k).index_axis(Axis(0), 0).iter() {
                assert_abs_diff_eq!(*v, 1.3 + 0.7 * t, epsilon = 1e-12);
            }
            for v in th.snapshot(k).index_axis(Axis(0), 1).iter() {
                assert_abs_diff_eq!(*v, 1.3 + 0.2 * t, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn linear_decay_converges_in_one_iteration() {
        let (_, cfg, op) = setup(8, 1.0, gm([0.0, 0.0], [0.0, 0.0], 2.0, 1.0), uniform_nodes(0.5, 11));
        let u0 = Array3::from_elem((2, 1, 8), 1.0);
        let (u, trace) = picard_solve(&op, &u0, &cfg, None).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].eta, 0.0);
        for (k, &t) in op.times().iter().enumerate() {
            for v in u.snapshot(k).iter() {
                assert_abs_diff_eq!(*v, (-t).exp(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn theta_identity_with_shifted_input() {
        let (d, _, op) = setup(16, 0.2, gm([1.0, 0.8], [0.1, 0.0], 2.0, 1.0), uniform_nodes(0.4, 9));
        let u0 = random_ic(16, 3);
        let s = op.semigroup_term(&u0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = Array4::from_shape_fn((9, 2, 1, 16), |_| rng.gen_range(0.3..2.0));
        let u = SpaceTimeField::new(d, op.times().to_vec(), values).unwrap();
        let lhs = op.theta(&u, &s).unwrap();
        let w = u.difference(&s).unwrap();
        let rhs = add_fields(&op.theta_hat(&w, &s).unwrap(), &s).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn weighted_norm_examples() {
        let d = Domain::interval(1.0, 4).unwrap();
        let mut f = SpaceTimeField::zeros(&d, vec![0.0, 0.5], 2).unwrap();
        f.values_mut().fill(-2.5);
        assert_eq!(weighted_norm(&f, 0.0), 2.5);
        let mut g = SpaceTimeField::zeros(&d, vec![0.0, 0.5], 2).unwrap();
        g.snapshot_mut(0).fill(1.0);
        assert_eq!(weighted_norm(&g, 0.5), 0.0);
        let times = vec![0.0, 0.25, 1.0];
        let mut h = SpaceTimeField::zeros(&d, times.clone(), 1).unwrap();
        for (k, &t) in times.iter().enumerate().skip(1) {
            h.snapshot_mut(k).fill(t.powf(-0.25));
        }
        assert_abs_diff_eq!(weighted_norm(&h, 0.5), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn horizon_halving() {
        let h = validate_horizon(0.5, 8.8, 1.0).unwrap();
        assert!(h.c0 + (h.lipschitz * h.t0).exp() - 1.0 < h.c1);
        assert!(h.c0 + (h.lipschitz * 2.0 * h.t0).exp() - 1.0 >= h.c1);
        assert_eq!(validate_horizon(0.5, 0.0, 1.0).unwrap().halvings, 0);
    }

    #[test]
    fn contraction_failure_is_reported() {
        // Superlinear growth with a huge clip box and horizon: iterates blow up.
        let nl: Arc<dyn Nonlinearity> = Arc::new(ClippedGM {
            params: GMParams::new(3.0, 0.0, 1.0, 0.0, [40.0, 0.0], [0.0, 0.0]),
            clip: ClipBox::default(),
        });
        let (_, cfg, op) = setup(8, 0.0, nl, uniform_nodes(0.9, 16));
        let u0 = Array3::from_elem((2, 1, 8), 3.0);
        let err = picard_solve(&op, &u0, &cfg, None).unwrap_err();
        assert!(
            matches!(err, Error::ContractionFailure { .. } | Error::Divergence { .. } | Error::Domain(_)),
            "{err:?}"
        );
    }

    #[test]
    fn constructive_gamma_with_exact_nonlinearity_matches_picard() {
        let nl = gm([1.0, 1.0], [0.1, 0.0], 2.0, 1.0);
        let (_, mut cfg, op) = setup(16, 1.0, nl, uniform_nodes(0.125, 17));
        cfg.tol = 0.0;
        cfg.k_max = 4;
        let u0 = random_ic(16, 8);
        let (u, _) = picard_solve(&op, &u0, &cfg, None).unwrap();
        let g = constructive_gamma(&op, &u0, &cfg, &cfg.clip.clone(), 3).unwrap();
        assert_eq!(u, g);
        let other = ClipBox::new([0.2, 0.2], [5.0, 5.0]).unwrap();
        assert!(matches!(
            constructive_gamma(&op, &u0, &cfg, &other, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trace_csv_rows() {
        let (_, cfg, op) = setup(8, 1.0, gm([1.0, 1.0], [0.1, 0.0], 2.0, 1.0), uniform_nodes(0.1, 9));
        let u0 = random_ic(8, 2);
        let (_, trace) = picard_solve(&op, &u0, &cfg, None).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), trace.steps.len() + 1);
        assert!(text.starts_with("k,eta_k,err_vs_ref,weighted_err\n"));
    }
}
