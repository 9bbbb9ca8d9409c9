//! Truncated Neumann Green kernels and their actions in the eigenbasis.
//!
//! For channel `j` the kernel of `∂_t - d_j Δ + λ_j` is
//! `Φ_j(x, y, t) = Σ_m exp(-t (d_j μ_m + λ_j)) φ_m(x) φ_m(y)`; keeping the
//! first `N` terms gives `Φ_{N,j}`. Everything here works on coefficient
//! vectors, so applying `Φ_N` is a per-mode scaling.

use std::io::Write;

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::basis::{Domain, EigenBasis, GridField, SpectralField};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Exponents above this are flushed to zero.
const FLUSH_EXPONENT: f64 = 700.0;

/// `exp(-rate * t)`, flushed to 0 once `rate * t > 700`.
#[inline]
pub fn decay(rate: f64, t: f64) -> f64 {
    let z = rate * t;
    if z > FLUSH_EXPONENT {
        0.0
    } else {
        (-z).exp()
    }
}

/// Diffusivities, decay rates and spectral rank of the diagonal kernel `Φ_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenParams {
    pub diffusivity: [f64; 2],
    pub decay: [f64; 2],
    pub rank: usize,
}

impl GreenParams {
    pub fn new(d1: f64, d2: f64, lambda1: f64, lambda2: f64, rank: usize) -> Result<Self> {
        let p = Self {
            diffusivity: [d1, d2],
            decay: [lambda1, lambda2],
            rank,
        };
        p.validate(false)?;
        Ok(p)
    }

    /// Checks signs and rank; `inhibitor_faster` additionally requires `d1 < d2`.
    pub fn validate(&self, inhibitor_faster: bool) -> Result<()> {
        if self.diffusivity.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Parameter("diffusivities must be positive".into()));
        }
        if self.decay.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Parameter("decay rates must be non-negative".into()));
        }
        if self.rank == 0 {
            return Err(Error::Parameter("spectral rank must be at least 1".into()));
        }
        if inhibitor_faster && self.diffusivity[0] >= self.diffusivity[1] {
            return Err(Error::Parameter(
                "the inhibitor must diffuse faster (d1 < d2)".into(),
            ));
        }
        Ok(())
    }

    /// Per-mode rates `d_j μ_m + λ_j` for channel `j`.
    pub fn rates(&self, basis: &EigenBasis, channel: usize) -> Vec<f64> {
        basis
            .modes()
            .iter()
            .map(|m| self.diffusivity[channel] * m.eigenvalue + self.decay[channel])
            .collect()
    }
}

/// Scales every coefficient of mode `m` by `exp(-t (d μ_m + λ))`.
pub fn semigroup_apply(
    coeffs: &SpectralField,
    basis: &EigenBasis,
    t: f64,
    diffusivity: f64,
    decay_rate: f64,
) -> Result<SpectralField> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("semigroup time must be >= 0, got {t}")));
    }
    check_modes(coeffs, basis)?;
    let factors: Array1<f64> = basis
        .modes()
        .iter()
        .map(|m| decay(diffusivity * m.eigenvalue + decay_rate, t))
        .collect();
    let mut out = coeffs.clone();
    for mut row in out.coeffs.axis_iter_mut(Axis(0)) {
        row *= &factors;
    }
    Ok(out)
}

/// Applies the two diagonal components of `Φ_N` to a two-channel field.
pub fn semigroup_apply_pair(
    coeffs: &SpectralField,
    basis: &EigenBasis,
    t: f64,
    params: &GreenParams,
) -> Result<SpectralField> {
    if coeffs.channels() != 2 {
        return Err(crate::error::dim_err("2 channels", coeffs.channels()));
    }
    let mut out = coeffs.clone();
    for j in 0..2 {
        let single = SpectralField {
            coeffs: coeffs.coeffs.slice(s![j..j + 1, ..]).to_owned(),
        };
        let evolved = semigroup_apply(&single, basis, t, params.diffusivity[j], params.decay[j])?;
        out.coeffs.row_mut(j).assign(&evolved.coeffs.row(0));
    }
    Ok(out)
}

fn check_modes(coeffs: &SpectralField, basis: &EigenBasis) -> Result<()> {
    if coeffs.n_modes() != basis.len() {
        return Err(crate::error::dim_err(
            format!("{} modes", basis.len()),
            format!("{} modes", coeffs.n_modes()),
        ));
    }
    Ok(())
}

/// `y ↦ Φ_{N,j}(x, y, t)` for both components, with `x` the center of cell `(i, j)`.
pub fn kernel_slice(
    cell: (usize, usize),
    t: f64,
    params: &GreenParams,
    basis: &EigenBasis,
) -> Result<GridField> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("kernel needs t > 0, got {t}")));
    }
    let domain = basis.domain();
    if cell.0 >= domain.nx() || cell.1 >= domain.ny() {
        return Err(Error::Domain(format!("cell {cell:?} outside the grid")));
    }
    let rank = params.rank.min(basis.len());
    let mut coeffs = SpectralField::zeros(2, basis.len());
    for j in 0..2 {
        for k in 0..rank {
            let rate = params.diffusivity[j] * basis.modes()[k].eigenvalue + params.decay[j];
            coeffs.coeffs[[j, k]] = decay(rate, t) * basis.eval(k, cell.0, cell.1);
        }
    }
    basis.inverse(&coeffs)
}

/// Exact integration of `∫ exp(-ω (t - s)) f(s) ds` against the piecewise-linear
/// interpolant of `f` on a fixed node set, for one rate per mode.
///
/// Over a step of length `h` with `z = ω h`,
/// `I(t + h) = e^{-z} I(t) + h ψ(z) f(t) + h (φ₁(z) - ψ(z)) f(t + h)` where
/// `φ₁(z) = (1 - e^{-z}) / z` and `ψ(z) = (1 - (1 + z) e^{-z}) / z²`.
#[derive(Clone, Debug)]
pub struct ExpIntegrator {
    n_modes: usize,
    /// `[decay, start weight, end weight]` per interval, mode-major within.
    weights: Vec<[f64; 3]>,
    n_nodes: usize,
}

impl ExpIntegrator {
    pub fn new(rates: &[f64], times: &[f64]) -> Result<Self> {
        check_times(times)?;
        let n_modes = rates.len();
        let mut weights = Vec::with_capacity(n_modes * times.len().saturating_sub(1));
        for w in times.windows(2) {
            let h = w[1] - w[0];
            for &rate in rates {
                weights.push(step_weights(rate, h));
            }
        }
        Ok(Self {
            n_modes,
            weights,
            n_nodes: times.len(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Convolves forcing coefficients given per node (`(n_nodes, n_modes)`).
    pub fn convolve(&self, forcing: &Array2<f64>) -> Array2<f64> {
        assert_eq!(forcing.dim(), (self.n_nodes, self.n_modes), "forcing shape");
        let mut out = Array2::zeros((self.n_nodes, self.n_modes));
        for step in 1..self.n_nodes {
            let w = &self.weights[(step - 1) * self.n_modes..step * self.n_modes];
            let (done, mut rest) = out.view_mut().split_at(Axis(0), step);
            let prev = done.row(step - 1);
            let mut next = rest.row_mut(0);
            let f0 = forcing.row(step - 1);
            let f1 = forcing.row(step);
            for m in 0..self.n_modes {
                let [e, a, b] = w[m];
                next[m] = e * prev[m] + a * f0[m] + b * f1[m];
            }
        }
        out
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times[0] != 0.0 {
        return Err(Error::Ordering(format!(
            "first node is {:?}",
            times.first()
        )));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::Ordering(format!("{} followed by {}", w[0], w[1])));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Ordering("non-finite node".into()));
    }
    Ok(())
}

fn step_weights(rate: f64, h: f64) -> [f64; 3] {
    let z = rate * h;
    if z.abs() < 1e-2 {
        // Taylor series of φ₁ and ψ; truncation error below z^7/5040.
        let phi1 = 1.0 - z / 2.0 + z * z / 6.0 - z.powi(3) / 24.0 + z.powi(4) / 120.0
            - z.powi(5) / 720.0
            + z.powi(6) / 5040.0;
        let psi = 0.5 - z / 3.0 + z * z / 8.0 - z.powi(3) / 30.0 + z.powi(4) / 144.0
            - z.powi(5) / 840.0
            + z.powi(6) / 5760.0;
        [decay(rate, h), h * psi, h * (phi1 - psi)]
    } else if z > FLUSH_EXPONENT {
        [0.0, h / (z * z), h * (1.0 / z - 1.0 / (z * z))]
    } else {
        let e = (-z).exp();
        let phi1 = (1.0 - e) / z;
        let psi = (1.0 - (1.0 + z) * e) / (z * z);
        [e, h * psi, h * (phi1 - psi)]
    }
}

/// Duhamel convolution of per-node forcing coefficients with one `(d, λ)`.
pub fn duhamel_convolve(
    forcing: &[SpectralField],
    times: &[f64],
    basis: &EigenBasis,
    diffusivity: f64,
    decay_rate: f64,
) -> Result<Vec<SpectralField>> {
    check_times(times)?;
    if forcing.len() != times.len() {
        return Err(crate::error::dim_err(
            format!("{} forcing nodes", times.len()),
            forcing.len(),
        ));
    }
    let channels = forcing[0].channels();
    for f in forcing {
        check_modes(f, basis)?;
        if f.channels() != channels {
            return Err(crate::error::dim_err(format!("{channels} channels"), f.channels()));
        }
    }
    let rates: Vec<f64> = basis
        .modes()
        .iter()
        .map(|m| diffusivity * m.eigenvalue + decay_rate)
        .collect();
    let integrator = ExpIntegrator::new(&rates, times)?;
    let mut out = vec![SpectralField::zeros(channels, basis.len()); times.len()];
    for c in 0..channels {
        let stacked = Array2::from_shape_fn((times.len(), basis.len()), |(t, m)| {
            forcing[t].coeffs[[c, m]]
        });
        let conv = integrator.convolve(&stacked);
        for (t, field) in out.iter_mut().enumerate() {
            field.coeffs.row_mut(c).assign(&conv.row(t));
        }
    }
    Ok(out)
}

/// Settings for [`rank_error_sweep`].
#[derive(Clone, Debug)]
pub struct RankSweepConfig {
    pub beta: f64,
    pub ranks: Vec<usize>,
    pub n_ref: usize,
    pub t0: f64,
    /// Positive nodes in `(0, T0]`; `None` picks a geometric grid that
    /// resolves the peak of `t^β ‖Φ − Φ_N‖` for the largest rank.
    pub times: Option<Vec<f64>>,
}

/// Truncation errors of `Φ_N` against the reference rank.
#[derive(Clone, Debug, PartialEq)]
pub struct RankSweepReport {
    pub beta: f64,
    pub dim: usize,
    pub ranks: Vec<usize>,
    pub errors_weighted: Vec<f64>,
    pub errors_time_integrated: Vec<f64>,
    pub fitted_slope: f64,
    /// Number of spatial points over which the sup in `x` was taken.
    pub x_coverage: usize,
}

impl RankSweepReport {
    /// Theoretical exponent `(n - 4β) / (2n)` of the weighted error.
    pub fn slope_theory(&self) -> f64 {
        let n = self.dim as f64;
        (n - 4.0 * self.beta) / (2.0 * n)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "N,err_weighted,err_time_int")?;
        for ((n, a), b) in self
            .ranks
            .iter()
            .zip(&self.errors_weighted)
            .zip(&self.errors_time_integrated)
        {
            writeln!(w, "{n},{},{}", fmt_f64(*a), fmt_f64(*b))?;
        }
        writeln!(w, "beta,{}", fmt_f64(self.beta))?;
        writeln!(w, "slope,{}", fmt_f64(self.fitted_slope))?;
        writeln!(w, "slope_theory,{}", fmt_f64(self.slope_theory()))
    }

    /// Smallest swept rank whose weighted error is at most `eps`.
    pub fn rank_for(&self, eps: f64) -> Option<usize> {
        self.ranks
            .iter()
            .zip(&self.errors_weighted)
            .filter(|(_, e)| **e <= eps)
            .map(|(n, _)| *n)
            .min()
    }
}

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Sample points for the sup over `x`: the whole grid in 1D, an 8×8
/// stratified subset of cell centers in 2D.
pub fn sweep_points(domain: &Domain) -> Vec<usize> {
    if domain.dim() == 1 {
        return (0..domain.n_points()).collect();
    }
    let pick = |n: usize, a: usize| ((2 * a + 1) * n) / 16;
    let mut pts = Vec::with_capacity(64);
    for b in 0..8 {
        for a in 0..8 {
            pts.push(pick(domain.ny(), b) * domain.nx() + pick(domain.nx(), a));
        }
    }
    pts.dedup();
    pts
}

/// Measures `sup_x sup_t t^β ‖Φ − Φ_N‖_{L¹}` and `sup_x ∫₀^{T0} ‖Φ − Φ_N‖_{L¹} dt`
/// with `Φ` replaced by the rank-`n_ref` kernel, summing both diagonal components.
pub fn rank_error_sweep(
    domain: &Domain,
    params: &GreenParams,
    cfg: &RankSweepConfig,
) -> Result<RankSweepReport> {
    let n = domain.dim() as f64;
    if !(cfg.beta > n / 4.0 && cfg.beta <= 1.0) {
        return Err(Error::Parameter(format!(
            "beta must lie in ({}, 1], got {}",
            n / 4.0,
            cfg.beta
        )));
    }
    if !(cfg.t0 > 0.0) {
        return Err(Error::Parameter("T0 must be positive".into()));
    }
    let max_rank = cfg.ranks.iter().copied().max().unwrap_or(0);
    if cfg.ranks.is_empty() || cfg.ranks.contains(&0) || max_rank > cfg.n_ref {
        return Err(Error::Parameter(format!(
            "ranks must lie in [1, N_ref = {}]",
            cfg.n_ref
        )));
    }
    let basis = EigenBasis::new(domain, cfg.n_ref)?;
    let mus = basis.eigenvalues();
    let times = match &cfg.times {
        Some(t) => {
            if t.iter().any(|&v| !(v > 0.0 && v <= cfg.t0)) {
                return Err(Error::Parameter("sweep nodes must lie in (0, T0]".into()));
            }
            t.clone()
        }
        None => default_sweep_times(&mus, params, max_rank.min(cfg.n_ref - 1), cfg.t0),
    };

    let points = sweep_points(domain);
    let phi = basis.mode_matrix();
    let phi_x = phi.select(Axis(0), &points);
    let area = domain.cell_area();

    // Ranks in decreasing order so tails accumulate incrementally.
    let mut order: Vec<usize> = (0..cfg.ranks.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(cfg.ranks[i]));

    let same_components =
        params.diffusivity[0] == params.diffusivity[1] && params.decay[0] == params.decay[1];
    let components: &[usize] = if same_components { &[0] } else { &[0, 1] };
    let multiplicity = if same_components { 2.0 } else { 1.0 };

    // norms[t][r][x]: L¹_y norm of the tail at node t, rank r, point x.
    let mut all_t = vec![0.0];
    all_t.extend_from_slice(&times);
    let mut norms = vec![vec![Array1::<f64>::zeros(points.len()); cfg.ranks.len()]; all_t.len()];
    for (ti, &t) in all_t.iter().enumerate() {
        for &j in components {
            let rates: Vec<f64> = mus
                .iter()
                .map(|mu| params.diffusivity[j] * mu + params.decay[j])
                .collect();
            let mut tail = Array2::<f64>::zeros((points.len(), domain.n_points()));
            let mut upper = cfg.n_ref;
            for &ri in &order {
                let lower = cfg.ranks[ri];
                if lower < upper {
                    let scale: Array1<f64> =
                        rates[lower..upper].iter().map(|&r| decay(r, t)).collect();
                    let left = &phi_x.slice(s![.., lower..upper]) * &scale;
                    let right = phi.slice(s![.., lower..upper]);
                    ndarray::linalg::general_mat_mul(1.0, &left, &right.t(), 1.0, &mut tail);
                    upper = lower;
                }
                let row_norms = tail.map_axis(Axis(1), |r| r.iter().map(|v| v.abs()).sum::<f64>());
                Zip::from(&mut norms[ti][ri])
                    .and(&row_norms)
                    .for_each(|acc, &v| *acc += multiplicity * area * v);
            }
        }
    }

    let mut errors_weighted = vec![0.0; cfg.ranks.len()];
    let mut errors_time_integrated = vec![0.0; cfg.ranks.len()];
    for ri in 0..cfg.ranks.len() {
        let mut weighted = 0.0f64;
        for (ti, &t) in all_t.iter().enumerate().skip(1) {
            let m = norms[ti][ri].iter().cloned().fold(0.0, f64::max);
            weighted = weighted.max(t.powf(cfg.beta) * m);
        }
        let mut integral = Array1::<f64>::zeros(points.len());
        for ti in 1..all_t.len() {
            let h = all_t[ti] - all_t[ti - 1];
            integral.scaled_add(0.5 * h, &norms[ti - 1][ri]);
            integral.scaled_add(0.5 * h, &norms[ti][ri]);
        }
        errors_weighted[ri] = weighted;
        errors_time_integrated[ri] = integral.iter().cloned().fold(0.0, f64::max);
    }
    let xs: Vec<f64> = cfg.ranks.iter().map(|&r| r as f64).collect();
    let fitted_slope = loglog_slope(&xs, &errors_weighted);
    Ok(RankSweepReport {
        beta: cfg.beta,
        dim: domain.dim(),
        ranks: cfg.ranks.clone(),
        errors_weighted,
        errors_time_integrated,
        fitted_slope,
        x_coverage: points.len(),
    })
}

fn default_sweep_times(mus: &[f64], params: &GreenParams, top: usize, t0: f64) -> Vec<f64> {
    let d_min = params.diffusivity[0].min(params.diffusivity[1]);
    let mu_top = mus[top].max(mus.get(1).copied().unwrap_or(1.0));
    let t_lo = (0.02 / (d_min * mu_top)).min(t0 * 1e-3);
    geometric_nodes(t_lo, t0, 96)
}

/// `count` geometrically spaced nodes from `lo` to `hi` inclusive.
pub fn geometric_nodes(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo * (ratio * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Values of one coefficient row, for tests and reports.
pub fn mode_decays(basis: &EigenBasis, t: f64, diffusivity: f64, decay_rate: f64) -> Array1<f64> {
    basis
        .modes()
        .iter()
        .map(|m| decay(diffusivity * m.eigenvalue + decay_rate, t))
        .collect()
}
