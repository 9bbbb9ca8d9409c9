//! Verification experiments behind the `verify-*` commands.
//!
//! Each experiment takes a plain settings struct, returns an outcome with
//! the measured quantities, and decides pass or fail with [`pass`] methods
//! so the CLI and the tests share one definition of success.
//!
//! [`pass`]: RankOutcome::pass

use std::io::Write;
use std::sync::Arc;

use ndarray::Array3;

use crate::basis::{Domain, GridField};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::gm::{
    lipschitz_bound, ClipBox, ClippedGM, GMParams, Nonlinearity, ReactionSystem, SaturatedGMParams,
    SaturatedNonlinear,
};
use crate::green::{loglog_slope, rank_error_sweep, GreenParams, RankSweepConfig, RankSweepReport};
use crate::io::fmt_f64;
use crate::nn::{fit_surrogate_sweep, SurrogateConfig};
use crate::picard::{
    constructive_gamma, picard_solve, semigroup_bound, uniform_nodes, validate_horizon, weighted_norm, Horizon,
    PicardConfig, PicardOperator, PicardTrace,
};
use crate::solver::{initial_condition, standard_normal, RichardsonEstimate};

/// Rank sweeps of the truncated kernel at several weights `β`.
#[derive(Clone, Debug)]
pub struct RankVerification {
    pub cells: usize,
    pub length: f64,
    pub diffusivity: [f64; 2],
    pub decay: [f64; 2],
    pub n_ref: usize,
    pub ranks: Vec<usize>,
    pub betas: Vec<f64>,
    pub t0: f64,
    /// Allowed excess of the fitted slope over `(n − 4β) / (2n)`.
    pub slope_tol: f64,
}

impl Default for RankVerification {
    fn default() -> Self {
        Self {
            cells: 512,
            length: 1.0,
            diffusivity: [0.01, 0.1],
            decay: [1.0, 1.0],
            n_ref: 512,
            ranks: vec![4, 8, 16, 32, 64],
            betas: vec![0.75, 0.5],
            t0: 0.5,
            slope_tol: 0.15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankOutcome {
    pub report: RankSweepReport,
    /// Weighted error strictly decreases along the sorted ranks.
    pub decreasing: bool,
}

impl RankOutcome {
    pub fn slope_bound(&self, tol: f64) -> f64 {
        self.report.slope_theory() + tol
    }

    pub fn pass(&self, tol: f64) -> bool {
        self.decreasing && self.report.fitted_slope <= self.slope_bound(tol)
    }
}

pub fn verify_rank(cfg: &RankVerification) -> Result<Vec<RankOutcome>> {
    let domain = Domain::interval(cfg.length, cfg.cells)?;
    let green = GreenParams::new(cfg.diffusivity[0], cfg.diffusivity[1], cfg.decay[0], cfg.decay[1], cfg.n_ref)?;
    let mut ranks = cfg.ranks.clone();
    ranks.sort_unstable();
    ranks.dedup();
    cfg.betas
        .iter()
        .map(|&beta| {
            let sweep = RankSweepConfig {
                beta,
                ranks: ranks.clone(),
                n_ref: cfg.n_ref,
                t0: cfg.t0,
                times: None,
            };
            let report = rank_error_sweep(&domain, &green, &sweep)?;
            let decreasing = report.errors_weighted.windows(2).all(|w| w[1] < w[0]);
            Ok(RankOutcome { report, decreasing })
        })
        .collect()
}

/// The clipped classical system on an interval with a noisy constant start.
#[derive(Clone, Debug)]
pub struct ClippedProblem {
    pub cells: usize,
    pub length: f64,
    pub diffusivity: [f64; 2],
    pub decay: [f64; 2],
    /// Source `σ₁` of the classical reaction.
    pub source: f64,
    pub clip: ClipBox,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClippedProblem {
    fn default() -> Self {
        Self {
            cells: 128,
            length: 1.0,
            diffusivity: [0.01, 0.1],
            decay: [1.0, 1.0],
            source: 0.1,
            clip: ClipBox::new([0.7, 0.7], [1.4, 1.4]).expect("valid box"),
            noise: 0.1,
            seed: 0,
        }
    }
}

impl ClippedProblem {
    pub fn domain(&self) -> Result<Domain> {
        Domain::interval(self.length, self.cells)
    }

    pub fn green(&self, rank: usize) -> Result<GreenParams> {
        GreenParams::new(self.diffusivity[0], self.diffusivity[1], self.decay[0], self.decay[1], rank)
    }

    pub fn nonlinearity(&self) -> ClippedGM {
        ClippedGM {
            params: GMParams::classical(self.source),
            clip: self.clip,
        }
    }

    /// `1 + noise ξ` per channel and cell, clamped into the box.
    pub fn initial_condition(&self) -> GridField {
        Array3::from_shape_fn((2, 1, self.cells), |(c, _, i)| {
            let x = 1.0 + self.noise * standard_normal(self.seed, c as u64, i as u64);
            x.clamp(self.clip.lo[c], self.clip.hi[c])
        })
    }

    pub fn lipschitz(&self) -> f64 {
        lipschitz_bound(&self.nonlinearity(), &self.clip, &[])
    }

    fn picard_config(&self, times: Vec<f64>, beta: f64, k_max: usize, tol: f64, rank: usize) -> Result<PicardConfig> {
        Ok(PicardConfig {
            times,
            k_max,
            tol,
            beta,
            green: self.green(rank)?,
            clip: self.clip,
        })
    }

    /// Halves `t0_max` until the a-priori bound holds for this start.
    pub fn horizon(&self, t0_max: f64, nodes: usize) -> Result<Horizon> {
        let domain = self.domain()?;
        let cfg = self.picard_config(uniform_nodes(t0_max, nodes), 0.75, 1, 0.0, self.cells)?;
        let op = PicardOperator::new(&domain, &cfg, Arc::new(self.nonlinearity()))?;
        let c0 = semigroup_bound(&op, &self.initial_condition())?;
        validate_horizon(t0_max, self.lipschitz(), c0)
    }

    /// Full-rank Picard iteration with the exact clipped reaction.
    pub fn solve(
        &self,
        horizon: f64,
        nodes: usize,
        beta: f64,
        k_max: usize,
        tol: f64,
    ) -> Result<(SpaceTimeField, PicardTrace)> {
        let domain = self.domain()?;
        let cfg = self.picard_config(uniform_nodes(horizon, nodes), beta, k_max, tol, self.cells)?;
        cfg.validate(&domain)?;
        let op = PicardOperator::new(&domain, &cfg, Arc::new(self.nonlinearity()))?;
        picard_solve(&op, &self.initial_condition(), &cfg, None)
    }
}

/// Factorial decay of Picard increments on a validated horizon.
#[derive(Clone, Debug)]
pub struct FactorialConfig {
    pub problem: ClippedProblem,
    pub t0_max: f64,
    pub nodes: usize,
    pub k_max: usize,
    pub beta: f64,
}

impl Default for FactorialConfig {
    fn default() -> Self {
        Self {
            problem: ClippedProblem {
                cells: 64,
                ..ClippedProblem::default()
            },
            t0_max: PicardConfig::DEFAULT_T0,
            nodes: PicardConfig::DEFAULT_NODES + 1,
            k_max: 10,
            beta: 0.75,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FactorialOutcome {
    pub horizon: Horizon,
    pub trace: PicardTrace,
    /// `2 B T₀`, the constant of the ratio envelope.
    pub envelope: f64,
    /// Largest observed ratio relative to its envelope; at most 1 on success.
    pub worst_ratio: f64,
}

impl FactorialOutcome {
    pub fn pass(&self) -> bool {
        self.trace.steps.len() >= 3 && self.worst_ratio <= 1.0
    }

    /// Trace rows with the observed ratio and its bound.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,eta_k,ratio,bound")?;
        for (i, s) in self.trace.steps.iter().enumerate() {
            let (ratio, bound) = match self.trace.steps.get(i + 1) {
                Some(n) if s.k >= 1 => (fmt_f64(n.eta / s.eta), fmt_f64(self.envelope / (s.k + 1) as f64)),
                _ => (String::new(), String::new()),
            };
            writeln!(w, "{},{},{ratio},{bound}", s.k, fmt_f64(s.eta))?;
        }
        Ok(())
    }
}

pub fn verify_factorial(cfg: &FactorialConfig) -> Result<FactorialOutcome> {
    let horizon = cfg.problem.horizon(cfg.t0_max, cfg.nodes)?;
    // tol = 0 runs all k_max iterations.
    let (_, trace) = cfg.problem.solve(horizon.t0, cfg.nodes, cfg.beta, cfg.k_max, 0.0)?;
    let envelope = 2.0 * horizon.lipschitz * horizon.t0;
    let worst_ratio = trace.worst_ratio(envelope);
    Ok(FactorialOutcome {
        horizon,
        trace,
        envelope,
        worst_ratio,
    })
}

/// Picard iterates of `u' = u`, `u(0) = 1` against Taylor partial sums of `eᵗ`.
#[derive(Clone, Debug)]
pub struct TaylorConfig {
    pub t0: f64,
    pub nodes: usize,
    pub k_max: usize,
    pub cells: usize,
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self {
            t0: 0.5,
            nodes: 4097,
            k_max: 10,
            cells: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaylorOutcome {
    /// `max_{t, x} |U^{(k)} − Σ_{j≤k} tʲ/j!|` for `k = 0..=k_max`.
    pub errors: Vec<f64>,
}

impl TaylorOutcome {
    pub const TOLERANCE: f64 = 1e-8;

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.max_error() <= Self::TOLERANCE
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,max_err_vs_taylor")?;
        for (k, e) in self.errors.iter().enumerate() {
            writeln!(w, "{k},{}", fmt_f64(*e))?;
        }
        Ok(())
    }
}

pub fn verify_taylor(cfg: &TaylorConfig) -> Result<TaylorOutcome> {
    let domain = Domain::interval(1.0, cfg.cells)?;
    let clip = ClipBox::new([0.5, 0.5], [8.0, 8.0])?;
    // g₁ = u, g₂ = 0, no decay: the activator obeys u' = u + diffusion.
    let nl = ClippedGM {
        params: GMParams::new(1.0, 0.0, 1.0, 0.0, [1.0, 0.0], [0.0, 0.0]),
        clip,
    };
    let pc = PicardConfig {
        times: uniform_nodes(cfg.t0, cfg.nodes),
        k_max: cfg.k_max,
        tol: 0.0,
        beta: 0.75,
        green: GreenParams::new(0.01, 0.1, 0.0, 0.0, cfg.cells)?,
        clip,
    };
    let op = PicardOperator::new(&domain, &pc, Arc::new(nl))?;
    let u0 = GridField::from_elem((2, 1, cfg.cells), 1.0);
    let semigroup = op.semigroup_term(&u0)?;
    let mut current = semigroup.clone();
    let mut errors = Vec::with_capacity(cfg.k_max + 1);
    for k in 0..=cfg.k_max {
        if k > 0 {
            current = op.theta(&current, &semigroup)?;
        }
        let mut err = 0.0f64;
        for (n, &t) in pc.times.iter().enumerate() {
            let partial = taylor_partial_sum(t, k);
            let snap = current.snapshot(n);
            for (c, exact) in [(0, partial), (1, 1.0)] {
                for &v in snap.index_axis(ndarray::Axis(0), c) {
                    err = err.max((v - exact).abs());
                }
            }
        }
        errors.push(err);
    }
    Ok(TaylorOutcome { errors })
}

/// `Σ_{j=0}^{k} tʲ / j!`.
pub fn taylor_partial_sum(t: f64, k: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..=k {
        term *= t / j as f64;
        sum += term;
    }
    sum
}

/// Picard fixed point of the saturated system against the IMEX solver.
#[derive(Clone, Debug)]
pub struct ReferenceConfig {
    pub regime: f64,
    pub cells: usize,
    pub length: f64,
    pub clip: ClipBox,
    pub noise: f64,
    pub seed: u64,
    pub t0_max: f64,
    pub nodes: usize,
    pub beta: f64,
    /// IMEX steps per node interval at the coarsest of the three step sizes.
    pub substeps: usize,
    pub k_max: usize,
    pub tol: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            regime: 0.708,
            cells: 64,
            length: 200.0,
            clip: ClipBox::new([0.4, 0.3], [2.0, 2.0]).expect("valid box"),
            noise: 0.05,
            seed: 0,
            t0_max: 0.5,
            nodes: 33,
            beta: 0.75,
            substeps: 4,
            k_max: 40,
            tol: 1e-13,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceOutcome {
    pub horizon: Horizon,
    pub trace: PicardTrace,
    pub richardson: RichardsonEstimate,
    /// Weighted norm of Picard minus the finest IMEX run.
    pub discrepancy: f64,
}

impl ReferenceOutcome {
    pub const FLOOR: f64 = 5e-3;

    pub fn threshold(&self) -> f64 {
        Self::FLOOR.max(3.0 * self.richardson.error_estimate())
    }

    pub fn pass(&self) -> bool {
        self.discrepancy <= self.threshold()
    }
}

pub fn verify_reference(cfg: &ReferenceConfig) -> Result<ReferenceOutcome> {
    let domain = Domain::rectangle(cfg.length, cfg.length, cfg.cells, cfg.cells)?;
    let sp = SaturatedGMParams::new(cfg.regime)?;
    let rank = domain.n_points();
    let split = ReactionSystem::saturated_split(sp, cfg.clip, rank)?;
    let nl = SaturatedNonlinear {
        params: sp,
        clip: cfg.clip,
    };
    let u0 = initial_condition(&domain, cfg.regime, 0, cfg.seed, cfg.noise)?;
    let mut pc = PicardConfig {
        times: uniform_nodes(cfg.t0_max, cfg.nodes),
        k_max: cfg.k_max,
        tol: cfg.tol,
        beta: cfg.beta,
        green: split.linear.clone(),
        clip: cfg.clip,
    };
    let probe = PicardOperator::new(&domain, &pc, split.reaction.clone())?;
    let c0 = semigroup_bound(&probe, &u0)?;
    drop(probe);
    let horizon = validate_horizon(cfg.t0_max, lipschitz_bound(&nl, &cfg.clip, &[]), c0)?;
    pc = pc.with_horizon(horizon.t0, cfg.nodes);
    pc.validate(&domain)?;
    let op = PicardOperator::new(&domain, &pc, split.reaction.clone())?;
    let (picard, trace) = picard_solve(&op, &u0, &pc, None)?;
    drop(op);

    let dt = horizon.t0 / ((cfg.nodes - 1) * cfg.substeps) as f64;
    let full = ReactionSystem::saturated(sp, 1)?;
    let norm = |d: &SpaceTimeField| weighted_norm(d, cfg.beta);
    let (richardson, reference) = RichardsonEstimate::measure(&u0, &domain, &full, dt, &pc.times, norm)?;
    let discrepancy = weighted_norm(&picard.difference(&reference)?, cfg.beta);
    Ok(ReferenceOutcome {
        horizon,
        trace,
        richardson,
        discrepancy,
    })
}

/// The ε sweep of the constructive operator `Γ`.
#[derive(Clone, Debug)]
pub struct ConstructiveConfig {
    pub problem: ClippedProblem,
    pub t0_max: f64,
    pub nodes: usize,
    pub beta: f64,
    pub eps: Vec<f64>,
    /// Ranks `1..=rank_max` are swept to pick `N(ε)`.
    pub rank_max: usize,
    pub surrogate: SurrogateConfig,
    /// Allowed distance of the fitted `N` exponent from `2n / (4β − n)`.
    pub rank_exponent_tol: f64,
    /// Allowed excess of the parameter-count exponent over `n + 2`.
    pub param_slope_tol: f64,
}

impl Default for ConstructiveConfig {
    fn default() -> Self {
        Self {
            problem: ClippedProblem::default(),
            t0_max: PicardConfig::DEFAULT_T0,
            nodes: 33,
            beta: 0.9,
            eps: vec![0.1, 0.03, 0.01],
            rank_max: 64,
            surrogate: SurrogateConfig::new(0),
            rank_exponent_tol: 0.3,
            param_slope_tol: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructiveRow {
    pub eps: f64,
    pub k: usize,
    pub rank: usize,
    pub hidden: Vec<usize>,
    pub n_params: usize,
    pub surrogate_err: f64,
    pub surrogate_met: bool,
    pub weighted_err: f64,
}

#[derive(Clone, Debug)]
pub struct ConstructiveOutcome {
    pub dim: usize,
    pub beta: f64,
    pub horizon: Horizon,
    pub rows: Vec<ConstructiveRow>,
    /// Log-log slope of the parameter count against `1/ε`.
    pub param_slope: f64,
    /// Log-log slope of `N(ε)` against `1/ε`.
    pub rank_slope: f64,
}

impl ConstructiveOutcome {
    pub fn rank_exponent_theory(&self) -> f64 {
        let n = self.dim as f64;
        2.0 * n / (4.0 * self.beta - n)
    }

    pub fn param_slope_bound(&self, tol: f64) -> f64 {
        self.dim as f64 + 2.0 + tol
    }

    /// Errors never grow as `ε` shrinks (rows are sorted by decreasing `ε`).
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].weighted_err <= w[0].weighted_err)
    }

    pub fn rank_scaling_ok(&self, tol: f64) -> bool {
        (self.rank_slope - self.rank_exponent_theory()).abs() <= tol
    }

    pub fn pass(&self, cfg: &ConstructiveConfig) -> bool {
        self.monotone()
            && self.param_slope <= self.param_slope_bound(cfg.param_slope_tol)
            && self.rank_scaling_ok(cfg.rank_exponent_tol)
            && self.rows.iter().all(|r| r.surrogate_met)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eps,k,N,hidden,n_params,surrogate_err,weighted_err")?;
        for r in &self.rows {
            let hidden: Vec<String> = r.hidden.iter().map(usize::to_string).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_f64(r.eps),
                r.k,
                r.rank,
                hidden.join("x"),
                r.n_params,
                fmt_f64(r.surrogate_err),
                fmt_f64(r.weighted_err)
            )?;
        }
        writeln!(w, "param_slope,{}", fmt_f64(self.param_slope))?;
        writeln!(w, "rank_slope,{}", fmt_f64(self.rank_slope))?;
        writeln!(w, "rank_exponent_theory,{}", fmt_f64(self.rank_exponent_theory()))
    }
}

/// `k = ⌈ln(1/ε)⌉`.
pub fn iterations_for(eps: f64) -> usize {
    (1.0 / eps).ln().ceil().max(0.0) as usize
}

pub fn verify_constructive(cfg: &ConstructiveConfig) -> Result<ConstructiveOutcome> {
    if cfg.eps.is_empty() {
        return Err(Error::Parameter("at least one accuracy is required".into()));
    }
    let p = &cfg.problem;
    let domain = p.domain()?;
    let horizon = p.horizon(cfg.t0_max, cfg.nodes)?;
    let (reference, _) = p.solve(horizon.t0, cfg.nodes, cfg.beta, 60, 1e-14)?;

    let rank_max = cfg.rank_max.min(p.cells);
    let sweep = rank_error_sweep(
        &domain,
        &p.green(p.cells)?,
        &RankSweepConfig {
            beta: cfg.beta,
            ranks: (1..=rank_max).collect(),
            n_ref: p.cells,
            t0: horizon.t0,
            times: None,
        },
    )?;

    let mut eps = cfg.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let target = p.nonlinearity();
    let fits = fit_surrogate_sweep(&target, &p.clip, &[p.length], &eps, &cfg.surrogate)?;

    let u0 = p.initial_condition();
    let mut rows = Vec::with_capacity(eps.len());
    for (&e, fit) in eps.iter().zip(fits) {
        let rank = sweep.rank_for(e).unwrap_or(p.cells);
        let k = iterations_for(e);
        let pc = PicardConfig {
            times: uniform_nodes(horizon.t0, cfg.nodes),
            k_max: k + 1,
            tol: 0.0,
            beta: cfg.beta,
            green: p.green(rank)?,
            clip: p.clip,
        };
        let hidden = fit
            .stages
            .iter()
            .find(|s| s.achieved == fit.achieved)
            .map(|s| s.hidden.clone())
            .unwrap_or_default();
        let n_params = fit.surrogate.n_params();
        let (surrogate_err, surrogate_met) = (fit.achieved, fit.target_met);
        let clip = fit.surrogate.clip;
        let op = PicardOperator::new(&domain, &pc, Arc::new(fit.surrogate) as Arc<dyn Nonlinearity>)?;
        let gamma = constructive_gamma(&op, &u0, &pc, &clip, k)?;
        rows.push(ConstructiveRow {
            eps: e,
            k,
            rank,
            hidden,
            n_params,
            surrogate_err,
            surrogate_met,
            weighted_err: weighted_norm(&gamma.difference(&reference)?, cfg.beta),
        });
    }
    let inv: Vec<f64> = rows.iter().map(|r| 1.0 / r.eps).collect();
    let params: Vec<f64> = rows.iter().map(|r| r.n_params as f64).collect();
    let ranks: Vec<f64> = rows.iter().map(|r| r.rank as f64).collect();
    Ok(ConstructiveOutcome {
        dim: domain.dim(),
        beta: cfg.beta,
        horizon,
        param_slope: loglog_slope(&inv, &params),
        rank_slope: loglog_slope(&inv, &ranks),
        rows,
    })
}
