//! Command orchestration for the `leno` binary.
//!
//! Every command reads one [`Config`], writes its outputs under an output
//! directory and reports pass or fail. Each CSV and text output starts with
//! a `# config_hash=<sha256>` line; checkpoints carry the same hash in their
//! trailing tag.

pub mod config;
pub mod study;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::Domain;
use crate::dataset::{dense_store_times, desk_store_times, gen_dataset, DatasetSpec, Manifest, Split};
use crate::error::{Error, Result};
use crate::experiments::{
    verify_constructive, verify_factorial, verify_rank, verify_reference, verify_taylor, ClippedProblem,
    ConstructiveConfig, FactorialConfig, RankVerification, ReferenceConfig, TaylorConfig,
};
use crate::gm::{validate_assumptions, GMParams, SAT_REGIMES};
use crate::io::fmt_f64;
use crate::nn::{SurrogateConfig, TrainConfig};
use crate::operator::{train_onestep, write_model_tagged, BasisKind, OperatorConfig, OperatorModel, Real};
use crate::solver::DEFAULT_NOISE;

pub use config::Config;
pub use study::{evaluate_runs, load_split, EvalCell, EvalTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Evaluate,
    VerifyRank,
    VerifyPicard,
    VerifyConstructive,
    Report,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Self::GenData,
        Self::Train,
        Self::Evaluate,
        Self::VerifyRank,
        Self::VerifyPicard,
        Self::VerifyConstructive,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GenData => "gen-data",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
            Self::VerifyRank => "verify-rank",
            Self::VerifyPicard => "verify-picard",
            Self::VerifyConstructive => "verify-constructive",
            Self::Report => "report",
        }
    }
}

/// Result of one command: overall verdict, human-readable lines and the
/// files written.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub pass: bool,
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            ..Self::default()
        }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    /// Records a checked condition and folds it into the verdict.
    fn check(&mut self, ok: bool, line: impl AsRef<str>) {
        self.pass &= ok;
        self.summary.push(format!("[{}] {}", if ok { "pass" } else { "FAIL" }, line.as_ref()));
    }
}

/// Output sink that stamps every file with the config hash.
struct Sink<'a> {
    dir: &'a Path,
    hash: String,
}

impl Sink<'_> {
    fn csv(
        &self,
        out: &mut Outcome,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# config_hash={}", self.hash)?;
        body(&mut w)?;
        w.flush()?;
        out.files.push(path);
        Ok(())
    }
}

/// Runs `cmd` with outputs under `out`.
pub fn run(cmd: Command, cfg: &Config, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let sink = Sink {
        dir: out,
        hash: cfg.hash(),
    };
    match cmd {
        Command::GenData => cmd_gen_data(cfg, &sink),
        Command::Train => cmd_train(cfg, &sink),
        Command::Evaluate => cmd_evaluate(cfg, &sink),
        Command::VerifyRank => cmd_verify_rank(cfg, &sink),
        Command::VerifyPicard => cmd_verify_picard(cfg, &sink),
        Command::VerifyConstructive => cmd_verify_constructive(cfg, &sink),
        Command::Report => cmd_report(cfg, &sink),
    }
}

pub fn data_domain(cfg: &Config) -> Result<Domain> {
    let cells: usize = cfg.get("data.cells", 64)?;
    let length: f64 = cfg.get("data.length", 200.0)?;
    match cfg.get("data.dim", 2usize)? {
        1 => Domain::interval(length, cells),
        2 => Domain::rectangle(length, length, cells, cells),
        d => Err(Error::Config(format!("data.dim must be 1 or 2, got {d}"))),
    }
}

pub fn dataset_spec(cfg: &Config) -> Result<DatasetSpec> {
    let store_times = match cfg.get("data.grid", "desk".to_string())?.as_str() {
        "desk" => desk_store_times(),
        "dense" => dense_store_times(),
        g => return Err(Error::Config(format!("data.grid must be desk or dense, got {g}"))),
    };
    Ok(DatasetSpec {
        domain: data_domain(cfg)?,
        regimes: cfg.list("data.regimes", SAT_REGIMES.to_vec())?,
        train_per_regime: cfg.get("data.train_per_regime", 30)?,
        test_per_regime: cfg.get("data.test_per_regime", 6)?,
        noise: cfg.get("data.noise", DEFAULT_NOISE)?,
        seed: cfg.get("data.seed", 0)?,
        store_times,
        dt: cfg.get("data.dt", 0.1)?,
        multires: cfg.get("data.multires", false)?,
    })
}

pub fn operator_config(cfg: &Config) -> Result<OperatorConfig> {
    let basis = BasisKind::parse(&cfg.get("model.basis", "neumann-cosine".to_string())?)?;
    let modes: Vec<usize> = cfg.list("model.modes", vec![16, 16])?;
    let modes = <[usize; 2]>::try_from(modes)
        .map_err(|v| Error::Config(format!("model.modes: expected 2 values, got {}", v.len())))?;
    let oc = OperatorConfig {
        basis,
        width: cfg.get("model.width", 32)?,
        depth: cfg.get("model.depth", 4)?,
        modes,
        residual: cfg.get("model.residual", false)?,
    };
    oc.validate()?;
    Ok(oc)
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig> {
    let tc = TrainConfig {
        lr: cfg.get("train.lr", 1e-3)?,
        batch_size: cfg.get("train.batch_size", 16)?,
        epochs: cfg.get("train.epochs", 30)?,
        seed: cfg.get("seed", 0)?,
    };
    tc.validate()?;
    Ok(tc)
}

fn cmd_gen_data(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let spec = dataset_spec(cfg)?;
    let manifest = gen_dataset(&spec, sink.dir)?;
    // Re-emit the manifest with the hash line on top.
    let mut out = Outcome::new();
    sink.csv(&mut out, Manifest::FILE_NAME, |w| manifest.write(w))?;
    for &s in &spec.regimes {
        let of = |split: Split| {
            manifest
                .entries
                .iter()
                .filter(|e| e.regime == s && e.split == split && !e.diverged)
                .count()
        };
        out.note(format!("regime {s}: {} train, {} test", of(Split::Train), of(Split::Test)));
    }
    let diverged: Vec<&str> = manifest.entries.iter().filter(|e| e.diverged).map(|e| e.file.as_str()).collect();
    if !diverged.is_empty() {
        out.note(format!("{} trajectories diverged and are excluded: {}", diverged.len(), diverged.join(" ")));
    }
    out.note(format!("{} trajectories written to {}", manifest.entries.len(), sink.dir.display()));
    Ok(out)
}

fn cmd_train(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let data_dir = cfg.path("data.dir")?;
    let domain = data_domain(cfg)?;
    let oc = operator_config(cfg)?;
    let tc = train_config(cfg)?;
    let train = load_split(&data_dir, &domain, Split::Train)?;
    let test = load_split(&data_dir, &domain, Split::Test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let init = OperatorModel::<f64>::init(oc, &domain, &mut rng)?;
    let mut out = Outcome::new();
    out.note(format!(
        "{} model, {} parameters, {} train / {} test pairs",
        oc.basis.as_str(),
        init.n_params(),
        train.len(),
        test.len()
    ));
    let precision = cfg.get("train.precision", "f32".to_string())?;
    let (curve, model) = match precision.as_str() {
        "f32" => fit::<f32>(&init, &train, &test, &tc)?,
        "f64" => fit::<f64>(&init, &train, &test, &tc)?,
        p => return Err(Error::Config(format!("train.precision must be f32 or f64, got {p}"))),
    };
    let path = sink.dir.join("model.nopm");
    let mut w = BufWriter::new(File::create(&path)?);
    write_model_tagged(&mut w, &model, &format!("config_hash={}", sink.hash))?;
    w.flush()?;
    out.files.push(path);
    sink.csv(&mut out, "loss.csv", |w| curve.write_csv(w))?;
    if let (Some(first), Some(last)) = (curve.rows.first(), curve.rows.last()) {
        out.note(format!(
            "train loss (u, v): epoch 1 ({:.4e}, {:.4e}) -> epoch {} ({:.4e}, {:.4e})",
            first.train.u, first.train.v, last.epoch, last.train.u, last.train.v
        ));
    }
    Ok(out)
}

fn fit<F: Real>(
    init: &OperatorModel<f64>,
    train: &crate::operator::OneStepData,
    test: &crate::operator::OneStepData,
    tc: &TrainConfig,
) -> Result<(crate::operator::LossCurve, OperatorModel<f64>)> {
    let mut model = init.cast::<F>()?;
    let curve = train_onestep(&mut model, train, test, tc, |row| {
        eprintln!(
            "epoch {:>3}  train_u {:.4e}  train_v {:.4e}  test_u {:.4e}  test_v {:.4e}",
            row.epoch, row.train.u, row.train.v, row.test.u, row.test.v
        );
    })?;
    Ok((curve, model.cast::<f64>()?))
}

fn cmd_evaluate(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let data_dir = cfg.path("data.dir")?;
    let domain = data_domain(cfg)?;
    let models: Vec<String> = cfg.list("eval.models", Vec::new())?;
    if models.is_empty() {
        return Err(Error::Config("eval.models lists no models".into()));
    }
    let mut runs = Vec::with_capacity(models.len());
    for m in &models {
        let paths: Vec<String> = cfg.list(&format!("eval.{m}"), Vec::new())?;
        if paths.is_empty() {
            return Err(Error::Config(format!("eval.{m} lists no checkpoints")));
        }
        runs.push((m.clone(), paths.into_iter().map(PathBuf::from).collect::<Vec<_>>()));
    }
    let inject = cfg.get("eval.inject_truth", false)?;
    let table = evaluate_runs(&data_dir, &domain, &runs, inject)?;
    let mut out = Outcome::new();
    sink.csv(&mut out, "rollout_runs.csv", |w| table.write_runs_csv(w))?;
    sink.csv(&mut out, "rollout_metrics.csv", |w| table.write_csv(w))?;
    for c in &table.cells {
        out.note(format!(
            "{:<8} s={} {}: {:.4e} +- {:.4e} ({} runs, {} diverged rollouts)",
            c.model, c.regime, c.channel, c.mean, c.std, c.runs, c.diverged
        ));
    }
    if cfg.get("eval.ordering", false)? && models.len() >= 2 {
        let (a, b) = (&models[0], &models[1]);
        let order = table.ordering(a, b);
        sink.csv(&mut out, "ordering.csv", |w| {
            writeln!(w, "regime,channel,{a}_mean,{b}_mean,{a}_lower")?;
            for o in &order {
                writeln!(w, "{},{},{},{},{}", o.regime, o.channel, fmt_f64(o.first), fmt_f64(o.second), o.first_lower)?;
            }
            Ok(())
        })?;
        let wins = order.iter().filter(|o| o.first_lower).count();
        out.note(format!("{a} lower than {b} in {wins} of {} cells", order.len()));
    }
    Ok(out)
}

pub fn rank_verification(cfg: &Config) -> Result<RankVerification> {
    let d = RankVerification::default();
    Ok(RankVerification {
        cells: cfg.get("rank.cells", d.cells)?,
        length: cfg.get("rank.length", d.length)?,
        diffusivity: [cfg.get("rank.d1", d.diffusivity[0])?, cfg.get("rank.d2", d.diffusivity[1])?],
        decay: [cfg.get("rank.lambda1", d.decay[0])?, cfg.get("rank.lambda2", d.decay[1])?],
        n_ref: cfg.get("rank.n_ref", d.n_ref)?,
        ranks: cfg.list("rank.ranks", d.ranks)?,
        betas: cfg.list("rank.betas", d.betas)?,
        t0: cfg.get("rank.t0", d.t0)?,
        slope_tol: cfg.get("rank.slope_tol", d.slope_tol)?,
    })
}

fn cmd_verify_rank(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let rv = rank_verification(cfg)?;
    let outcomes = verify_rank(&rv)?;
    let mut out = Outcome::new();
    for o in &outcomes {
        let r = &o.report;
        sink.csv(&mut out, &format!("rank_beta{}.csv", r.beta), |w| r.write_csv(w))?;
        out.check(
            o.pass(rv.slope_tol),
            format!(
                "beta {}: slope {:.4} <= {:.4}, decreasing {}",
                r.beta,
                r.fitted_slope,
                o.slope_bound(rv.slope_tol),
                o.decreasing
            ),
        );
    }
    sink.csv(&mut out, "rank_summary.csv", |w| {
        writeln!(w, "beta,slope,slope_theory,bound,decreasing,pass")?;
        for o in &outcomes {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(o.report.beta),
                fmt_f64(o.report.fitted_slope),
                fmt_f64(o.report.slope_theory()),
                fmt_f64(o.slope_bound(rv.slope_tol)),
                o.decreasing,
                o.pass(rv.slope_tol)
            )?;
        }
        Ok(())
    })?;
    Ok(out)
}

fn clipped_problem(cfg: &Config, section: &str, d: ClippedProblem) -> Result<ClippedProblem> {
    let key = |k: &str| format!("{section}.{k}");
    Ok(ClippedProblem {
        cells: cfg.get(&key("cells"), d.cells)?,
        length: cfg.get(&key("length"), d.length)?,
        diffusivity: [cfg.get(&key("d1"), d.diffusivity[0])?, cfg.get(&key("d2"), d.diffusivity[1])?],
        decay: [cfg.get(&key("lambda1"), d.decay[0])?, cfg.get(&key("lambda2"), d.decay[1])?],
        source: cfg.get(&key("source"), d.source)?,
        clip: cfg.clip_box(section, d.clip)?,
        noise: cfg.get(&key("noise"), d.noise)?,
        seed: cfg.get("seed", d.seed)?,
    })
}

pub fn factorial_config(cfg: &Config) -> Result<FactorialConfig> {
    let d = FactorialConfig::default();
    Ok(FactorialConfig {
        problem: clipped_problem(cfg, "picard", d.problem)?,
        t0_max: cfg.get("picard.t0_max", d.t0_max)?,
        nodes: cfg.get("picard.nodes", d.nodes)?,
        k_max: cfg.get("picard.k_max", d.k_max)?,
        beta: cfg.get("picard.beta", d.beta)?,
    })
}

pub fn taylor_config(cfg: &Config) -> Result<TaylorConfig> {
    let d = TaylorConfig::default();
    Ok(TaylorConfig {
        t0: cfg.get("taylor.t0", d.t0)?,
        nodes: cfg.get("taylor.nodes", d.nodes)?,
        k_max: cfg.get("taylor.k_max", d.k_max)?,
        cells: cfg.get("taylor.cells", d.cells)?,
    })
}

pub fn reference_config(cfg: &Config) -> Result<ReferenceConfig> {
    let d = ReferenceConfig::default();
    Ok(ReferenceConfig {
        regime: cfg.get("reference.regime", d.regime)?,
        cells: cfg.get("reference.cells", d.cells)?,
        length: cfg.get("reference.length", d.length)?,
        clip: cfg.clip_box("reference", d.clip)?,
        noise: cfg.get("reference.noise", d.noise)?,
        seed: cfg.get("seed", d.seed)?,
        t0_max: cfg.get("reference.t0_max", d.t0_max)?,
        nodes: cfg.get("reference.nodes", d.nodes)?,
        beta: cfg.get("reference.beta", d.beta)?,
        substeps: cfg.get("reference.substeps", d.substeps)?,
        k_max: cfg.get("reference.k_max", d.k_max)?,
        tol: cfg.get("reference.tol", d.tol)?,
    })
}

fn cmd_verify_picard(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let mut out = Outcome::new();

    let fc = factorial_config(cfg)?;
    let f = verify_factorial(&fc)?;
    sink.csv(&mut out, "picard_trace.csv", |w| f.write_csv(w))?;
    out.note(format!(
        "horizon T0 = {} after {} halvings (B = {:.4}, C0 = {:.4})",
        f.horizon.t0, f.horizon.halvings, f.horizon.lipschitz, f.horizon.c0
    ));
    out.check(
        f.pass(),
        format!(
            "factorial ratios: worst eta_(k+1)/eta_k is {:.4} of 2BT0/(k+1) over {} iterations",
            f.worst_ratio,
            f.trace.steps.len()
        ),
    );

    let t = verify_taylor(&taylor_config(cfg)?)?;
    sink.csv(&mut out, "taylor.csv", |w| t.write_csv(w))?;
    out.check(
        t.pass(),
        format!("u' = u iterates vs Taylor partial sums: max error {:.3e}", t.max_error()),
    );

    let r = verify_reference(&reference_config(cfg)?)?;
    sink.csv(&mut out, "picard_reference.csv", |w| {
        writeln!(w, "t0,lipschitz,halvings,iterations,richardson_coarse,richardson_fine,discrepancy,threshold,pass")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.horizon.t0),
            fmt_f64(r.horizon.lipschitz),
            r.horizon.halvings,
            r.trace.steps.len(),
            fmt_f64(r.richardson.coarse_gap),
            fmt_f64(r.richardson.fine_gap),
            fmt_f64(r.discrepancy),
            fmt_f64(r.threshold()),
            r.pass()
        )
    })?;
    sink.csv(&mut out, "picard_reference_trace.csv", |w| r.trace.write_csv(w))?;
    out.check(
        r.pass(),
        format!(
            "Picard vs reference on [0, {}]: weighted discrepancy {:.3e} <= {:.3e} (Richardson ratio {:.3})",
            r.horizon.t0,
            r.discrepancy,
            r.threshold(),
            r.richardson.ratio()
        ),
    );
    Ok(out)
}

pub fn constructive_config(cfg: &Config) -> Result<ConstructiveConfig> {
    let d = ConstructiveConfig::default();
    let seed = cfg.get("seed", 0u64)?;
    let s = SurrogateConfig::new(seed);
    let surrogate = SurrogateConfig {
        train: TrainConfig {
            lr: cfg.get("surrogate.lr", s.train.lr)?,
            batch_size: cfg.get("surrogate.batch_size", s.train.batch_size)?,
            epochs: cfg.get("surrogate.epochs", s.train.epochs)?,
            seed,
        },
        n_samples: cfg.get("surrogate.samples", s.n_samples)?,
        grid_per_axis: cfg.get("surrogate.grid_per_axis", s.grid_per_axis)?,
        schedule: cfg.schedule("surrogate.schedule", s.schedule)?,
    };
    Ok(ConstructiveConfig {
        problem: clipped_problem(cfg, "constructive", d.problem)?,
        t0_max: cfg.get("constructive.t0_max", d.t0_max)?,
        nodes: cfg.get("constructive.nodes", d.nodes)?,
        beta: cfg.get("constructive.beta", d.beta)?,
        eps: cfg.list("constructive.eps", d.eps)?,
        rank_max: cfg.get("constructive.rank_max", d.rank_max)?,
        surrogate,
        rank_exponent_tol: cfg.get("constructive.rank_exponent_tol", d.rank_exponent_tol)?,
        param_slope_tol: cfg.get("constructive.param_slope_tol", d.param_slope_tol)?,
    })
}

fn cmd_verify_constructive(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let cc = constructive_config(cfg)?;
    let o = verify_constructive(&cc)?;
    let mut out = Outcome::new();
    sink.csv(&mut out, "constructive.csv", |w| o.write_csv(w))?;
    for r in &o.rows {
        out.note(format!(
            "eps {}: k = {}, N = {}, {} params (fit {:.3e}), weighted error {:.4e}",
            r.eps, r.k, r.rank, r.n_params, r.surrogate_err, r.weighted_err
        ));
    }
    out.check(o.monotone(), "weighted error non-increasing as eps shrinks");
    out.check(
        o.rows.iter().all(|r| r.surrogate_met),
        "every surrogate reaches its target accuracy",
    );
    out.check(
        o.param_slope <= o.param_slope_bound(cc.param_slope_tol),
        format!(
            "parameter-count slope {:.4} <= {:.4}",
            o.param_slope,
            o.param_slope_bound(cc.param_slope_tol)
        ),
    );
    out.check(
        o.rank_scaling_ok(cc.rank_exponent_tol),
        format!(
            "rank exponent {:.4} within {} of {:.4}",
            o.rank_slope,
            cc.rank_exponent_tol,
            o.rank_exponent_theory()
        ),
    );
    Ok(out)
}

fn cmd_report(cfg: &Config, sink: &Sink) -> Result<Outcome> {
    let inputs: Vec<String> = cfg.list("report.inputs", Vec::new())?;
    let d1: f64 = cfg.get("report.d1", 0.01)?;
    let d2: f64 = cfg.get("report.d2", 0.1)?;
    let params = GMParams::classical(cfg.get("report.source", 0.1)?);
    let validation = validate_assumptions(&params, d1, d2, &[]);
    let mut out = Outcome::new();
    sink.csv(&mut out, "report.txt", |w| {
        writeln!(w, "== config")?;
        write!(w, "{cfg}")?;
        writeln!(w, "== assumption validation (classical reaction, d1 = {d1}, d2 = {d2})")?;
        write!(w, "{validation}")?;
        for dir in &inputs {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            for f in files {
                writeln!(w, "== {}", f.display())?;
                write!(w, "{}", fs::read_to_string(&f)?)?;
            }
        }
        Ok(())
    })?;
    out.note(format!("report over {} input directories", inputs.len()));
    Ok(out)
}
