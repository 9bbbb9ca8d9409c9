//! Rollout evaluation over test trajectories and the multi-seed desk study.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{run, Command, Config};
use crate::basis::Domain;
use crate::dataset::{load_trajectory, Manifest, Split, Trajectory};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::operator::{read_model, relative_l2, rollout, LossCurve, LossRow, OneStepData, OperatorModel, SampleLoss};

const CHANNELS: [&str; 2] = ["u", "v"];

/// Non-diverged trajectories of one split, in manifest order.
pub fn load_trajectories(dir: &Path, domain: &Domain, split: Split) -> Result<Vec<Trajectory>> {
    let manifest = Manifest::load(dir)?;
    manifest
        .usable(split)
        .map(|e| load_trajectory(&dir.join(&e.file), domain))
        .collect()
}

pub fn load_split(dir: &Path, domain: &Domain, split: Split) -> Result<OneStepData> {
    let mut data = OneStepData::new();
    for t in load_trajectories(dir, domain, split)? {
        data.push(t.s_eq, t.field);
    }
    Ok(data)
}

/// Per-run, per-regime mean errors and their spread across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCell {
    pub model: String,
    pub regime: f64,
    pub channel: &'static str,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    /// Rollouts that left the divergence threshold; they count as infinite error.
    pub diverged: usize,
    /// The run-level values behind `mean` and `std`.
    pub per_run: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ordering {
    pub regime: f64,
    pub channel: &'static str,
    pub first: f64,
    pub second: f64,
    pub first_lower: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalTable {
    pub cells: Vec<EvalCell>,
}

/// Sample standard deviation; 0 for a single value.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalTable {
    pub fn cell(&self, model: &str, regime: f64, channel: &str) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.regime == regime && c.channel == channel)
    }

    /// Compares the means of two models cell by cell.
    pub fn ordering(&self, first: &str, second: &str) -> Vec<Ordering> {
        self.cells
            .iter()
            .filter(|c| c.model == first)
            .filter_map(|a| {
                let b = self.cell(second, a.regime, a.channel)?;
                Some(Ordering {
                    regime: a.regime,
                    channel: a.channel,
                    first: a.mean,
                    second: b.mean,
                    first_lower: a.mean < b.mean,
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model,regime,channel,mean,std,runs,diverged")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.model,
                c.regime,
                c.channel,
                fmt_f64(c.mean),
                fmt_f64(c.std),
                c.runs,
                c.diverged
            )?;
        }
        Ok(())
    }

    pub fn write_runs_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model,run,regime,channel,error")?;
        for c in &self.cells {
            for (r, e) in c.per_run.iter().enumerate() {
                writeln!(w, "{},{r},{},{},{}", c.model, c.regime, c.channel, fmt_f64(*e))?;
            }
        }
        Ok(())
    }
}

/// Rolls every checkpoint out over the test split. Each run contributes the
/// mean error per regime and channel; cells report mean and standard
/// deviation over runs. With `inject_truth` the truth replaces predictions.
pub fn evaluate_runs(
    data_dir: &Path,
    domain: &Domain,
    runs: &[(String, Vec<PathBuf>)],
    inject_truth: bool,
) -> Result<EvalTable> {
    let test = load_trajectories(data_dir, domain, Split::Test)?;
    if test.is_empty() {
        return Err(Error::Parameter("no usable test trajectories".into()));
    }
    let mut regimes: Vec<f64> = test.iter().map(|t| t.s_eq).collect();
    regimes.sort_by(f64::total_cmp);
    regimes.dedup();

    let mut table = EvalTable::default();
    for (name, paths) in runs {
        // errors[run][trajectory] = per-channel error, None when diverged.
        let mut errors: Vec<Vec<Option<[f64; 2]>>> = Vec::with_capacity(paths.len());
        for path in paths {
            let model: OperatorModel = read_model(BufReader::new(File::open(path)?))?;
            let model = model.on_grid(domain)?;
            let errs = test
                .par_iter()
                .map(|t| {
                    let times = t.field.times();
                    let pred = if inject_truth {
                        t.field.clone()
                    } else {
                        match rollout(&model, t.field.snapshot(0), t.s_eq, times) {
                            Ok(p) => p,
                            Err(Error::Divergence { .. }) => return Ok(None),
                            Err(e) => return Err(e),
                        }
                    };
                    Ok(Some(relative_l2(&pred, &t.field)?.per_channel))
                })
                .collect::<Result<Vec<_>>>()?;
            errors.push(errs);
        }
        for &s in &regimes {
            for (c, &channel) in CHANNELS.iter().enumerate() {
                let mut diverged = 0;
                let per_run: Vec<f64> = errors
                    .iter()
                    .map(|errs| {
                        let vals: Vec<f64> = test
                            .iter()
                            .zip(errs)
                            .filter(|(t, _)| t.s_eq == s)
                            .map(|(_, e)| match e {
                                Some(v) => v[c],
                                None => {
                                    diverged += 1;
                                    f64::INFINITY
                                }
                            })
                            .collect();
                        vals.iter().sum::<f64>() / vals.len() as f64
                    })
                    .collect();
                let (mean, std) = mean_std(&per_run);
                table.cells.push(EvalCell {
                    model: name.clone(),
                    regime: s,
                    channel,
                    mean,
                    std,
                    runs: per_run.len(),
                    diverged,
                    per_run,
                });
            }
        }
    }
    Ok(table)
}

/// One trained model of the desk study.
#[derive(Clone, Debug)]
pub struct StudyRun {
    pub label: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub curve: LossCurve,
}

impl StudyRun {
    /// Ratio of the epoch-1 to the final train loss, channel-averaged.
    pub fn train_drop(&self) -> f64 {
        let avg = |r: &LossRow| 0.5 * (r.train.u + r.train.v);
        match (self.curve.rows.first(), self.curve.rows.last()) {
            (Some(a), Some(b)) => avg(a) / avg(b),
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Study {
    pub runs: Vec<StudyRun>,
    pub table: EvalTable,
    pub eval_dir: PathBuf,
}

/// Generates the dataset, trains each `(label, basis)` model for every seed
/// and evaluates all of them. `base` supplies the data, model and training
/// keys; the basis, seed, data directory and evaluation keys are set here.
pub fn run_study(
    base: &Config,
    out: &Path,
    models: &[(&str, &str)],
    seeds: &[u64],
    mut log: impl FnMut(&str),
) -> Result<Study> {
    let data_dir = out.join("data");
    let gen = run(Command::GenData, base, &data_dir)?;
    gen.summary.iter().for_each(|l| log(l));
    let data = data_dir.to_string_lossy().into_owned();

    let mut runs = Vec::new();
    for &(label, basis) in models {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.set("data.dir", &data)?;
            cfg.set("model.basis", basis)?;
            cfg.set("seed", &seed.to_string())?;
            let dir = out.join(format!("{label}-s{seed}"));
            log(&format!("training {label} seed {seed}"));
            let res = run(Command::Train, &cfg, &dir)?;
            res.summary.iter().for_each(|l| log(l));
            let curve = read_loss_csv(&dir.join("loss.csv"))?;
            runs.push(StudyRun {
                label: label.to_string(),
                seed,
                dir,
                curve,
            });
        }
    }

    let mut cfg = base.clone();
    cfg.set("data.dir", &data)?;
    let labels: Vec<&str> = models.iter().map(|m| m.0).collect();
    cfg.set("eval.models", &labels.join(","))?;
    for label in &labels {
        let paths: Vec<String> = runs
            .iter()
            .filter(|r| r.label == *label)
            .map(|r| r.dir.join("model.nopm").to_string_lossy().into_owned())
            .collect();
        cfg.set(&format!("eval.{label}"), &paths.join(","))?;
    }
    cfg.set("eval.ordering", "true")?;
    let eval_dir = out.join("eval");
    let res = run(Command::Evaluate, &cfg, &eval_dir)?;
    res.summary.iter().for_each(|l| log(l));
    let domain = super::data_domain(&cfg)?;
    let groups: Vec<(String, Vec<PathBuf>)> = labels
        .iter()
        .map(|l| {
            let p = runs.iter().filter(|r| r.label == *l).map(|r| r.dir.join("model.nopm")).collect();
            (l.to_string(), p)
        })
        .collect();
    let table = evaluate_runs(&data_dir, &domain, &groups, false)?;
    Ok(Study { runs, table, eval_dir })
}

/// Parses a loss CSV written by `train` (comment lines are skipped).
pub fn read_loss_csv(path: &Path) -> Result<LossCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(LossCurve::HEADER) {
        return Err(Error::Format(format!("{}: bad loss header", path.display())));
    }
    let bad = |l: &str| Error::Format(format!("bad loss row {l:?}"));
    let rows = lines
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 5 {
                return Err(bad(l));
            }
            let f = |i: usize| c[i].parse::<f64>().map_err(|_| bad(l));
            let loss = |u: f64, v: f64| SampleLoss {
                joint: f64::NAN,
                u,
                v,
            };
            Ok(LossRow {
                epoch: c[0].parse().map_err(|_| bad(l))?,
                train: loss(f(1)?, f(2)?),
                test: loss(f(3)?, f(4)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(LossCurve { rows })
}
