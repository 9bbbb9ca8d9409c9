//! One-step training on consecutive snapshot pairs with a relative L² loss.

use std::io::Write;

use ndarray::{Array3, ArrayView3, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::OperatorModel;
use super::Real;
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::io::fmt_f64;
use crate::nn::{Adam, AdamConfig, TrainConfig};

/// Trajectories with their regimes, viewed as `(state_k, state_{k+1})` pairs.
#[derive(Clone, Debug, Default)]
pub struct OneStepData {
    trajectories: Vec<(f64, SpaceTimeField)>,
    pairs: Vec<(usize, usize)>,
}

/// One transition: state, target, regime and step.
pub struct Transition<'a> {
    pub state: ArrayView3<'a, f64>,
    pub target: ArrayView3<'a, f64>,
    pub s_eq: f64,
    pub dt: f64,
}

impl OneStepData {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every consecutive pair of `field`.
    pub fn push(&mut self, s_eq: f64, field: SpaceTimeField) {
        let t = self.trajectories.len();
        self.pairs.extend((0..field.n_times().saturating_sub(1)).map(|k| (t, k)));
        self.trajectories.push((s_eq, field));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, i: usize) -> Transition<'_> {
        let (t, k) = self.pairs[i];
        let (s_eq, f) = &self.trajectories[t];
        Transition {
            state: f.snapshot(k),
            target: f.snapshot(k + 1),
            s_eq: *s_eq,
            dt: f.times()[k + 1] - f.times()[k],
        }
    }
}

/// Joint and per-channel relative errors of one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleLoss {
    pub joint: f64,
    pub u: f64,
    pub v: f64,
}

impl SampleLoss {
    fn add(mut self, o: Self) -> Self {
        self.joint += o.joint;
        self.u += o.u;
        self.v += o.v;
        self
    }

    fn scale(self, a: f64) -> Self {
        Self {
            joint: self.joint * a,
            u: self.u * a,
            v: self.v * a,
        }
    }
}

/// `‖p − t‖ / ‖t‖` over both channels, plus per-channel ratios.
/// Cell areas cancel on a uniform grid.
pub fn relative_loss(pred: ArrayView3<f64>, target: ArrayView3<f64>) -> SampleLoss {
    let mut e = [0.0; 2];
    let mut n = [0.0; 2];
    for c in 0..2 {
        Zip::from(pred.index_axis(Axis(0), c))
            .and(target.index_axis(Axis(0), c))
            .for_each(|&p, &t| {
                e[c] += (p - t) * (p - t);
                n[c] += t * t;
            });
    }
    SampleLoss {
        joint: ((e[0] + e[1]) / (n[0] + n[1])).sqrt(),
        u: (e[0] / n[0]).sqrt(),
        v: (e[1] / n[1]).sqrt(),
    }
}

/// `∂/∂pred` of the joint relative loss: `(p − t) / (‖p − t‖ ‖t‖)`.
fn relative_loss_grad(pred: ArrayView3<f64>, target: ArrayView3<f64>) -> Array3<f64> {
    let diff = &pred - &target;
    let e = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let n = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if e == 0.0 {
        return Array3::zeros(diff.dim());
    }
    diff / (e * n)
}

/// Mean losses of `model` over `data` (zeros when empty).
pub fn evaluate<F: Real>(model: &OperatorModel<F>, data: &OneStepData) -> Result<SampleLoss> {
    if data.is_empty() {
        return Ok(SampleLoss::default());
    }
    let losses: Vec<SampleLoss> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let tr = data.get(i);
            let p = model.predict(tr.state, tr.s_eq, tr.dt)?;
            Ok(relative_loss(p.view(), tr.target))
        })
        .collect::<Result<_>>()?;
    Ok(losses
        .into_iter()
        .fold(SampleLoss::default(), SampleLoss::add)
        .scale(1.0 / data.len() as f64))
}

/// Losses after one epoch. `train*` are running means over the epoch's
/// batches; `test*` are evaluated with the end-of-epoch parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub train: SampleLoss,
    pub test: SampleLoss,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<LossRow>,
}

impl LossCurve {
    pub const HEADER: &'static str = "epoch,train_u,train_v,test_u,test_v";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.train.u),
                fmt_f64(r.train.v),
                fmt_f64(r.test.u),
                fmt_f64(r.test.v)
            )?;
        }
        Ok(())
    }
}

/// Samples per gradient buffer. Groups are fixed by position in the batch,
/// so the summation order does not depend on the thread count.
const GROUP: usize = 4;

/// Gradient of the batch-mean loss and the summed sample losses. Groups of
/// samples accumulate into one buffer each; groups run in parallel and are
/// reduced in index order.
fn batch_gradient<F: Real>(
    model: &OperatorModel<F>,
    data: &OneStepData,
    batch: &[usize],
) -> Result<(Vec<f64>, SampleLoss)> {
    let parts: Vec<(Vec<F>, SampleLoss)> = batch
        .par_chunks(GROUP)
        .map(|group| {
            let mut g = vec![F::zero(); model.n_params()];
            let mut loss = SampleLoss::default();
            for &i in group {
                let tr = data.get(i);
                let (pred, cache) = model.forward(tr.state, tr.s_eq, tr.dt)?;
                let pred = pred.mapv(F::widen);
                loss = loss.add(relative_loss(pred.view(), tr.target));
                let g_out = relative_loss_grad(pred.view(), tr.target).mapv(F::of);
                model.backward(&cache, g_out.view(), &mut g);
            }
            Ok((g, loss))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; model.n_params()];
    let mut total = SampleLoss::default();
    let inv = 1.0 / batch.len() as f64;
    for (g, l) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += inv * b.widen();
        }
        total = total.add(l);
    }
    Ok((grad, total))
}

/// Minimizes the batch-mean joint relative loss with Adam on `f64`
/// master weights; forward and backward passes run in `F`.
/// `on_epoch` sees each row as soon as it is computed.
pub fn train_onestep<F: Real>(
    model: &mut OperatorModel<F>,
    train: &OneStepData,
    test: &OneStepData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LossRow),
) -> Result<LossCurve> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Parameter("no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.n_params(), AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut master: Vec<f64> = model.params().iter().map(|p| p.widen()).collect();
    let mut curve = LossCurve::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = SampleLoss::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (grad, loss) = batch_gradient(model, train, batch)?;
            if !loss.joint.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            running = running.add(loss);
            adam.step(&mut master, &grad);
            for (p, &m) in model.params_mut().iter_mut().zip(&master) {
                *p = F::of(m);
            }
        }
        let row = LossRow {
            epoch,
            train: running.scale(1.0 / train.len() as f64),
            test: evaluate(model, test)?,
        };
        on_epoch(&row);
        curve.rows.push(row);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Domain;
    use crate::operator::{BasisKind, OperatorConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn loss_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(0.0..1.0));
        let t = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(0.5..1.0));
        let a = relative_loss(p.view(), t.view());
        for alpha in [1e-3, 0.7, 42.0] {
            let b = relative_loss((&p * alpha).view(), (&t * alpha).view());
            assert_abs_diff_eq!(a.joint, b.joint, epsilon = 1e-14);
            assert_abs_diff_eq!(a.u, b.u, epsilon = 1e-14);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Array3::from_shape_fn((2, 3, 3), |_| rng.gen_range(0.0..1.0));
        let t = Array3::from_shape_fn((2, 3, 3), |_| rng.gen_range(0.5..1.0));
        let g = relative_loss_grad(p.view(), t.view());
        let h = 1e-7;
        for idx in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.as_slice_mut().unwrap()[idx] += h;
            b.as_slice_mut().unwrap()[idx] -= h;
            let fd = (relative_loss(a.view(), t.view()).joint - relative_loss(b.view(), t.view()).joint) / (2.0 * h);
            assert_abs_diff_eq!(g.as_slice().unwrap()[idx], fd, epsilon = 1e-7);
        }
    }

    fn constant_pairs(d: &Domain, n: usize) -> OneStepData {
        let mut data = OneStepData::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..n {
            let snap = Array3::from_shape_fn((2, d.ny(), d.nx()), |(c, _, _)| {
                1.0 + c as f64 + rng.gen_range(-0.05..0.05)
            });
            let mut v = Array4::zeros((2, 2, d.ny(), d.nx()));
            v.index_axis_mut(Axis(0), 0).assign(&snap);
            v.index_axis_mut(Axis(0), 1).assign(&snap);
            data.push(0.7, SpaceTimeField::new(d.clone(), vec![0.0, 2.0], v).unwrap());
        }
        data
    }

    fn near_identity(d: &Domain, seed: u64) -> OperatorModel {
        let cfg = OperatorConfig {
            basis: BasisKind::NeumannCosine,
            width: 4,
            depth: 1,
            modes: [4, 4],
            residual: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = OperatorModel::init(cfg, d, &mut rng).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p *= 0.01);
        {
            let (mut lw, _) = m.lift_mut();
            lw[[0, 0]] = 1.0;
            lw[[1, 1]] = 1.0;
        }
        {
            let (mut w, _, _) = m.block_mut(0);
            for a in 0..4 {
                w[[a, a]] = 1.0;
            }
        }
        let (mut pw, _) = m.projection_mut();
        pw[[0, 0]] = 1.0;
        pw[[1, 1]] = 1.0;
        m
    }

    #[test]
    fn identity_pairs_fit_quickly_and_deterministically() {
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let data = constant_pairs(&d, 12);
        let cfg = TrainConfig {
            lr: 1e-3,
            batch_size: 4,
            epochs: 5,
            seed: 9,
        };
        let run = || {
            let mut m = near_identity(&d, 4);
            let c = train_onestep(&mut m, &data, &data, &cfg, |_| {}).unwrap();
            (c, m.params().to_vec())
        };
        let (c1, p1) = run();
        let (c2, p2) = run();
        assert_eq!(c1, c2);
        assert_eq!(p1, p2);
        assert!(c1.rows.last().unwrap().test.joint < 1e-2, "{:?}", c1.rows.last());
        let mut buf = Vec::new();
        c1.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with(LossCurve::HEADER));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let data = constant_pairs(&d, 2);
        let mut m = near_identity(&d, 5);
        m.params_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            lr: 1e-3,
            batch_size: 2,
            epochs: 1,
            seed: 0,
        };
        let err = train_onestep(&mut m, &data, &data, &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0 }));
    }
}
