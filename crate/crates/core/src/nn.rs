//! Dense ReLU networks with hand-written reverse mode, Adam, and the
//! pointwise surrogate for `G̃`.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::gm::{ClipBox, Nonlinearity};
use crate::io::{expect_magic, read_f64s, read_u16, read_u32, write_f64s, write_u16, write_u32};

/// A fully connected network; ReLU after every layer but the last.
///
/// Parameters live in one flat vector: for each layer the weight matrix
/// `(out, in)` in row-major order, then the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward_batch`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// He-uniform weights and zero biases.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1]] {
                *p = rng.gen_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(dim_err(net.params.len(), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("weight block")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer) + o * i;
        ArrayView1::from(&self.params[off..off + o])
    }

    fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer) + o * i;
        &mut self.params[off..off + o]
    }

    fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        &mut self.params[off..off + o * i]
    }

    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.n_inputs() {
            return Err(dim_err(format!("{} inputs", self.n_inputs()), x.ncols()));
        }
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weight(l).t());
            z += &self.bias(l);
            if l + 1 < self.n_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        Ok((h, MlpCache { inputs }))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row");
        Ok(self.forward_batch(view)?.0.into_raw_vec_and_offset().0)
    }

    /// Parameter gradient (summed over the batch) and input gradient.
    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.n_params()];
        let mut g = upstream.to_owned();
        for l in (0..self.n_layers()).rev() {
            let input = &cache.inputs[l];
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let gw = g.t().dot(input);
            grads[off..off + o * i].copy_from_slice(gw.as_slice().expect("contiguous"));
            for (dst, col) in grads[off + o * i..off + o * i + o].iter_mut().zip(g.axis_iter(Axis(1))) {
                *dst = col.sum();
            }
            let mut gin = g.dot(&self.weight(l));
            if l > 0 {
                // ReLU'(z) = 1 iff z > 0; the stored input is max(z, 0).
                gin.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            g = gin;
        }
        (grads, g)
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates with the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Optimizer settings shared by the surrogate and the operator models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter(
                "learning rate, batch size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

const MLPW_MAGIC: &[u8; 4] = b"MLPW";
const MLPW_VERSION: u16 = 1;

pub fn write_mlp<W: Write>(mut w: W, net: &Mlp) -> Result<()> {
    w.write_all(MLPW_MAGIC)?;
    write_u16(&mut w, MLPW_VERSION)?;
    write_u32(&mut w, net.sizes.len() as u32)?;
    for &s in &net.sizes {
        write_u32(&mut w, s as u32)?;
    }
    write_f64s(&mut w, net.params.iter().copied())?;
    Ok(())
}

pub fn read_mlp<R: Read>(mut r: R) -> Result<Mlp> {
    expect_magic(&mut r, MLPW_MAGIC)?;
    let version = read_u16(&mut r)?;
    if version != MLPW_VERSION {
        return Err(Error::Format(format!("unsupported MLPW version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let sizes: Vec<usize> = (0..n)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let mut net = Mlp::zeros(&sizes).map_err(|e| Error::Format(e.to_string()))?;
    net.params = read_f64s(&mut r, net.n_params())?;
    Ok(net)
}

/// The `k`-th point of the Halton sequence in base `base`.
fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let (mut inv, mut f) = (0.0, 1.0 / base as f64);
    while k > 0 {
        inv += (k % base) as f64 * f;
        k /= base;
        f /= base as f64;
    }
    inv
}

/// Halton points in `[0, 1)^dim`, skipping the origin.
pub fn halton(count: usize, dim: usize) -> Array2<f64> {
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    assert!(dim <= PRIMES.len(), "Halton dimension");
    Array2::from_shape_fn((count, dim), |(k, d)| radical_inverse(k as u64 + 1, PRIMES[d]))
}

/// An MLP approximating `G̃(x, u, v)` on `Ω × box`.
///
/// Inputs are mapped affinely onto `[-1, 1]` and `(u, v)` is clamped to the
/// box; outputs are rescaled by a fixed per-channel affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub net: Mlp,
    pub clip: ClipBox,
    /// Domain side lengths, one per spatial dimension.
    pub lengths: Vec<f64>,
    pub out_shift: [f64; 2],
    pub out_scale: [f64; 2],
}

impl Surrogate {
    fn encode(&self, x: &[f64], u: f64, v: f64, row: &mut [f64]) {
        for (d, (&xi, &l)) in x.iter().zip(&self.lengths).enumerate() {
            row[d] = 2.0 * xi / l - 1.0;
        }
        let n = self.lengths.len();
        let (u, v) = self.clip.clamp(u, v);
        row[n] = 2.0 * (u - self.clip.lo[0]) / (self.clip.hi[0] - self.clip.lo[0]) - 1.0;
        row[n + 1] = 2.0 * (v - self.clip.lo[1]) / (self.clip.hi[1] - self.clip.lo[1]) - 1.0;
    }

    /// Evaluates many points; rows of `xs` hold `(x, u, v)`.
    pub fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        let n = self.lengths.len();
        let mut enc = Array2::zeros((xs.nrows(), n + 2));
        for (row, mut out) in xs.outer_iter().zip(enc.outer_iter_mut()) {
            let r = row.to_vec();
            self.encode(&r[..n], r[n], r[n + 1], out.as_slice_mut().expect("row"));
        }
        let mut y = self.net.forward_batch(enc.view()).expect("encoded width").0;
        for mut r in y.outer_iter_mut() {
            for c in 0..2 {
                r[c] = self.out_shift[c] + self.out_scale[c] * r[c];
            }
        }
        y
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }
}

impl Nonlinearity for Surrogate {
    fn eval(&self, x: &[f64], u: f64, v: f64) -> [f64; 2] {
        let mut row = vec![0.0; self.lengths.len() + 2];
        self.encode(x, u, v, &mut row);
        let y = self.net.forward(&row).expect("encoded width");
        [
            self.out_shift[0] + self.out_scale[0] * y[0],
            self.out_shift[1] + self.out_scale[1] * y[1],
        ]
    }
}

/// Hidden-layer schedule tried in order by [`fit_surrogate`].
pub const SURROGATE_SCHEDULE: [&[usize]; 3] = [&[64, 64], &[128, 128], &[128, 128, 128]];

/// Settings of [`fit_surrogate`].
#[derive(Clone, Debug)]
pub struct SurrogateConfig {
    pub train: TrainConfig,
    pub n_samples: usize,
    /// Validation points per input axis.
    pub grid_per_axis: usize,
    pub schedule: Vec<Vec<usize>>,
}

impl SurrogateConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            train: TrainConfig {
                lr: 1e-2,
                batch_size: 256,
                epochs: 300,
                seed,
            },
            n_samples: 16384,
            grid_per_axis: 64,
            schedule: SURROGATE_SCHEDULE.iter().map(|s| s.to_vec()).collect(),
        }
    }
}

/// One attempted architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateStage {
    pub hidden: Vec<usize>,
    pub n_params: usize,
    pub achieved: f64,
}

#[derive(Clone, Debug)]
pub struct SurrogateFit {
    pub surrogate: Surrogate,
    /// Dense-grid L∞ error of the returned surrogate.
    pub achieved: f64,
    pub target_met: bool,
    pub stages: Vec<SurrogateStage>,
}

/// Tensor grid over the input box, rows `(x, u, v)`.
fn validation_grid(lengths: &[f64], clip: &ClipBox, per_axis: usize) -> Array2<f64> {
    let dims = lengths.len() + 2;
    let total = per_axis.pow(dims as u32);
    let axis = |d: usize, k: usize| {
        let t = k as f64 / (per_axis - 1) as f64;
        if d < lengths.len() {
            // Cell-center style interior samples in space.
            lengths[d] * (k as f64 + 0.5) / per_axis as f64
        } else {
            let c = d - lengths.len();
            clip.lo[c] + t * (clip.hi[c] - clip.lo[c])
        }
    };
    Array2::from_shape_fn((total, dims), |(p, d)| {
        let k = (p / per_axis.pow((dims - 1 - d) as u32)) % per_axis;
        axis(d, k)
    })
}

fn targets(target: &dyn Nonlinearity, pts: ArrayView2<f64>, n_space: usize) -> Array2<f64> {
    let mut y = Array2::zeros((pts.nrows(), 2));
    for (row, mut out) in pts.outer_iter().zip(y.outer_iter_mut()) {
        let r = row.to_vec();
        let g = target.eval(&r[..n_space], r[n_space], r[n_space + 1]);
        out[0] = g[0];
        out[1] = g[1];
    }
    y
}

fn linf(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Fits `target` on `Ω × box` until the dense-grid L∞ error is at most
/// `eps`, widening and deepening along the schedule. The best surrogate
/// found is returned even when no stage meets `eps`.
pub fn fit_surrogate(
    target: &dyn Nonlinearity,
    clip: &ClipBox,
    lengths: &[f64],
    eps: f64,
    cfg: &SurrogateConfig,
) -> Result<SurrogateFit> {
    let mut fits = fit_surrogate_sweep(target, clip, lengths, &[eps], cfg)?;
    Ok(fits.remove(0))
}

/// [`fit_surrogate`] for several accuracies sharing one set of trained
/// stages; each stage is trained at most once. Results follow `eps` order.
pub fn fit_surrogate_sweep(
    target: &dyn Nonlinearity,
    clip: &ClipBox,
    lengths: &[f64],
    eps: &[f64],
    cfg: &SurrogateConfig,
) -> Result<Vec<SurrogateFit>> {
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::Parameter(format!("target accuracy must lie in (0, 1), got {e}")));
    }
    if cfg.schedule.is_empty() {
        return Err(Error::Parameter("empty surrogate schedule".into()));
    }
    cfg.train.validate()?;
    let n_space = lengths.len();
    let dims = n_space + 2;

    let unit = halton(cfg.n_samples, dims);
    let mut train_x = unit.clone();
    for mut row in train_x.outer_iter_mut() {
        for d in 0..dims {
            row[d] = if d < n_space {
                lengths[d] * row[d]
            } else {
                let c = d - n_space;
                clip.lo[c] + row[d] * (clip.hi[c] - clip.lo[c])
            };
        }
    }
    let train_y = targets(target, train_x.view(), n_space);
    let grid = validation_grid(lengths, clip, cfg.grid_per_axis);
    let grid_y = targets(target, grid.view(), n_space);

    let mut shift = [0.0; 2];
    let mut scale = [1.0; 2];
    for c in 0..2 {
        let col = train_y.column(c);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        shift[c] = 0.5 * (lo + hi);
        scale[c] = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    }

    let mut trained: Vec<(Surrogate, f64)> = Vec::new();
    let train_stage = |stage: usize| -> Result<(Surrogate, f64)> {
        let mut sizes = vec![dims];
        sizes.extend(&cfg.schedule[stage]);
        sizes.push(2);
        let seed = cfg.train.seed.wrapping_add(stage as u64);
        let mut surrogate = Surrogate {
            net: Mlp::zeros(&sizes)?,
            clip: *clip,
            lengths: lengths.to_vec(),
            out_shift: shift,
            out_scale: scale,
        };
        train_surrogate(&mut surrogate, &train_x, &train_y, &cfg.train, seed)?;
        let achieved = linf(&surrogate.eval_batch(grid.view()), &grid_y);
        Ok((surrogate, achieved))
    };

    let mut fits = Vec::with_capacity(eps.len());
    for &e in eps {
        // Stages are tried in schedule order until one meets `e`.
        let mut used = 0;
        while used < cfg.schedule.len() {
            if used == trained.len() {
                trained.push(train_stage(used)?);
            }
            used += 1;
            if trained[used - 1].1 <= e {
                break;
            }
        }
        let best = (0..used)
            .min_by(|&a, &b| trained[a].1.total_cmp(&trained[b].1))
            .expect("at least one stage");
        let stages = trained[..used]
            .iter()
            .zip(&cfg.schedule)
            .map(|((s, achieved), hidden)| SurrogateStage {
                hidden: hidden.clone(),
                n_params: s.n_params(),
                achieved: *achieved,
            })
            .collect();
        fits.push(SurrogateFit {
            surrogate: trained[best].0.clone(),
            achieved: trained[best].1,
            target_met: trained[best].1 <= e,
            stages,
        });
    }
    Ok(fits)
}

/// Mean-squared error on normalized outputs, Adam with cosine decay.
/// Output weights start at zero so the initial net is the midrange constant.
fn train_surrogate(
    s: &mut Surrogate,
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = s.net.sizes().to_vec();
    s.net = Mlp::init(&sizes, &mut rng)?;
    let last = s.net.n_layers() - 1;
    s.net.weight_mut(last).fill(0.0);
    s.net.bias_mut(last).fill(0.0);

    let n_space = s.lengths.len();
    let mut enc = Array2::zeros((xs.nrows(), n_space + 2));
    for (row, mut out) in xs.outer_iter().zip(enc.outer_iter_mut()) {
        let r = row.to_vec();
        s.encode(&r[..n_space], r[n_space], r[n_space + 1], out.as_slice_mut().expect("row"));
    }
    let mut target = ys.clone();
    for mut r in target.outer_iter_mut() {
        for c in 0..2 {
            r[c] = (r[c] - s.out_shift[c]) / s.out_scale[c];
        }
    }

    let mut adam = Adam::new(s.net.n_params(), AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..xs.nrows()).collect();
    let batches = order.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches) as f64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let progress = (epoch * batches + b) as f64 / total;
            adam.cfg.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()) + 1e-3 * cfg.lr;
            let bx = enc.select(Axis(0), chunk);
            let by = target.select(Axis(0), chunk);
            let (pred, cache) = s.net.forward_batch(bx.view())?;
            let scale = 2.0 / (chunk.len() * 2) as f64;
            let upstream = (&pred - &by) * scale;
            let (grads, _) = s.net.backward(&cache, upstream.view());
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(s.net.params_mut(), &grads);
        }
    }
    Ok(())
}
