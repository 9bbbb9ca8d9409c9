//! One-step operator network: pointwise lift, spectral blocks, projection.

use std::io::{Read, Write};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use super::spectral::{BasisKind, SpectralCache, SpectralConv};
use super::Real;
use crate::basis::Domain;
use crate::error::{dim_err, Error, Result};
use crate::io::{expect_magic, read_f64, read_f64s, read_u16, read_u32, read_u64, read_u8, write_f64s, write_u16, write_u32, write_u64};

/// `Δt` enters the network as `Δt / DT_SCALE`.
pub const DT_SCALE: f64 = 50.0;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperatorConfig {
    pub basis: BasisKind,
    pub width: usize,
    pub depth: usize,
    /// Retained modes `(K_x, K_y)`; `K_y` is ignored on an interval.
    pub modes: [usize; 2],
    /// Predict `state + network` instead of the next state directly.
    pub residual: bool,
}

impl OperatorConfig {
    /// Desk-scale architecture: width 32, depth 4, 16×16 modes.
    pub fn desk(basis: BasisKind) -> Self {
        Self {
            basis,
            width: 32,
            depth: 4,
            modes: [16, 16],
            residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Parameter("width and depth must be positive".into()));
        }
        Ok(())
    }
}

/// `u, v, s, Δt` plus one coordinate per spatial dimension.
pub fn input_channels(dim: usize) -> usize {
    4 + dim
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Block {
    w: usize,
    b: usize,
    r: usize,
    r_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    lift_w: usize,
    lift_b: usize,
    blocks: Vec<Block>,
    proj_w: usize,
    proj_b: usize,
    total: usize,
}

impl Layout {
    fn new(cin: usize, width: usize, r_lens: &[usize]) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let lift_w = take(width * cin);
        let lift_b = take(width);
        let blocks = r_lens
            .iter()
            .map(|&r_len| Block {
                w: take(width * width),
                b: take(width),
                r: take(r_len),
                r_len,
            })
            .collect();
        let proj_w = take(2 * width);
        let proj_b = take(2);
        Self {
            lift_w,
            lift_b,
            blocks,
            proj_w,
            proj_b,
            total: at,
        }
    }
}

/// A trainable one-step map `(u, v, s, Δt) ↦ (u, v)` on a fixed grid.
#[derive(Clone, Debug)]
pub struct OperatorModel<F: Real = f64> {
    cfg: OperatorConfig,
    domain: Domain,
    convs: Vec<SpectralConv<F>>,
    layout: Layout,
    params: Vec<F>,
}

/// Activations kept by [`OperatorModel::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F: Real = f64> {
    input: Array2<F>,
    /// Input of every block, then the projection input: `depth + 1` entries.
    hidden: Vec<Array2<F>>,
    spectral: Vec<SpectralCache<F>>,
}

fn mat<F: Real>(p: &[F], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, F> {
    ArrayView2::from_shape((rows, cols), &p[off..off + rows * cols]).expect("parameter block")
}

fn mat_mut<F: Real>(p: &mut [F], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, F> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[off..off + rows * cols]).expect("parameter block")
}

fn add_bias<F: Real>(x: &mut Array2<F>, b: &[F]) {
    for (mut row, &bi) in x.axis_iter_mut(Axis(0)).zip(b) {
        row += bi;
    }
}

fn grid3<F: Real>(x: &Array2<F>, ny: usize, nx: usize) -> ArrayView3<'_, F> {
    x.view()
        .into_shape_with_order((x.nrows(), ny, nx))
        .expect("standard layout")
}

fn flat2<F: Real>(x: Array3<F>) -> Array2<F> {
    let (c, ny, nx) = x.dim();
    x.into_shape_with_order((c, ny * nx)).expect("standard layout")
}

impl<F: Real> OperatorModel<F> {
    /// All-zero parameters.
    pub fn zeros(cfg: OperatorConfig, domain: &Domain) -> Result<Self> {
        cfg.validate()?;
        let convs = Self::build_convs(&cfg, domain)?;
        let r_lens: Vec<usize> = convs.iter().map(SpectralConv::n_params).collect();
        let layout = Layout::new(input_channels(domain.dim()), cfg.width, &r_lens);
        Ok(Self {
            cfg,
            domain: domain.clone(),
            convs,
            params: vec![F::zero(); layout.total],
            layout,
        })
    }

    /// Dense weights uniform in `±1/√fan_in`, multipliers uniform in `±1/width`.
    pub fn init(cfg: OperatorConfig, domain: &Domain, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(cfg, domain)?;
        let cin = m.n_inputs();
        let w = cfg.width;
        let lay = m.layout.clone();
        let mut fill = |p: &mut [F], scale: f64| {
            for v in p {
                *v = F::of(rng.gen_range(-scale..scale));
            }
        };
        let s_in = 1.0 / (cin as f64).sqrt();
        let s_w = 1.0 / (w as f64).sqrt();
        fill(&mut m.params[lay.lift_w..lay.lift_b + w], s_in);
        for b in &lay.blocks {
            fill(&mut m.params[b.w..b.b + w], s_w);
            fill(&mut m.params[b.r..b.r + b.r_len], 1.0 / w as f64);
        }
        fill(&mut m.params[lay.proj_w..lay.total], s_w);
        Ok(m)
    }

    pub fn from_params(cfg: OperatorConfig, domain: &Domain, params: Vec<F>) -> Result<Self> {
        let mut m = Self::zeros(cfg, domain)?;
        if params.len() != m.params.len() {
            return Err(dim_err(m.params.len(), params.len()));
        }
        m.params = params;
        Ok(m)
    }

    fn build_convs(cfg: &OperatorConfig, domain: &Domain) -> Result<Vec<SpectralConv<F>>> {
        let ky = if domain.dim() == 1 { 1 } else { cfg.modes[1] };
        let conv = SpectralConv::new(cfg.basis, domain, cfg.modes[0], ky, cfg.width)?;
        Ok(vec![conv; cfg.depth])
    }

    /// The same parameters evaluated on another grid of the same domain.
    /// Meaningful for the cosine basis, whose modes are grid-independent.
    pub fn on_grid(&self, domain: &Domain) -> Result<Self> {
        if (domain.lx(), domain.ly(), domain.dim()) != (self.domain.lx(), self.domain.ly(), self.domain.dim()) {
            return Err(Error::Domain("grid transfer needs the same physical domain".into()));
        }
        let convs = Self::build_convs(&self.cfg, domain)?;
        if convs[0].n_params() != self.convs[0].n_params() {
            return Err(Error::Domain("retained modes differ on the new grid".into()));
        }
        Ok(Self {
            cfg: self.cfg,
            domain: domain.clone(),
            convs,
            layout: self.layout.clone(),
            params: self.params.clone(),
        })
    }

    pub fn config(&self) -> &OperatorConfig {
        &self.cfg
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn n_inputs(&self) -> usize {
        input_channels(self.domain.dim())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    /// The same model in another precision.
    pub fn cast<G: Real>(&self) -> Result<OperatorModel<G>> {
        let params = self.params.iter().map(|p| G::of(p.widen())).collect();
        OperatorModel::from_params(self.cfg, &self.domain, params)
    }

    /// Lift weights `(width, inputs)` for hand-built models.
    pub fn lift_mut(&mut self) -> (ArrayViewMut2<'_, F>, &mut [F]) {
        let (cin, w) = (self.n_inputs(), self.cfg.width);
        let l = &self.layout;
        let (head, tail) = self.params.split_at_mut(l.lift_b);
        (mat_mut(head, l.lift_w, w, cin), &mut tail[..w])
    }

    /// Block `l`: pointwise `W`, bias and spectral multipliers.
    pub fn block_mut(&mut self, l: usize) -> (ArrayViewMut2<'_, F>, &mut [F], &mut [F]) {
        let w = self.cfg.width;
        let b = self.layout.blocks[l];
        let (head, tail) = self.params.split_at_mut(b.b);
        let (bias, rest) = tail.split_at_mut(w);
        (mat_mut(head, b.w, w, w), bias, &mut rest[..b.r_len])
    }

    /// Projection weights `(2, width)` and bias.
    pub fn projection_mut(&mut self) -> (ArrayViewMut2<'_, F>, &mut [F]) {
        let w = self.cfg.width;
        let l = &self.layout;
        let (head, tail) = self.params.split_at_mut(l.proj_b);
        (mat_mut(head, l.proj_w, 2, w), &mut tail[..2])
    }

    /// Stacks `[u, v, s, Δt/DT_SCALE, x/Lx, (y/Ly)]` as `(inputs, cells)`.
    pub fn assemble(&self, state: ArrayView3<f64>, s_eq: f64, dt: f64) -> Result<Array2<F>> {
        let d = &self.domain;
        if state.dim() != (2, d.ny(), d.nx()) {
            return Err(dim_err(format!("(2, {}, {})", d.ny(), d.nx()), format!("{:?}", state.dim())));
        }
        let p = d.n_points();
        let mut x = Array2::zeros((self.n_inputs(), p));
        for c in 0..2 {
            for (dst, &v) in x.row_mut(c).iter_mut().zip(state.index_axis(Axis(0), c).iter()) {
                *dst = F::of(v);
            }
        }
        x.row_mut(2).fill(F::of(s_eq));
        x.row_mut(3).fill(F::of(dt / DT_SCALE));
        for j in 0..d.ny() {
            for i in 0..d.nx() {
                let [cx, cy] = d.cell_center(i, j);
                x[[4, j * d.nx() + i]] = F::of(cx / d.lx());
                if d.dim() == 2 {
                    x[[5, j * d.nx() + i]] = F::of(cy / d.ly());
                }
            }
        }
        Ok(x)
    }

    /// Predicted next state `(2, ny, nx)`.
    pub fn predict(&self, state: ArrayView3<f64>, s_eq: f64, dt: f64) -> Result<Array3<f64>> {
        Ok(self.forward(state, s_eq, dt)?.0.mapv(F::widen))
    }

    pub fn forward(&self, state: ArrayView3<f64>, s_eq: f64, dt: f64) -> Result<(Array3<F>, ForwardCache<F>)> {
        let input = self.assemble(state, s_eq, dt)?;
        let (ny, nx) = (self.domain.ny(), self.domain.nx());
        let (w, cin) = (self.cfg.width, self.n_inputs());
        let p = &self.params;
        let l = &self.layout;
        let mut h = mat(p, l.lift_w, w, cin).dot(&input);
        add_bias(&mut h, &p[l.lift_b..l.lift_b + w]);
        let mut hidden = Vec::with_capacity(self.cfg.depth + 1);
        let mut spectral = Vec::with_capacity(self.cfg.depth);
        for (blk, conv) in l.blocks.iter().zip(&self.convs) {
            let (k, cache) = conv.forward(&p[blk.r..blk.r + blk.r_len], grid3(&h, ny, nx));
            let mut z = mat(p, blk.w, w, w).dot(&h);
            z += &flat2(k);
            add_bias(&mut z, &p[blk.b..blk.b + w]);
            z.mapv_inplace(|v| v.max(F::zero()));
            hidden.push(std::mem::replace(&mut h, z));
            spectral.push(cache);
        }
        let mut out = mat(p, l.proj_w, 2, w).dot(&h);
        add_bias(&mut out, &p[l.proj_b..l.proj_b + 2]);
        hidden.push(h);
        let mut out = out.into_shape_with_order((2, ny, nx)).expect("two channels");
        if self.cfg.residual {
            Zip::from(&mut out).and(&state).for_each(|o, &s| *o += F::of(s));
        }
        Ok((
            out,
            ForwardCache {
                input,
                hidden,
                spectral,
            },
        ))
    }

    /// Adds `∂L/∂θ` to `grads` given `∂L/∂output` of shape `(2, ny, nx)`.
    pub fn backward(&self, cache: &ForwardCache<F>, upstream: ArrayView3<F>, grads: &mut [F]) {
        assert_eq!(grads.len(), self.params.len(), "gradient length");
        let (ny, nx) = (self.domain.ny(), self.domain.nx());
        let w = self.cfg.width;
        let p = &self.params;
        let l = &self.layout;
        let g = upstream
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((2, ny * nx))
            .expect("two channels");
        let h_last = &cache.hidden[self.cfg.depth];
        mat_mut(grads, l.proj_w, 2, w).scaled_add(F::one(), &g.dot(&h_last.t()));
        for (gb, row) in grads[l.proj_b..l.proj_b + 2].iter_mut().zip(g.rows()) {
            *gb += row.sum();
        }
        let mut gh = mat(p, l.proj_w, 2, w).t().dot(&g);
        for (idx, (blk, conv)) in l.blocks.iter().zip(&self.convs).enumerate().rev() {
            let out = &cache.hidden[idx + 1];
            let mut gz = gh;
            gz.zip_mut_with(out, |gv, &o| {
                if o <= F::zero() {
                    *gv = F::zero();
                }
            });
            let h_in = &cache.hidden[idx];
            mat_mut(grads, blk.w, w, w).scaled_add(F::one(), &gz.dot(&h_in.t()));
            for (gb, row) in grads[blk.b..blk.b + w].iter_mut().zip(gz.rows()) {
                *gb += row.sum();
            }
            let gx_spec = conv.backward(
                &p[blk.r..blk.r + blk.r_len],
                &cache.spectral[idx],
                grid3(&gz, ny, nx),
                &mut grads[blk.r..blk.r + blk.r_len],
            );
            gh = mat(p, blk.w, w, w).t().dot(&gz);
            gh += &flat2(gx_spec);
        }
        let cin = self.n_inputs();
        mat_mut(grads, l.lift_w, w, cin).scaled_add(F::one(), &gh.dot(&cache.input.t()));
        for (gb, row) in grads[l.lift_b..l.lift_b + w].iter_mut().zip(gh.rows()) {
            *gb += row.sum();
        }
    }
}

const NOPM_MAGIC: &[u8; 4] = b"NOPM";
const NOPM_VERSION: u16 = 1;

pub fn write_model<W: Write, F: Real>(w: W, m: &OperatorModel<F>) -> Result<()> {
    write_model_tagged(w, m, "")
}

/// Writes a checkpoint followed by a free-form tag (the harness stores the
/// config hash there).
pub fn write_model_tagged<W: Write, F: Real>(mut w: W, m: &OperatorModel<F>, tag: &str) -> Result<()> {
    let c = &m.cfg;
    let d = &m.domain;
    w.write_all(NOPM_MAGIC)?;
    write_u16(&mut w, NOPM_VERSION)?;
    w.write_all(&[c.basis.tag(), c.residual as u8])?;
    for v in [d.dim(), d.nx(), d.ny(), c.width, c.depth, c.modes[0], c.modes[1]] {
        write_u32(&mut w, v as u32)?;
    }
    write_f64s(&mut w, [d.lx(), d.ly()])?;
    write_u64(&mut w, m.params.len() as u64)?;
    write_f64s(&mut w, m.params.iter().map(|p| p.widen()))?;
    write_u32(&mut w, tag.len() as u32)?;
    w.write_all(tag.as_bytes())?;
    Ok(())
}

pub fn read_model<R: Read, F: Real>(r: R) -> Result<OperatorModel<F>> {
    Ok(read_model_tagged(r)?.0)
}

pub fn read_model_tagged<R: Read, F: Real>(mut r: R) -> Result<(OperatorModel<F>, String)> {
    expect_magic(&mut r, NOPM_MAGIC)?;
    let version = read_u16(&mut r)?;
    if version != NOPM_VERSION {
        return Err(Error::Format(format!("unsupported NOPM version {version}")));
    }
    let basis = BasisKind::from_tag(read_u8(&mut r)?)?;
    let residual = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        t => return Err(Error::Format(format!("bad residual flag {t}"))),
    };
    let mut h = [0usize; 7];
    for v in &mut h {
        *v = read_u32(&mut r)? as usize;
    }
    let [dim, nx, ny, width, depth, kx, ky] = h;
    let (lx, ly) = (read_f64(&mut r)?, read_f64(&mut r)?);
    let domain = match dim {
        1 if ny == 1 => Domain::interval(lx, nx),
        2 => Domain::rectangle(lx, ly, nx, ny),
        _ => return Err(Error::Format(format!("bad grid header {dim}D {nx}x{ny}"))),
    }
    .map_err(|e| Error::Format(e.to_string()))?;
    let cfg = OperatorConfig {
        basis,
        width,
        depth,
        modes: [kx, ky],
        residual,
    };
    let n = read_u64(&mut r)? as usize;
    let mut m = OperatorModel::zeros(cfg, &domain).map_err(|e| Error::Format(e.to_string()))?;
    if n != m.params.len() {
        return Err(Error::Format(format!("expected {} parameters, header says {n}", m.params.len())));
    }
    m.params = read_f64s(&mut r, n)?.into_iter().map(F::of).collect();
    let len = read_u32(&mut r)? as usize;
    let mut tag = vec![0u8; len];
    r.read_exact(&mut tag)?;
    let tag = String::from_utf8(tag).map_err(|_| Error::Format("checkpoint tag is not UTF-8".into()))?;
    Ok((m, tag))
}
