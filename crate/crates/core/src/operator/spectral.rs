//! Spectral convolutions with hand-written adjoints.
//!
//! Both variants act on one sample of shape `(width, ny, nx)` and map it
//! through "transform → per-mode `width × width` multiplier → synthesis".
//! All transforms are separable dense matrix products so that the adjoint
//! of each stage is another product with the same tables.

use std::f64::consts::PI;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView3, Axis};

use super::Real;
use crate::basis::{axis_function, Domain};
use crate::error::{Error, Result};

/// Spectral basis of the convolution layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    /// Neumann Laplacian eigenfunctions (cosine products).
    NeumannCosine,
    /// Periodic Fourier modes on a replicate-padded grid.
    FourierPadded,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NeumannCosine => "neumann-cosine",
            Self::FourierPadded => "fourier-padded",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "neumann-cosine" => Ok(Self::NeumannCosine),
            "fourier-padded" => Ok(Self::FourierPadded),
            other => Err(Error::Config(format!("unknown basis {other:?}"))),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Self::NeumannCosine => 0,
            Self::FourierPadded => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::NeumannCosine),
            1 => Ok(Self::FourierPadded),
            t => Err(Error::Format(format!("unknown basis tag {t}"))),
        }
    }
}

fn standard<F: Real>(a: Array2<F>) -> Array2<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn table<F: Real>(shape: (usize, usize), f: impl Fn((usize, usize)) -> f64) -> Array2<F> {
    Array2::from_shape_fn(shape, |ix| F::of(f(ix)))
}

/// `out[m] = R_m in[m]` (or `R_mᵀ in[m]`) for `(modes, w)` coefficient rows.
fn mix_real<F: Real>(r: &[F], coeffs: &Array2<F>, transpose: bool) -> Array2<F> {
    let (k, w) = coeffs.dim();
    let mut out = Array2::zeros((k, w));
    let cin = coeffs.as_slice().expect("standard layout");
    let o = out.as_slice_mut().expect("fresh array");
    for m in 0..k {
        let rm = &r[m * w * w..(m + 1) * w * w];
        let x = &cin[m * w..(m + 1) * w];
        let y = &mut o[m * w..(m + 1) * w];
        if transpose {
            for (b, &xb) in x.iter().enumerate() {
                for (ya, &rv) in y.iter_mut().zip(&rm[b * w..(b + 1) * w]) {
                    *ya += rv * xb;
                }
            }
        } else {
            for (a, ya) in y.iter_mut().enumerate() {
                *ya = rm[a * w..(a + 1) * w]
                    .iter()
                    .zip(x)
                    .fold(F::zero(), |acc, (&p, &q)| acc + p * q);
            }
        }
    }
    out
}

/// `d[m] += sign · g[m] ⊗ x[m]` for `(modes, w)` rows.
fn outer_accumulate<F: Real>(d: &mut [F], g: &[F], x: &[F], w: usize, sign: F) {
    for (m, (gm, xm)) in g.chunks_exact(w).zip(x.chunks_exact(w)).enumerate() {
        let dm = &mut d[m * w * w..(m + 1) * w * w];
        for (a, &ga) in gm.iter().enumerate() {
            let s = sign * ga;
            if s == F::zero() {
                continue;
            }
            for (dv, &xb) in dm[a * w..(a + 1) * w].iter_mut().zip(xm) {
                *dv += s * xb;
            }
        }
    }
}

/// Neumann cosine convolution on the lowest `kx × ky` block of modes.
#[derive(Clone, Debug)]
pub struct CosineConv<F: Real = f64> {
    /// `(nx, kx)`: `a_mx(x_i)`.
    tx: Array2<F>,
    /// `(ky, ny)`: `a_my(y_j)`.
    ty: Array2<F>,
    area: F,
    width: usize,
}

/// Coefficients of the input, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct CosineCache<F: Real = f64> {
    /// `(ky * kx, width)`, mode-major.
    coeffs: Array2<F>,
}

impl<F: Real> CosineConv<F> {
    pub fn new(domain: &Domain, kx: usize, ky: usize, width: usize) -> Result<Self> {
        if kx == 0 || ky == 0 {
            return Err(Error::Parameter("retained modes must be positive".into()));
        }
        for (axis, k, n) in [('x', kx, domain.nx()), ('y', ky, domain.ny())] {
            if k > n {
                return Err(Error::Capacity {
                    axis,
                    requested: k,
                    available: n,
                });
            }
        }
        let (nx, ny) = (domain.nx(), domain.ny());
        let tx = table((nx, kx), |(i, m)| {
            axis_function(m, domain.lx(), (i as f64 + 0.5) * domain.dx())
        });
        let ty = table((ky, ny), |(m, j)| {
            axis_function(m, domain.ly(), (j as f64 + 0.5) * domain.dy())
        });
        Ok(Self {
            tx,
            ty,
            area: F::of(domain.cell_area()),
            width,
        })
    }

    pub fn kx(&self) -> usize {
        self.tx.ncols()
    }

    pub fn ky(&self) -> usize {
        self.ty.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.kx() * self.ky()
    }

    pub fn n_params(&self) -> usize {
        self.n_modes() * self.width * self.width
    }

    /// `(c, ny, nx) -> (ky * kx, c)`, area-weighted.
    fn analyze(&self, x: ArrayView3<F>) -> Array2<F> {
        let (c, _, nx) = x.dim();
        let (ky, kx) = (self.ky(), self.kx());
        let mut t = Array3::zeros((c, ky, nx));
        for ch in 0..c {
            general_mat_mul(F::one(), &self.ty, &x.index_axis(Axis(0), ch), F::zero(), &mut t.index_axis_mut(Axis(0), ch));
        }
        let t = t.into_shape_with_order((c * ky, nx)).expect("contiguous");
        let z = standard(t.dot(&self.tx)); // (c * ky, kx)
        let z = z.as_slice().expect("standard layout");
        let mut out = Array2::zeros((self.n_modes(), c));
        let o = out.as_slice_mut().expect("fresh");
        for ch in 0..c {
            for (m, &v) in z[ch * ky * kx..(ch + 1) * ky * kx].iter().enumerate() {
                o[m * c + ch] = v * self.area;
            }
        }
        out
    }

    /// `(ky * kx, c) -> (c, ny, nx)`.
    fn synthesize(&self, coeffs: &Array2<F>) -> Array3<F> {
        let c = coeffs.ncols();
        let (ky, kx, ny, nx) = (self.ky(), self.kx(), self.ty.ncols(), self.tx.nrows());
        // Row `ch * ky + k` holds channel `ch` at y-mode `k`.
        let flat = Array2::from_shape_vec((c * ky, kx), coeffs.t().iter().copied().collect()).expect("matching size");
        let m = standard(flat.dot(&self.tx.t())); // (c * ky, nx)
        let m = m.into_shape_with_order((c, ky, nx)).expect("contiguous");
        let mut out = Array3::zeros((c, ny, nx));
        let tyt = self.ty.t();
        for ch in 0..c {
            general_mat_mul(F::one(), &tyt, &m.index_axis(Axis(0), ch), F::zero(), &mut out.index_axis_mut(Axis(0), ch));
        }
        out
    }

    pub fn forward(&self, r: &[F], x: ArrayView3<F>) -> (Array3<F>, CosineCache<F>) {
        let coeffs = self.analyze(x);
        let y = self.synthesize(&mix_real(r, &coeffs, false));
        (y, CosineCache { coeffs })
    }

    /// Accumulates `∂L/∂R` into `dr` and returns `∂L/∂x`.
    pub fn backward(&self, r: &[F], cache: &CosineCache<F>, gy: ArrayView3<F>, dr: &mut [F]) -> Array3<F> {
        // Synthesis is `analysis / area` transposed.
        let mut g = self.analyze(gy);
        g /= self.area;
        outer_accumulate(
            dr,
            g.as_slice().expect("standard layout"),
            cache.coeffs.as_slice().expect("standard layout"),
            self.width,
            F::one(),
        );
        let mut gx = self.synthesize(&mix_real(r, &g, true));
        gx *= self.area;
        gx
    }
}

/// Fourier convolution on a replicate-padded grid with truncated modes
/// `kx ∈ [−Kx/2, Kx/2)`, `ky ∈ [0, Ky/2]` (only `ky = 0` on an interval).
///
/// Padding and cropping are folded into the transform tables: the forward
/// transform of a padded field equals a transform of the unpadded field
/// with the rows of each padded edge summed into the edge cell, and the
/// cropped synthesis only evaluates interior points.
#[derive(Clone, Debug)]
pub struct FourierConv<F: Real = f64> {
    kx: usize,
    ky_count: usize,
    /// `(nx, 2 Kx)`: `[cos θ | −sin θ]` with padding folded in.
    fold_x: Array2<F>,
    /// `(nx, 2 Kx)`: the same columns at interior points only.
    crop_x: Array2<F>,
    /// `(2 Ky', ny)`: `cos φ` rows then `sin φ` rows, padding folded in.
    fold_y: Array2<F>,
    crop_y: Array2<F>,
    /// Synthesis weight per retained `ky`, including `1 / (Px Py)`.
    wy: Vec<F>,
    width: usize,
}

/// Complex coefficients as mode-major `(Ky' * Kx, c)` real and imaginary parts.
#[derive(Clone, Debug)]
pub struct FourierCache<F: Real = f64> {
    re: Array2<F>,
    im: Array2<F>,
}

/// Padding `⌈n / 8⌉` per side.
pub fn padding(n: usize) -> usize {
    n.div_ceil(8)
}

/// Folds a table indexed by padded position along `axis` onto `n` cells
/// (`fold`) and restricts it to the interior (`crop`).
fn fold_and_crop(full: &Array2<f64>, axis: Axis, pad: usize, n: usize) -> (Array2<f64>, Array2<f64>) {
    let mut shape = full.raw_dim();
    shape[axis.index()] = n;
    let mut fold = Array2::zeros(shape);
    for (p, lane) in full.axis_iter(axis).enumerate() {
        let mut dst = fold.index_axis_mut(axis, p.saturating_sub(pad).min(n - 1));
        dst += &lane;
    }
    let crop = full.slice_axis(axis, (pad..pad + n).into()).to_owned();
    (fold, crop)
}

impl<F: Real> FourierConv<F> {
    pub fn new(domain: &Domain, kx: usize, ky: usize, width: usize) -> Result<Self> {
        let (nx, ny) = (domain.nx(), domain.ny());
        let one_d = domain.dim() == 1;
        let pad = [padding(nx), if one_d { 0 } else { padding(ny) }];
        let (px, py) = (nx + 2 * pad[0], ny + 2 * pad[1]);
        if kx == 0 || kx > px {
            return Err(Error::Capacity {
                axis: 'x',
                requested: kx,
                available: px,
            });
        }
        let ky_count = if one_d { 1 } else { ky / 2 + 1 };
        if !one_d && (ky == 0 || ky / 2 >= py.div_ceil(2)) {
            return Err(Error::Capacity {
                axis: 'y',
                requested: ky,
                available: py,
            });
        }
        let half = (kx / 2) as i64;
        let theta = |i: usize, c: usize| 2.0 * PI * (((c as i64) - half) * i as i64) as f64 / px as f64;
        let fx = Array2::from_shape_fn((px, 2 * kx), |(i, c)| {
            if c < kx {
                theta(i, c).cos()
            } else {
                -theta(i, c - kx).sin()
            }
        });
        let phi = |k: usize, j: usize| 2.0 * PI * (k * j) as f64 / py as f64;
        let fy = Array2::from_shape_fn((2 * ky_count, py), |(k, j)| {
            if k < ky_count {
                phi(k, j).cos()
            } else {
                phi(k - ky_count, j).sin()
            }
        });
        let (fold_x, crop_x) = fold_and_crop(&fx, Axis(0), pad[0], nx);
        let (fold_y, crop_y) = fold_and_crop(&fy, Axis(1), pad[1], ny);
        let cast = |a: Array2<f64>| a.mapv(F::of);
        let norm = 1.0 / (px * py) as f64;
        let wy = (0..ky_count)
            .map(|k| F::of(if k == 0 || 2 * k == py { norm } else { 2.0 * norm }))
            .collect();
        Ok(Self {
            kx,
            ky_count,
            fold_x: cast(fold_x),
            crop_x: cast(crop_x),
            fold_y: cast(fold_y),
            crop_y: cast(crop_y),
            wy,
            width,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.kx * self.ky_count
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_modes() * self.width * self.width
    }

    /// `X̂_k = Σ x e^{−iθ_k}` of a `(c, ny, nx)` field through tables `ty`, `tx`.
    fn dft(&self, x: ArrayView3<F>, ty: &Array2<F>, tx: &Array2<F>) -> FourierCache<F> {
        let (c, _, nx) = x.dim();
        let (kx, kyc) = (self.kx, self.ky_count);
        // y-step per channel: rows [Σ cos φ x ; Σ sin φ x].
        let mut t = Array3::zeros((c, 2 * kyc, nx));
        for ch in 0..c {
            general_mat_mul(F::one(), ty, &x.index_axis(Axis(0), ch), F::zero(), &mut t.index_axis_mut(Axis(0), ch));
        }
        let t = t.into_shape_with_order((c * 2 * kyc, nx)).expect("contiguous");
        let z = standard(t.dot(tx)); // (c * 2Ky', 2Kx)
        let z = z.as_slice().expect("standard layout");
        let k = self.n_modes();
        let mut re = Array2::zeros((k, c));
        let mut im = Array2::zeros((k, c));
        let (or, oi) = (re.as_slice_mut().expect("fresh"), im.as_slice_mut().expect("fresh"));
        let stride = 2 * kx;
        for ch in 0..c {
            for ky in 0..kyc {
                let u = &z[(ch * 2 * kyc + ky) * stride..][..stride];
                let v = &z[(ch * 2 * kyc + kyc + ky) * stride..][..stride];
                for a in 0..kx {
                    let m = ky * kx + a;
                    or[m * c + ch] = u[a] + v[kx + a];
                    oi[m * c + ch] = u[kx + a] - v[a];
                }
            }
        }
        FourierCache { re, im }
    }

    /// `y = Re Σ_k w_{ky} Ŷ_k e^{iθ_k}` through tables `ty`, `tx`.
    fn synth(&self, y: &FourierCache<F>, w: &[F], ty: &Array2<F>, tx: &Array2<F>) -> Array3<F> {
        let c = y.re.ncols();
        let (kx, kyc) = (self.kx, self.ky_count);
        let (ny, nx) = (ty.ncols(), tx.nrows());
        let (yr, yi) = (y.re.as_slice().expect("standard"), y.im.as_slice().expect("standard"));
        // Rows `[re | im]` pair with cos φ and `[−im | re]` with sin φ.
        let stride = 2 * kx;
        let mut wm = Array2::zeros((c * 2 * kyc, stride));
        let o = wm.as_slice_mut().expect("fresh");
        for ch in 0..c {
            for ky in 0..kyc {
                let wk = w[ky];
                let (lo, hi) = o[(ch * 2 * kyc + ky) * stride..].split_at_mut(kyc * stride);
                let (u, v) = (&mut lo[..stride], &mut hi[..stride]);
                for a in 0..kx {
                    let m = ky * kx + a;
                    let (r, i) = (wk * yr[m * c + ch], wk * yi[m * c + ch]);
                    u[a] = r;
                    u[kx + a] = i;
                    v[a] = -i;
                    v[kx + a] = r;
                }
            }
        }
        let m = standard(wm.dot(&tx.t())); // (c * 2Ky', nx)
        let m = m.into_shape_with_order((c, 2 * kyc, nx)).expect("contiguous");
        let mut out = Array3::zeros((c, ny, nx));
        let tyt = ty.t();
        for ch in 0..c {
            general_mat_mul(F::one(), &tyt, &m.index_axis(Axis(0), ch), F::zero(), &mut out.index_axis_mut(Axis(0), ch));
        }
        out
    }

    /// Complex per-mode products `R x` or `R^H x`.
    fn mix(&self, r: &[F], x: &FourierCache<F>, adjoint: bool) -> FourierCache<F> {
        let (k, w) = x.re.dim();
        let (mut re, mut im) = (Array2::zeros((k, w)), Array2::zeros((k, w)));
        let (xr, xi) = (x.re.as_slice().expect("standard"), x.im.as_slice().expect("standard"));
        let (or, oi) = (re.as_slice_mut().expect("fresh"), im.as_slice_mut().expect("fresh"));
        let ww = w * w;
        for m in 0..k {
            let rr = &r[2 * m * ww..2 * m * ww + ww];
            let ri = &r[2 * m * ww + ww..2 * (m + 1) * ww];
            let (xr, xi) = (&xr[m * w..(m + 1) * w], &xi[m * w..(m + 1) * w]);
            let (yr, yi) = (&mut or[m * w..(m + 1) * w], &mut oi[m * w..(m + 1) * w]);
            if adjoint {
                // (Rrᵀ − i Riᵀ)(xr + i xi)
                for b in 0..w {
                    let (a_r, a_i) = (&rr[b * w..(b + 1) * w], &ri[b * w..(b + 1) * w]);
                    let (pr, pi) = (xr[b], xi[b]);
                    for a in 0..w {
                        yr[a] += a_r[a] * pr + a_i[a] * pi;
                        yi[a] += a_r[a] * pi - a_i[a] * pr;
                    }
                }
            } else {
                for a in 0..w {
                    let (a_r, a_i) = (&rr[a * w..(a + 1) * w], &ri[a * w..(a + 1) * w]);
                    let (mut sr, mut si) = (F::zero(), F::zero());
                    for b in 0..w {
                        sr += a_r[b] * xr[b] - a_i[b] * xi[b];
                        si += a_r[b] * xi[b] + a_i[b] * xr[b];
                    }
                    yr[a] = sr;
                    yi[a] = si;
                }
            }
        }
        FourierCache { re, im }
    }

    pub fn forward(&self, r: &[F], x: ArrayView3<F>) -> (Array3<F>, FourierCache<F>) {
        let coeffs = self.dft(x, &self.fold_y, &self.fold_x);
        let y = self.mix(r, &coeffs, false);
        (self.synth(&y, &self.wy, &self.crop_y, &self.crop_x), coeffs)
    }

    pub fn backward(&self, r: &[F], cache: &FourierCache<F>, gy: ArrayView3<F>, dr: &mut [F]) -> Array3<F> {
        let mut g = self.dft(gy, &self.crop_y, &self.crop_x);
        let kx = self.kx;
        for (ky, &wk) in self.wy.iter().enumerate() {
            g.re.slice_mut(s![ky * kx..(ky + 1) * kx, ..]).mapv_inplace(|v| v * wk);
            g.im.slice_mut(s![ky * kx..(ky + 1) * kx, ..]).mapv_inplace(|v| v * wk);
        }
        let w = self.width;
        let ww = w * w;
        let (gr, gi) = (g.re.as_slice().expect("standard"), g.im.as_slice().expect("standard"));
        let (xr, xi) = (cache.re.as_slice().expect("standard"), cache.im.as_slice().expect("standard"));
        // dR = G conj(X): real part Gr Xr + Gi Xi, imaginary part Gi Xr − Gr Xi.
        for m in 0..self.n_modes() {
            let span = m * w..(m + 1) * w;
            let (gr, gi) = (&gr[span.clone()], &gi[span.clone()]);
            let (xr, xi) = (&xr[span.clone()], &xi[span]);
            let (d_re, d_im) = dr[2 * m * ww..2 * (m + 1) * ww].split_at_mut(ww);
            for a in 0..w {
                let (ga_r, ga_i) = (gr[a], gi[a]);
                let dre = &mut d_re[a * w..(a + 1) * w];
                let dim = &mut d_im[a * w..(a + 1) * w];
                for b in 0..w {
                    dre[b] += ga_r * xr[b] + ga_i * xi[b];
                    dim[b] += ga_i * xr[b] - ga_r * xi[b];
                }
            }
        }
        let dx = self.mix(r, &g, true);
        let ones = vec![F::one(); self.ky_count];
        self.synth(&dx, &ones, &self.fold_y, &self.fold_x)
    }
}

/// Either spectral convolution behind one interface.
#[derive(Clone, Debug)]
pub enum SpectralConv<F: Real = f64> {
    Cosine(CosineConv<F>),
    Fourier(FourierConv<F>),
}

#[derive(Clone, Debug)]
pub enum SpectralCache<F: Real = f64> {
    Cosine(CosineCache<F>),
    Fourier(FourierCache<F>),
}

impl<F: Real> SpectralConv<F> {
    pub fn new(kind: BasisKind, domain: &Domain, kx: usize, ky: usize, width: usize) -> Result<Self> {
        Ok(match kind {
            BasisKind::NeumannCosine => Self::Cosine(CosineConv::new(domain, kx, ky, width)?),
            BasisKind::FourierPadded => Self::Fourier(FourierConv::new(domain, kx, ky, width)?),
        })
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Cosine(c) => c.n_params(),
            Self::Fourier(f) => f.n_params(),
        }
    }

    pub fn forward(&self, r: &[F], x: ArrayView3<F>) -> (Array3<F>, SpectralCache<F>) {
        match self {
            Self::Cosine(c) => {
                let (y, cache) = c.forward(r, x);
                (y, SpectralCache::Cosine(cache))
            }
            Self::Fourier(f) => {
                let (y, cache) = f.forward(r, x);
                (y, SpectralCache::Fourier(cache))
            }
        }
    }

    pub fn backward(&self, r: &[F], cache: &SpectralCache<F>, gy: ArrayView3<F>, dr: &mut [F]) -> Array3<F> {
        match (self, cache) {
            (Self::Cosine(c), SpectralCache::Cosine(k)) => c.backward(r, k, gy, dr),
            (Self::Fourier(f), SpectralCache::Fourier(k)) => f.backward(r, k, gy, dr),
            _ => panic!("cache from a different spectral layer"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_r(modes: usize, w: usize, complex: bool) -> Vec<f64> {
        let per = if complex { 2 * w * w } else { w * w };
        let mut r = vec![0.0; modes * per];
        for m in 0..modes {
            for a in 0..w {
                r[m * per + a * w + a] = 1.0;
            }
        }
        r
    }

    fn random_field(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn cosine_identity_with_all_modes() {
        let d = Domain::rectangle(2.0, 1.5, 8, 6).unwrap();
        let conv = CosineConv::new(&d, 8, 6, 3).unwrap();
        let x = random_field((3, 6, 8), 1);
        let (y, _) = conv.forward(&identity_r(48, 3, false), x.view());
        for (a, b) in y.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_multipliers_give_zero() {
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let x = random_field((2, 8, 8), 2);
        for kind in [BasisKind::NeumannCosine, BasisKind::FourierPadded] {
            let conv = SpectralConv::new(kind, &d, 4, 4, 2).unwrap();
            let r = vec![0.0; conv.n_params()];
            let (y, _) = conv.forward(&r, x.view());
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_mode_gives_scaled_mean() {
        let d = Domain::rectangle(3.0, 2.0, 8, 4).unwrap();
        let conv = CosineConv::new(&d, 1, 1, 2).unwrap();
        let x = random_field((2, 4, 8), 3);
        let c = 1.7;
        let r = vec![c, 0.0, 0.0, c];
        let (y, _) = conv.forward(&r, x.view());
        for ch in 0..2 {
            let mean = x.index_axis(Axis(0), ch).mean().unwrap();
            for v in y.index_axis(Axis(0), ch).iter() {
                assert_abs_diff_eq!(*v, c * mean, epsilon = 1e-12);
            }
        }
    }

    /// Direct evaluation: replicate-pad, complex DFT, per-mode product,
    /// truncated inverse, crop.
    fn fourier_direct(d: &Domain, kx: usize, ky: usize, r: &[f64], x: &Array3<f64>) -> Array3<f64> {
        let (w, ny, nx) = x.dim();
        let (p0, q0) = (padding(nx), if d.dim() == 1 { 0 } else { padding(ny) });
        let (px, py) = (nx + 2 * p0, ny + 2 * q0);
        let kyc = if d.dim() == 1 { 1 } else { ky / 2 + 1 };
        let src = |p: usize, pad: usize, n: usize| p.saturating_sub(pad).min(n - 1);
        let half = (kx / 2) as f64;
        let angle = |a: usize, j: usize, i: usize| {
            let kxv = (a % kx) as f64 - half;
            let kyv = (a / kx) as f64;
            2.0 * PI * (kyv * j as f64 / py as f64 + kxv * i as f64 / px as f64)
        };
        let modes = kx * kyc;
        let mut xh = vec![(0.0, 0.0); modes * w];
        for m in 0..modes {
            for ch in 0..w {
                for j in 0..py {
                    for i in 0..px {
                        let v = x[[ch, src(j, q0, ny), src(i, p0, nx)]];
                        let t = angle(m, j, i);
                        xh[m * w + ch].0 += v * t.cos();
                        xh[m * w + ch].1 -= v * t.sin();
                    }
                }
            }
        }
        let ww = w * w;
        let mut out = Array3::zeros((w, ny, nx));
        for m in 0..modes {
            let k = m / kx;
            let wk = if k == 0 || 2 * k == py { 1.0 } else { 2.0 } / (px * py) as f64;
            for a in 0..w {
                let (mut yr, mut yi) = (0.0, 0.0);
                for b in 0..w {
                    let (rr, ri) = (r[2 * m * ww + a * w + b], r[2 * m * ww + ww + a * w + b]);
                    let (xr, xi) = xh[m * w + b];
                    yr += rr * xr - ri * xi;
                    yi += rr * xi + ri * xr;
                }
                for j in 0..ny {
                    for i in 0..nx {
                        let t = angle(m, j + q0, i + p0);
                        out[[a, j, i]] += wk * (yr * t.cos() - yi * t.sin());
                    }
                }
            }
        }
        out
    }

    #[test]
    fn fourier_matches_direct_evaluation() {
        let cases = [
            (Domain::rectangle(1.0, 2.0, 10, 7).unwrap(), 6, 4, 3),
            (Domain::interval(2.0, 12).unwrap(), 5, 1, 2),
        ];
        for (d, kx, ky, w) in cases {
            let conv = FourierConv::new(&d, kx, ky, w).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let r: Vec<f64> = (0..conv.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = random_field((w, d.ny(), d.nx()), 13);
            let (y, _) = conv.forward(&r, x.view());
            let want = fourier_direct(&d, kx, ky, &r, &x);
            for (a, b) in y.iter().zip(want.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn capacity_errors() {
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        assert!(matches!(
            CosineConv::<f64>::new(&d, 9, 4, 2),
            Err(Error::Capacity { axis: 'x', .. })
        ));
        assert!(matches!(
            FourierConv::<f64>::new(&d, 4, 40, 2),
            Err(Error::Capacity { axis: 'y', .. })
        ));
    }

    fn fd_check(kind: BasisKind, d: &Domain, kx: usize, ky: usize, w: usize) -> f64 {
        let conv = SpectralConv::new(kind, d, kx, ky, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r: Vec<f64> = (0..conv.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = random_field((w, d.ny(), d.nx()), 8);
        let wts = random_field((w, d.ny(), d.nx()), 9);
        let loss = |r: &[f64], x: &Array3<f64>| (conv.forward(r, x.view()).0 * &wts).sum();
        let (_, cache) = conv.forward(&r, x.view());
        let mut dr = vec![0.0; r.len()];
        let gx = conv.backward(&r, &cache, wts.view(), &mut dr);
        let h = 1e-5;
        let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-3);
        let mut worst = 0.0f64;
        for k in (0..r.len()).step_by(7) {
            let (mut rp, mut rm) = (r.clone(), r.clone());
            rp[k] += h;
            rm[k] -= h;
            worst = worst.max(rel(dr[k], (loss(&rp, &x) - loss(&rm, &x)) / (2.0 * h)));
        }
        for idx in (0..x.len()).step_by(3) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(&r, &xp) - loss(&r, &xm)) / (2.0 * h);
            worst = worst.max(rel(gx.as_slice().unwrap()[idx], fd));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d2 = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let d1 = Domain::interval(2.0, 12).unwrap();
        for kind in [BasisKind::NeumannCosine, BasisKind::FourierPadded] {
            let e = fd_check(kind, &d2, 4, 4, 4);
            assert!(e < 1e-4, "{kind:?} 2D: {e}");
            let e = fd_check(kind, &d1, 5, 1, 3);
            assert!(e < 1e-4, "{kind:?} 1D: {e}");
        }
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        for kind in [BasisKind::NeumannCosine, BasisKind::FourierPadded] {
            let conv = SpectralConv::new(kind, &d, 4, 4, 2).unwrap();
            let r = vec![0.3; conv.n_params()];
            let x = random_field((2, 8, 8), 4);
            let (_, cache) = conv.forward(&r, x.view());
            let mut dr = vec![0.0; r.len()];
            let gx = conv.backward(&r, &cache, Array3::zeros((2, 8, 8)).view(), &mut dr);
            assert!(dr.iter().all(|&v| v == 0.0));
            assert!(gx.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_backward_is_band_limited_projection() {
        let d = Domain::rectangle(1.0, 2.0, 8, 8).unwrap();
        let conv = CosineConv::new(&d, 3, 5, 1).unwrap();
        let r = identity_r(15, 1, false);
        let x = random_field((1, 8, 8), 5);
        let g = random_field((1, 8, 8), 6);
        let (_, cache) = conv.forward(&r, x.view());
        let mut dr = vec![0.0; r.len()];
        let gx = conv.backward(&r, &cache, g.view(), &mut dr);
        let (proj, _) = conv.forward(&r, g.view());
        for (a, b) in gx.iter().zip(proj.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_commutes_with_reflection() {
        // Reflection multiplies mode m by (-1)^m, which commutes with any
        // per-mode multiplier.
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let conv = CosineConv::new(&d, 5, 5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r: Vec<f64> = (0..conv.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = random_field((2, 8, 8), 11);
        for axis in [1, 2] {
            let flip = |a: &Array3<f64>| {
                let mut b = a.clone();
                b.invert_axis(Axis(axis));
                b
            };
            let (a, _) = conv.forward(&r, flip(&x).view());
            let (b, _) = conv.forward(&r, x.view());
            for (p, q) in a.iter().zip(flip(&b).iter()) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mesh_transfer_on_band_limited_input() {
        let coarse = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let fine = Domain::rectangle(1.0, 1.0, 16, 16).unwrap();
        let w = 2;
        let cc = CosineConv::new(&coarse, 4, 4, w).unwrap();
        let cf = CosineConv::new(&fine, 4, 4, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r: Vec<f64> = (0..cc.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Band-limited input: a combination of the lowest 3×3 cosine modes.
        let amp: Vec<f64> = (0..2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sample = |d: &Domain| {
            Array3::from_shape_fn((w, d.ny(), d.nx()), |(c, j, i)| {
                let [x, y] = d.cell_center(i, j);
                let mut v = 0.0;
                for m1 in 0..3 {
                    for m2 in 0..3 {
                        v += amp[c * 9 + m1 * 3 + m2] * axis_function(m1, 1.0, x) * axis_function(m2, 1.0, y);
                    }
                }
                v
            })
        };
        let (yc, _) = cc.forward(&r, sample(&coarse).view());
        let (yf, _) = cf.forward(&r, sample(&fine).view());
        let pc = cc.analyze(yc.view());
        let pf = cf.analyze(yf.view());
        for (a, b) in pc.iter().zip(pf.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }
}
