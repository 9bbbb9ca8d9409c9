//! Closed-form Neumann eigenpairs of `-Δ` on intervals and rectangles.
//!
//! Grids are uniform and cell-centered, `x_i = (i + 1/2) L / n`, and every
//! inner product uses the midpoint rule with weight equal to the cell area.
//! Under that rule the cosine family is exactly orthonormal for every mode
//! index below the cell count of its axis, so analysis followed by synthesis
//! is an exact transform pair.
//!
//! Grid fields are `Array3<f64>` with shape `(channels, ny, nx)`. An interval
//! is stored as a rectangle with `ny = 1` and unit height, which keeps every
//! code path two-dimensional.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};

use crate::error::{dim_err, Error, Result};

/// A channel-major grid field `(channels, ny, nx)`.
pub type GridField = Array3<f64>;

/// Axis-aligned interval or rectangle with a uniform cell-centered grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
}

impl Domain {
    pub fn interval(length: f64, cells: usize) -> Result<Self> {
        check_axis(length, cells, 'x')?;
        Ok(Self {
            dim: 1,
            lengths: [length, 1.0],
            cells: [cells, 1],
        })
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        check_axis(lx, nx, 'x')?;
        check_axis(ly, ny, 'y')?;
        Ok(Self {
            dim: 2,
            lengths: [lx, ly],
            cells: [nx, ny],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lx(&self) -> f64 {
        self.lengths[0]
    }

    pub fn ly(&self) -> f64 {
        self.lengths[1]
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn n_points(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn dx(&self) -> f64 {
        self.lengths[0] / self.cells[0] as f64
    }

    pub fn dy(&self) -> f64 {
        self.lengths[1] / self.cells[1] as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Measure of the domain (length in 1D, area in 2D).
    pub fn volume(&self) -> f64 {
        self.lengths[0] * self.lengths[1]
    }

    /// Cell center of column `i`, row `j`. In 1D the second coordinate is
    /// the (unused) midpoint of the unit height.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy()]
    }

    /// Coordinates of the point with flat index `row * nx + col`, truncated
    /// to the spatial dimension.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let c = self.cell_center(flat % self.nx(), flat / self.nx());
        c[..self.dim].to_vec()
    }

    /// A zero field with `channels` channels on this grid.
    pub fn zeros(&self, channels: usize) -> GridField {
        Array3::zeros((channels, self.ny(), self.nx()))
    }

    pub fn check_field(&self, field: &ArrayView3<f64>) -> Result<()> {
        let (_, ny, nx) = field.dim();
        if ny != self.ny() || nx != self.nx() {
            return Err(dim_err(
                format!("grid {}x{}", self.ny(), self.nx()),
                format!("grid {ny}x{nx}"),
            ));
        }
        Ok(())
    }

    /// The grid with both axes refined (or coarsened) to the given counts.
    pub fn with_cells(&self, nx: usize, ny: usize) -> Result<Self> {
        match self.dim {
            1 => Self::interval(self.lx(), nx),
            _ => Self::rectangle(self.lx(), self.ly(), nx, ny),
        }
    }
}

fn check_axis(length: f64, cells: usize, axis: char) -> Result<()> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::Parameter(format!(
            "{axis}-length must be positive, got {length}"
        )));
    }
    if cells < 4 {
        return Err(Error::Parameter(format!(
            "{axis}-axis needs at least 4 cells, got {cells}"
        )));
    }
    Ok(())
}

/// One-dimensional Neumann eigenfunction `a_m` on `[0, L]`.
pub fn axis_function(m: usize, length: f64, x: f64) -> f64 {
    if m == 0 {
        1.0 / length.sqrt()
    } else {
        (2.0 / length).sqrt() * (m as f64 * PI * x / length).cos()
    }
}

/// `(m π / L)^2`.
pub fn axis_eigenvalue(m: usize, length: f64) -> f64 {
    let k = m as f64 * PI / length;
    k * k
}

fn axis_table(modes: usize, length: f64, cells: usize) -> Array2<f64> {
    let h = length / cells as f64;
    Array2::from_shape_fn((modes, cells), |(m, i)| {
        axis_function(m, length, (i as f64 + 0.5) * h)
    })
}

/// Separable cosine analysis/synthesis on the lowest `kx × ky` index block.
///
/// Block coefficients are stored as `(channels, ky, kx)`.
#[derive(Clone, Debug)]
pub struct CosineTransform {
    domain: Domain,
    tx: Array2<f64>,
    ty: Array2<f64>,
}

impl CosineTransform {
    pub fn new(domain: &Domain, kx: usize, ky: usize) -> Result<Self> {
        if kx == 0 || ky == 0 {
            return Err(Error::Parameter("mode block must be non-empty".into()));
        }
        if kx > domain.nx() {
            return Err(Error::Capacity {
                axis: 'x',
                requested: kx,
                available: domain.nx(),
            });
        }
        if ky > domain.ny() {
            return Err(Error::Capacity {
                axis: 'y',
                requested: ky,
                available: domain.ny(),
            });
        }
        Ok(Self {
            domain: domain.clone(),
            tx: axis_table(kx, domain.lx(), domain.nx()),
            ty: axis_table(ky, domain.ly(), domain.ny()),
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kx(&self) -> usize {
        self.tx.nrows()
    }

    pub fn ky(&self) -> usize {
        self.ty.nrows()
    }

    /// `c[ch, my, mx] = area * Σ_ij f[ch, j, i] a_mx(x_i) a_my(y_j)`.
    pub fn analyze(&self, field: ArrayView3<f64>) -> Array3<f64> {
        let (ch, ny, nx) = field.dim();
        let flat = field
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((ch * ny, nx))
            .expect("contiguous field");
        let partial = flat.dot(&self.tx.t()); // (ch*ny, kx)
        let partial = partial
            .into_shape_with_order((ch, ny, self.kx()))
            .expect("contiguous partial");
        let area = self.domain.cell_area();
        let mut out = Array3::zeros((ch, self.ky(), self.kx()));
        for c in 0..ch {
            let block = self.ty.dot(&partial.index_axis(Axis(0), c));
            out.index_axis_mut(Axis(0), c).assign(&(block * area));
        }
        out
    }

    /// `f[ch, j, i] = Σ c[ch, my, mx] a_mx(x_i) a_my(y_j)`.
    pub fn synthesize(&self, coeffs: ArrayView3<f64>) -> Array3<f64> {
        let (ch, ky, kx) = coeffs.dim();
        assert_eq!((ky, kx), (self.ky(), self.kx()), "coefficient block shape");
        let ny = self.domain.ny();
        let mut partial = Array3::zeros((ch, ny, kx));
        for c in 0..ch {
            let rows = self.ty.t().dot(&coeffs.index_axis(Axis(0), c));
            partial.index_axis_mut(Axis(0), c).assign(&rows);
        }
        let flat = partial
            .into_shape_with_order((ch * ny, kx))
            .expect("contiguous partial");
        flat.dot(&self.tx)
            .into_shape_with_order((ch, ny, self.domain.nx()))
            .expect("contiguous field")
    }
}

/// A Neumann eigenpair index with its eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenMode {
    /// `(m1, m2)`; `m2` is always 0 on an interval.
    pub index: [usize; 2],
    pub eigenvalue: f64,
}

/// The first `N` Neumann eigenpairs, sorted by eigenvalue with ties broken
/// lexicographically on the index tuple.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    domain: Domain,
    modes: Vec<EigenMode>,
    transform: CosineTransform,
}

impl EigenBasis {
    pub fn new(domain: &Domain, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Parameter("basis needs at least one mode".into()));
        }
        let available = domain.n_points();
        if count > available {
            // Name the axis that runs out first: an interval only has x.
            let axis = if domain.dim() == 1 || domain.nx() <= domain.ny() {
                'x'
            } else {
                'y'
            };
            return Err(Error::Capacity {
                axis,
                requested: count,
                available,
            });
        }
        let mut modes = Vec::with_capacity(available);
        for m1 in 0..domain.nx() {
            for m2 in 0..domain.ny() {
                let mu = axis_eigenvalue(m1, domain.lx())
                    + if domain.dim() == 2 {
                        axis_eigenvalue(m2, domain.ly())
                    } else {
                        0.0
                    };
                modes.push(EigenMode {
                    index: [m1, m2],
                    eigenvalue: mu,
                });
            }
        }
        modes.sort_by(|a, b| {
            a.eigenvalue
                .total_cmp(&b.eigenvalue)
                .then(a.index.cmp(&b.index))
        });
        modes.truncate(count);
        let kx = modes.iter().map(|m| m.index[0]).max().unwrap_or(0) + 1;
        let ky = modes.iter().map(|m| m.index[1]).max().unwrap_or(0) + 1;
        let transform = CosineTransform::new(domain, kx, ky)?;
        Ok(Self {
            domain: domain.clone(),
            modes,
            transform,
        })
    }

    /// Every mode the grid resolves.
    pub fn full(domain: &Domain) -> Result<Self> {
        Self::new(domain, domain.n_points())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn modes(&self) -> &[EigenMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    /// `φ_k` at cell `(i, j)`.
    pub fn eval(&self, k: usize, i: usize, j: usize) -> f64 {
        let [m1, m2] = self.modes[k].index;
        let [x, y] = self.domain.cell_center(i, j);
        axis_function(m1, self.domain.lx(), x) * axis_function(m2, self.domain.ly(), y)
    }

    /// Matrix of eigenfunction samples, `(n_points, N)`, rows in flat grid order.
    pub fn mode_matrix(&self) -> Array2<f64> {
        let nx = self.domain.nx();
        Array2::from_shape_fn((self.domain.n_points(), self.len()), |(p, k)| {
            self.eval(k, p % nx, p / nx)
        })
    }

    /// Number of eigenvalues `≤ threshold`.
    pub fn eigenvalue_count_below(&self, threshold: f64) -> usize {
        self.modes
            .iter()
            .filter(|m| m.eigenvalue <= threshold)
            .count()
    }

    /// Coefficients `⟨f, φ_k⟩` under midpoint quadrature.
    pub fn forward(&self, field: ArrayView3<f64>) -> Result<SpectralField> {
        self.domain.check_field(&field)?;
        if field.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field has non-finite entries".into()));
        }
        let block = self.transform.analyze(field);
        let channels = block.dim().0;
        let mut coeffs = Array2::zeros((channels, self.len()));
        for c in 0..channels {
            for (k, mode) in self.modes.iter().enumerate() {
                coeffs[[c, k]] = block[[c, mode.index[1], mode.index[0]]];
            }
        }
        Ok(SpectralField { coeffs })
    }

    /// `f(x) = Σ_k c_k φ_k(x)` at every cell center.
    pub fn inverse(&self, field: &SpectralField) -> Result<GridField> {
        if field.n_modes() != self.len() {
            return Err(dim_err(
                format!("{} modes", self.len()),
                format!("{} modes", field.n_modes()),
            ));
        }
        let channels = field.channels();
        let mut block = Array3::zeros((channels, self.transform.ky(), self.transform.kx()));
        for c in 0..channels {
            for (k, mode) in self.modes.iter().enumerate() {
                block[[c, mode.index[1], mode.index[0]]] = field.coeffs[[c, k]];
            }
        }
        Ok(self.transform.synthesize(block.view()))
    }
}

/// Per-channel eigen-coefficients, shape `(channels, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub coeffs: Array2<f64>,
}

impl SpectralField {
    pub fn zeros(channels: usize, n_modes: usize) -> Self {
        Self {
            coeffs: Array2::zeros((channels, n_modes)),
        }
    }

    pub fn channels(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn channel(&self, c: usize) -> ndarray::ArrayView1<'_, f64> {
        self.coeffs.row(c)
    }
}

/// Average `2 × 2` cell blocks (pairs of cells on an interval).
pub fn coarsen(domain: &Domain, field: ArrayView3<f64>) -> Result<(Domain, GridField)> {
    domain.check_field(&field)?;
    let fy = if domain.dim() == 2 { 2 } else { 1 };
    if domain.nx() % 2 != 0 || domain.ny() % fy != 0 {
        return Err(Error::Parameter("coarsening needs even cell counts".into()));
    }
    let coarse = domain.with_cells(domain.nx() / 2, domain.ny() / fy)?;
    let (ch, _, _) = field.dim();
    let mut out = coarse.zeros(ch);
    let w = 1.0 / (2 * fy) as f64;
    for c in 0..ch {
        for j in 0..coarse.ny() {
            for i in 0..coarse.nx() {
                let block = field.slice(s![c, j * fy..(j + 1) * fy, 2 * i..2 * i + 2]);
                out[[c, j, i]] = block.sum() * w;
            }
        }
    }
    Ok((coarse, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_mode_is_constant() {
        let d = Domain::interval(1.0, 8).unwrap();
        let b = EigenBasis::new(&d, 1).unwrap();
        assert_eq!(b.modes()[0].eigenvalue, 0.0);
        for i in 0..8 {
            assert_abs_diff_eq!(b.eval(0, i, 0), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn first_nonzero_eigenvalue_on_long_interval() {
        let d = Domain::interval(200.0, 64).unwrap();
        let b = EigenBasis::new(&d, 2).unwrap();
        let expected = (PI / 200.0).powi(2);
        assert_abs_diff_eq!(b.modes()[1].eigenvalue, expected, epsilon = 1e-18);
        assert_abs_diff_eq!(expected, 2.4674e-4, epsilon = 1e-8);
    }

    #[test]
    fn square_ordering_breaks_ties_lexicographically() {
        let d = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let b = EigenBasis::new(&d, 4).unwrap();
        let idx: Vec<_> = b.modes().iter().map(|m| m.index).collect();
        assert_eq!(idx, vec![[0, 0], [0, 1], [1, 0], [1, 1]]);
        let pi2 = PI * PI;
        let mus = b.eigenvalues();
        for (got, want) in mus.iter().zip([0.0, pi2, pi2, 2.0 * pi2]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn capacity_error_names_axis() {
        let d = Domain::interval(1.0, 8).unwrap();
        match EigenBasis::new(&d, 9) {
            Err(Error::Capacity { axis, .. }) => assert_eq!(axis, 'x'),
            other => panic!("expected capacity error, got {other:?}"),
        }
        assert!(matches!(
            CosineTransform::new(&Domain::rectangle(1.0, 1.0, 8, 4).unwrap(), 4, 5),
            Err(Error::Capacity { axis: 'y', .. })
        ));
    }

    #[test]
    fn small_grids_rejected() {
        assert!(Domain::interval(1.0, 3).is_err());
        assert!(Domain::interval(0.0, 8).is_err());
    }

    #[test]
    fn constant_field_projects_onto_constant_mode() {
        let d = Domain::interval(1.0, 16).unwrap();
        let b = EigenBasis::full(&d).unwrap();
        let f = Array3::from_elem((1, 1, 16), 3.5);
        let c = b.forward(f.view()).unwrap();
        assert_abs_diff_eq!(c.coeffs[[0, 0]], 3.5, epsilon = 1e-12);
        for k in 1..16 {
            assert_abs_diff_eq!(c.coeffs[[0, k]], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampled_mode_has_unit_coefficient() {
        let d = Domain::interval(1.0, 16).unwrap();
        let b = EigenBasis::full(&d).unwrap();
        let f = Array3::from_shape_fn((1, 1, 16), |(_, _, i)| b.eval(3, i, 0));
        let c = b.forward(f.view()).unwrap();
        for k in 0..16 {
            let want = if k == 3 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(c.coeffs[[0, k]], want, epsilon = 1e-10);
        }
    }

    #[test]
    fn inverse_of_zero_and_constant_mode() {
        let d = Domain::interval(1.0, 8).unwrap();
        let b = EigenBasis::full(&d).unwrap();
        let zero = b.inverse(&SpectralField::zeros(1, 8)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let mut unit = SpectralField::zeros(1, 8);
        unit.coeffs[[0, 0]] = 1.0;
        let f = b.inverse(&unit).unwrap();
        for v in f.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let d = Domain::interval(1.0, 8).unwrap();
        let b = EigenBasis::full(&d).unwrap();
        let f = Array3::zeros((1, 1, 9));
        assert!(matches!(b.forward(f.view()), Err(Error::Dimension { .. })));
        assert!(matches!(
            b.inverse(&SpectralField::zeros(1, 7)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn counts_below_threshold() {
        let d = Domain::interval(1.0, 32).unwrap();
        let b = EigenBasis::full(&d).unwrap();
        assert_eq!(b.eigenvalue_count_below(0.0), 1);
        assert_eq!(b.eigenvalue_count_below((3.5 * PI).powi(2)), 4);
        let d2 = Domain::rectangle(1.0, 1.0, 8, 8).unwrap();
        let b2 = EigenBasis::full(&d2).unwrap();
        assert_eq!(b2.eigenvalue_count_below(PI * PI + 0.1), 3);
    }

    #[test]
    fn coarsen_averages_blocks() {
        let d = Domain::rectangle(2.0, 2.0, 8, 8).unwrap();
        let f = Array3::from_shape_fn((1, 8, 8), |(_, j, i)| (j * 8 + i) as f64);
        let (c, g) = coarsen(&d, f.view()).unwrap();
        assert_eq!((c.nx(), c.ny()), (4, 4));
        assert_abs_diff_eq!(g[[0, 0, 0]], (0.0 + 1.0 + 8.0 + 9.0) / 4.0);
        assert_abs_diff_eq!(g[[0, 3, 3]], (54.0 + 55.0 + 62.0 + 63.0) / 4.0);
    }
}
