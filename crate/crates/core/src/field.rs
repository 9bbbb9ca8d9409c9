//! Two-channel fields sampled on a set of time nodes.

use ndarray::{Array4, ArrayView3, ArrayViewMut3, Axis};

use crate::basis::{Domain, GridField};
use crate::error::{dim_err, Error, Result};

/// `values[[k, c, j, i]]` is channel `c` at node `times[k]` and cell `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    domain: Domain,
    times: Vec<f64>,
    values: Array4<f64>,
}

/// Nodes must start at 0 and increase strictly.
pub fn check_nodes(times: &[f64]) -> Result<()> {
    if times.first() != Some(&0.0) {
        return Err(Error::Ordering(format!("first node is {:?}", times.first())));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0] && w[1].is_finite())) {
        return Err(Error::Ordering(format!("{} followed by {}", w[0], w[1])));
    }
    Ok(())
}

impl SpaceTimeField {
    pub fn new(domain: Domain, times: Vec<f64>, values: Array4<f64>) -> Result<Self> {
        check_nodes(&times)?;
        let (nt, _, ny, nx) = values.dim();
        if nt != times.len() || ny != domain.ny() || nx != domain.nx() {
            return Err(dim_err(
                format!("({}, _, {}, {})", times.len(), domain.ny(), domain.nx()),
                format!("{:?}", values.dim()),
            ));
        }
        Ok(Self {
            domain,
            times,
            values,
        })
    }

    pub fn zeros(domain: &Domain, times: Vec<f64>, channels: usize) -> Result<Self> {
        let values = Array4::zeros((times.len(), channels, domain.ny(), domain.nx()));
        Self::new(domain.clone(), times, values)
    }

    pub fn from_snapshots(domain: &Domain, times: Vec<f64>, snaps: &[GridField]) -> Result<Self> {
        let Some(first) = snaps.first() else {
            return Err(dim_err("at least one snapshot", 0));
        };
        let (ch, ny, nx) = first.dim();
        let mut values = Array4::zeros((snaps.len(), ch, ny, nx));
        for (k, s) in snaps.iter().enumerate() {
            if s.dim() != (ch, ny, nx) {
                return Err(dim_err(format!("{:?}", (ch, ny, nx)), format!("{:?}", s.dim())));
            }
            values.index_axis_mut(Axis(0), k).assign(s);
        }
        Self::new(domain.clone(), times, values)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array4<f64> {
        &mut self.values
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn channels(&self) -> usize {
        self.values.dim().1
    }

    pub fn snapshot(&self, k: usize) -> ArrayView3<'_, f64> {
        self.values.index_axis(Axis(0), k)
    }

    pub fn snapshot_mut(&mut self, k: usize) -> ArrayViewMut3<'_, f64> {
        self.values.index_axis_mut(Axis(0), k)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checks that `other` lives on the same grid and nodes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(dim_err(
                format!("{:?}", self.values.dim()),
                format!("{:?}", other.values.dim()),
            ));
        }
        if self.times != other.times {
            return Err(dim_err("matching time nodes", "different nodes"));
        }
        Ok(())
    }

    /// `self - other`, on matching grids.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            domain: self.domain.clone(),
            times: self.times.clone(),
            values: &self.values - &other.values,
        })
    }

    /// Max-norm over nodes, channels and cells.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Max-norm of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Keeps the nodes at the given indices, which must include 0.
    pub fn select_nodes(&self, indices: &[usize]) -> Result<Self> {
        let times = indices.iter().map(|&k| self.times[k]).collect();
        let values = self.values.select(Axis(0), indices);
        Self::new(self.domain.clone(), times, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        let d = Domain::interval(1.0, 4).unwrap();
        assert!(SpaceTimeField::zeros(&d, vec![0.0, 1.0], 2).is_ok());
        assert!(matches!(
            SpaceTimeField::zeros(&d, vec![0.5, 1.0], 2),
            Err(Error::Ordering(_))
        ));
        assert!(matches!(
            SpaceTimeField::zeros(&d, vec![0.0, 1.0, 1.0], 2),
            Err(Error::Ordering(_))
        ));
        let bad = Array4::zeros((2, 2, 1, 5));
        assert!(SpaceTimeField::new(d, vec![0.0, 1.0], bad).is_err());
    }

    #[test]
    fn norms_and_differences() {
        let d = Domain::interval(1.0, 4).unwrap();
        let mut a = SpaceTimeField::zeros(&d, vec![0.0, 1.0], 2).unwrap();
        let b = a.clone();
        a.values_mut()[[1, 1, 0, 2]] = -3.0;
        assert_eq!(a.max_abs(), 3.0);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 3.0);
        let sel = a.select_nodes(&[0]).unwrap();
        assert_eq!(sel.n_times(), 1);
        assert_eq!(sel.max_abs(), 0.0);
    }
}
