//! Autoregressive rollout and relative L² rollout metrics.

use ndarray::{Array3, ArrayView3, Axis};

use super::model::OperatorModel;
use super::Real;
use crate::error::{Error, Result};
use crate::field::{check_nodes, SpaceTimeField};

/// Rollouts whose state exceeds this magnitude are reported as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e3;

/// Iterates the one-step map from `ic` through `times` (starting at 0).
pub fn rollout<F: Real>(model: &OperatorModel<F>, ic: ArrayView3<f64>, s_eq: f64, times: &[f64]) -> Result<SpaceTimeField> {
    check_nodes(times)?;
    let mut snaps: Vec<Array3<f64>> = Vec::with_capacity(times.len());
    snaps.push(ic.to_owned());
    for (k, w) in times.windows(2).enumerate() {
        let next = model.predict(snaps[k].view(), s_eq, w[1] - w[0])?;
        if next.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::Divergence {
                step: k + 1,
                time: w[1],
            });
        }
        snaps.push(next);
    }
    SpaceTimeField::from_snapshots(model.domain(), times.to_vec(), &snaps)
}

/// Relative L² errors of a rollout against the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutMetrics {
    /// Space-time error per channel over all nodes after the first.
    pub per_channel: [f64; 2],
    /// Spatial error per channel at each node after the first.
    pub per_step: Vec<[f64; 2]>,
}

/// Channel-wise `‖pred − truth‖ / ‖truth‖` with cell-area weights over `t > 0`.
pub fn relative_l2(pred: &SpaceTimeField, truth: &SpaceTimeField) -> Result<RolloutMetrics> {
    pred.check_compatible(truth)?;
    if pred.channels() != 2 {
        return Err(crate::error::dim_err(2, pred.channels()));
    }
    let area = truth.domain().cell_area();
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    let mut per_step = Vec::with_capacity(truth.n_times().saturating_sub(1));
    for k in 1..truth.n_times() {
        let (p, t) = (pred.snapshot(k), truth.snapshot(k));
        let mut step = [0.0; 2];
        for c in 0..2 {
            let (pc, tc) = (p.index_axis(Axis(0), c), t.index_axis(Axis(0), c));
            let e: f64 = pc.iter().zip(tc.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * area;
            let n: f64 = tc.iter().map(|b| b * b).sum::<f64>() * area;
            num[c] += e;
            den[c] += n;
            step[c] = if n > 0.0 { (e / n).sqrt() } else { f64::NAN };
        }
        per_step.push(step);
    }
    if den.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::UndefinedMetric("truth has zero norm over t > 0".into()));
    }
    Ok(RolloutMetrics {
        per_channel: [(num[0] / den[0]).sqrt(), (num[1] / den[1]).sqrt()],
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Domain;
    use crate::operator::{BasisKind, OperatorConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;

    fn field(d: &Domain, f: impl Fn(usize, usize) -> f64) -> SpaceTimeField {
        let times = vec![0.0, 1.0, 2.0];
        let v = Array4::from_shape_fn((3, 2, d.ny(), d.nx()), |(k, c, _, i)| f(k * 2 + c, i));
        SpaceTimeField::new(d.clone(), times, v).unwrap()
    }

    #[test]
    fn metric_closed_forms() {
        let d = Domain::interval(1.0, 8).unwrap();
        let t = field(&d, |a, i| 1.0 + (a + i) as f64 * 0.1);
        assert_eq!(relative_l2(&t, &t).unwrap().per_channel, [0.0, 0.0]);
        let mut two = t.clone();
        two.values_mut().mapv_inplace(|v| 2.0 * v);
        let m = relative_l2(&two, &t).unwrap();
        assert_abs_diff_eq!(m.per_channel[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.per_channel[1], 1.0, epsilon = 1e-15);
        let c = field(&d, |_, _| 3.0);
        let shifted = field(&d, |_, _| 3.0 - 0.6);
        let m = relative_l2(&shifted, &c).unwrap();
        assert_abs_diff_eq!(m.per_channel[0], 0.2, epsilon = 1e-14);
        assert_eq!(m.per_step.len(), 2);
    }

    #[test]
    fn zero_truth_is_undefined() {
        let d = Domain::interval(1.0, 4).unwrap();
        let z = field(&d, |_, _| 0.0);
        assert!(matches!(relative_l2(&z, &z), Err(Error::UndefinedMetric(_))));
    }

    fn identity(d: &Domain) -> OperatorModel {
        let cfg = OperatorConfig {
            basis: BasisKind::NeumannCosine,
            width: 2,
            depth: 1,
            modes: [2, 2],
            residual: true,
        };
        OperatorModel::zeros(cfg, d).unwrap()
    }

    #[test]
    fn identity_rollout_is_constant() {
        let d = Domain::rectangle(1.0, 1.0, 4, 4).unwrap();
        let m = identity(&d);
        let ic = Array3::from_shape_fn((2, 4, 4), |(c, j, i)| 1.0 + (c + j + i) as f64);
        let r = rollout(&m, ic.view(), 0.7, &[0.0]).unwrap();
        assert_eq!(r.n_times(), 1);
        let r = rollout(&m, ic.view(), 0.7, &[0.0, 2.0, 4.0, 54.0]).unwrap();
        for k in 0..4 {
            assert_eq!(r.snapshot(k), ic.view());
        }
    }

    #[test]
    fn divergence_reports_step() {
        let d = Domain::rectangle(1.0, 1.0, 4, 4).unwrap();
        let mut m = identity(&d);
        m.projection_mut().1[0] = 400.0;
        let ic = Array3::from_elem((2, 4, 4), 1.0);
        let err = rollout(&m, ic.view(), 0.7, &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 3, .. }), "{err}");
    }
}
