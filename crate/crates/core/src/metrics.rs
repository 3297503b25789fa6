//! Trajectory-level error metrics and Monte-Carlo cost evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::max_abs;
use crate::model::{CostParameters, TrajectoryBundle};
use crate::scalar::{from_usize, lit, Scalar};
use crate::sim::MomentSeries;

/// Maximum relative deviations between ground-truth and estimated moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrors {
    pub e_mu_x: f64,
    pub e_mu_u: f64,
    pub e_var_x: f64,
    pub e_var_u: f64,
}

impl TrajectoryErrors {
    pub fn as_array(&self) -> [f64; 4] {
        [self.e_mu_x, self.e_mu_u, self.e_var_x, self.e_var_u]
    }
}

/// `max_t ||gt(t) - est(t)||_inf / max_t ||gt(t)||_inf`.
fn relative_max<T: Scalar>(gt: &DMatrix<T>, est: &DMatrix<T>, what: &'static str) -> Result<f64> {
    if gt.shape() != est.shape() {
        return Err(Error::Dimension(format!("{what}: series shapes differ")));
    }
    let denom = max_abs(gt);
    if denom == T::zero() {
        return Err(Error::UndefinedMetric(what));
    }
    Ok((max_abs(&(gt - est)) / denom).to_f64_lossy())
}

fn worst_player<T: Scalar>(gt: &[DMatrix<T>], est: &[DMatrix<T>], what: &'static str) -> Result<f64> {
    if gt.len() != est.len() {
        return Err(Error::Dimension("player counts differ".into()));
    }
    gt.iter()
        .zip(est)
        .map(|(g, e)| relative_max(g, e, what))
        .try_fold(0.0f64, |acc, r| r.map(|v| acc.max(v)))
}

/// Normalization uses the ground truth only, so the metric is not symmetric
/// in its arguments.
pub fn trajectory_errors<T: Scalar>(gt: &MomentSeries<T>, est: &MomentSeries<T>) -> Result<TrajectoryErrors> {
    Ok(TrajectoryErrors {
        e_mu_x: relative_max(&gt.state_mean, &est.state_mean, "state mean")?,
        e_mu_u: worst_player(&gt.control_mean, &est.control_mean, "control mean")?,
        e_var_x: relative_max(&gt.state_var, &est.state_var, "state variance")?,
        e_var_u: worst_player(&gt.control_var, &est.control_var, "control variance")?,
    })
}

/// Sample average over demonstrations of
/// `int x^T Q_i x + sum_j u_j^T R_ij u_j dt` (trapezoid rule on the grid).
pub fn evaluate_cost<T: Scalar>(bundle: &TrajectoryBundle<T>, costs: &CostParameters<T>, player: usize) -> Result<T> {
    let pc = costs
        .players
        .get(player)
        .ok_or_else(|| Error::Dimension(format!("player index {player} out of range")))?;
    if pc.r.len() != bundle.control_dims().len() {
        return Err(Error::Dimension("cost blocks do not match the bundle".into()));
    }
    let dt = bundle.grid().dt();
    let nodes = bundle.grid().len();
    let half: T = lit(0.5);
    let mut total = T::zero();
    for demo in bundle.demos() {
        let running = |k: usize| {
            let x = demo.states.column(k);
            let mut v = (x.transpose() * &pc.q * x)[(0, 0)];
            for (u, r) in demo.controls.iter().zip(&pc.r) {
                let uk = u.column(k);
                v += (uk.transpose() * r * uk)[(0, 0)];
            }
            v
        };
        let mut acc = T::zero();
        let mut prev = running(0);
        for k in 1..nodes {
            let cur = running(k);
            acc += (prev + cur) * half * dt;
            prev = cur;
        }
        total += acc;
    }
    Ok(total / from_usize(bundle.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Demonstration, PlayerCost, TimeGrid};

    fn series(x: &[f64], u: &[f64]) -> MomentSeries<f64> {
        let m = |v: &[f64]| DMatrix::from_row_slice(1, v.len(), v);
        MomentSeries {
            state_mean: m(x),
            state_var: m(x),
            control_mean: vec![m(u)],
            control_var: vec![m(u)],
        }
    }

    #[test]
    fn identical_series_have_zero_error() {
        let s = series(&[2.0, 1.0], &[1.0, 0.5]);
        assert_eq!(trajectory_errors(&s, &s).unwrap().as_array(), [0.0; 4]);
    }

    #[test]
    fn definition_arithmetic_and_asymmetry() {
        let gt = series(&[2.0, 1.0], &[1.0, 1.0]);
        let est = series(&[1.8, 1.0], &[1.0, 1.0]);
        let e = trajectory_errors(&gt, &est).unwrap();
        assert!((e.e_mu_x - 0.1).abs() < 1e-15);
        let swapped = trajectory_errors(&est, &gt).unwrap();
        assert!((swapped.e_mu_x - 0.2 / 1.8).abs() < 1e-15);
    }

    #[test]
    fn zero_ground_truth_is_undefined() {
        let gt = series(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(trajectory_errors(&gt, &gt), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn constant_integrand_cost() {
        let grid = TimeGrid::new(0.0, 5.0, 50).unwrap();
        let demo = Demonstration {
            states: DMatrix::from_fn(2, 51, |r, _| if r == 0 { 1.0 } else { 0.0 }),
            controls: vec![DMatrix::zeros(1, 51)],
        };
        let b = TrajectoryBundle::new(grid, vec![demo], None).unwrap();
        let costs = CostParameters::new(vec![PlayerCost {
            q: DMatrix::identity(2, 2),
            r: vec![DMatrix::from_element(1, 1, 1.0)],
        }]);
        assert!((evaluate_cost::<f64>(&b, &costs, 0).unwrap() - 5.0).abs() < 1e-12);

        let zero = Demonstration { states: DMatrix::zeros(2, 51), controls: vec![DMatrix::zeros(1, 51)] };
        let b = TrajectoryBundle::new(grid, vec![zero], None).unwrap();
        assert_eq!(evaluate_cost(&b, &costs, 0).unwrap(), 0.0);
        assert!(evaluate_cost(&b, &costs, 1).is_err());
    }
}
