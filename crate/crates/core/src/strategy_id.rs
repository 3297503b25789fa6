//! Per-node least-squares identification of feedback gains from
//! demonstrations: `U_i(t) = -K_i(t) X(t)`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{StrategyProfile, TrajectoryBundle};
use crate::scalar::{from_usize, lit, Scalar};

/// Condition-number threshold above which a node counts as under-excited.
pub const DEFAULT_COND_THRESHOLD: f64 = 1e8;

/// Snapshot matrices at one node: `X` is `n x D`, `U[i]` is `m_i x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T: Scalar> {
    pub states: DMatrix<T>,
    pub controls: Vec<DMatrix<T>>,
}

/// Columns are demonstrations in bundle order.
pub fn assemble_snapshot<T: Scalar>(bundle: &TrajectoryBundle<T>, k: usize) -> Result<Snapshot<T>> {
    if k >= bundle.grid().len() {
        return Err(Error::Dimension(format!("node {k} outside grid of {} nodes", bundle.grid().len())));
    }
    let demos = bundle.demos();
    let states = DMatrix::from_columns(&demos.iter().map(|d| d.states.column(k)).collect::<Vec<_>>());
    let controls = (0..bundle.control_dims().len())
        .map(|i| DMatrix::from_columns(&demos.iter().map(|d| d.controls[i].column(k)).collect::<Vec<_>>()))
        .collect();
    Ok(Snapshot { states, controls })
}

/// Excitation diagnostics per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationReport {
    pub times: Vec<f64>,
    /// Condition number of `X X^T` (infinite when singular).
    pub cond: Vec<f64>,
    pub flagged: Vec<bool>,
    /// Nodes whose gain was copied from a neighbouring unflagged node.
    pub backfilled: Vec<usize>,
    pub warnings: Vec<String>,
}

impl ExcitationReport {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimationConfig {
    pub cond_threshold: f64,
    /// Replace gains at flagged nodes by the nearest unflagged estimate.
    pub backfill: bool,
}

impl Default for GainEstimationConfig {
    fn default() -> Self {
        Self { cond_threshold: DEFAULT_COND_THRESHOLD, backfill: true }
    }
}

struct NodeEstimate<T: Scalar> {
    gains: Vec<DMatrix<T>>,
    cond: f64,
}

/// Minimum-norm least squares at one node through the SVD of `X^T`.
fn estimate_node<T: Scalar>(snap: &Snapshot<T>) -> NodeEstimate<T> {
    let xt = snap.states.transpose();
    let (rows, cols) = xt.shape();
    let svd = xt.svd(true, true);
    let sigma = &svd.singular_values;
    let s_max = sigma.iter().fold(T::zero(), |a, &s| a.max(s));
    let s_min = if rows >= cols {
        sigma.iter().fold(s_max, |a, &s| a.min(s))
    } else {
        T::zero()
    };
    let cond = if s_min > T::zero() {
        let r = (s_max / s_min).to_f64_lossy();
        r * r
    } else {
        f64::INFINITY
    };
    let eps = s_max * from_usize::<T>(rows.max(cols)) * T::epsilon();
    let gains = snap
        .controls
        .iter()
        .map(|u| {
            let rhs = -u.transpose();
            let z = svd
                .solve(&rhs, eps)
                .unwrap_or_else(|_| DMatrix::zeros(cols, u.nrows()));
            z.transpose()
        })
        .collect();
    NodeEstimate { gains, cond }
}

/// Estimates `K_i(t_k)` at every node. Nodes where `cond(X X^T)` exceeds the
/// threshold are flagged; with backfill enabled their gains are copied from
/// the nearest unflagged node (the later one on ties), otherwise the
/// minimum-norm solution is kept.
pub fn estimate_gains<T: Scalar>(
    bundle: &TrajectoryBundle<T>,
    cfg: &GainEstimationConfig,
) -> Result<(StrategyProfile<T>, ExcitationReport)> {
    if !(cfg.cond_threshold > 0.0) {
        return Err(Error::Config("condition threshold must be positive".into()));
    }
    let grid = *bundle.grid();
    let nodes = grid.len();
    let estimates: Vec<NodeEstimate<T>> = (0..nodes)
        .into_par_iter()
        .map(|k| assemble_snapshot(bundle, k).map(|s| estimate_node(&s)))
        .collect::<Result<_>>()?;

    let flagged: Vec<bool> = estimates.iter().map(|e| !(e.cond <= cfg.cond_threshold)).collect();
    let players = bundle.control_dims().len();
    let mut per_node: Vec<Vec<DMatrix<T>>> = estimates.iter().map(|e| e.gains.clone()).collect();
    let mut backfilled = Vec::new();
    let mut warnings = Vec::new();

    let good: Vec<usize> = (0..nodes).filter(|&k| !flagged[k]).collect();
    if good.is_empty() {
        warnings.push(format!(
            "all {nodes} nodes under-excited (D = {}); keeping minimum-norm estimates",
            bundle.len()
        ));
    } else {
        let flagged_nodes: Vec<usize> = (0..nodes).filter(|&k| flagged[k]).collect();
        if !flagged_nodes.is_empty() {
            warnings.push(format!(
                "{} of {nodes} nodes under-excited (first at t = {})",
                flagged_nodes.len(),
                grid.time(flagged_nodes[0])
            ));
        }
        if cfg.backfill {
            for k in flagged_nodes {
                let pos = good.partition_point(|&g| g < k);
                let later = good.get(pos).copied();
                let earlier = pos.checked_sub(1).map(|p| good[p]);
                let src = match (earlier, later) {
                    (Some(e), Some(l)) => if k - e < l - k { e } else { l },
                    (Some(e), None) => e,
                    (None, Some(l)) => l,
                    (None, None) => unreachable!(),
                };
                per_node[k] = per_node[src].clone();
                backfilled.push(k);
            }
        }
    }

    let gains: Vec<Vec<DMatrix<T>>> = (0..players)
        .map(|i| per_node.iter().map(|g| g[i].clone()).collect())
        .collect();
    let report = ExcitationReport {
        times: grid.times().into_iter().map(|t| t.to_f64_lossy()).collect(),
        cond: estimates.iter().map(|e| e.cond).collect(),
        flagged,
        backfilled,
        warnings,
    };
    Ok((StrategyProfile::new(grid, gains)?, report))
}

/// Relative Frobenius error `||K_hat - K|| / ||K||`, or the absolute error
/// when `K` vanishes.
pub fn relative_gain_error<T: Scalar>(est: &DMatrix<T>, truth: &DMatrix<T>) -> f64 {
    let diff = (est - truth).norm();
    let scale = truth.norm();
    if scale > lit(0.0) {
        (diff / scale).to_f64_lossy()
    } else {
        diff.to_f64_lossy()
    }
}
