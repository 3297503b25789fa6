//! End-to-end inverse identification: gains, then each player's costs, then
//! the noise scaling.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::cost_id::{
    recover_costs, select_nodes, solve_null_space, stack_system, NullSpaceDiagnostics, Quadrature, RecoveryConfig,
};
use crate::error::Result;
use crate::model::{CostParameters, GameDefinition, StrategyProfile, TrajectoryBundle};
use crate::noise_id::{mle_covariance, recover_l, residuals, NoiseEstimate};
use crate::scalar::Scalar;
use crate::strategy_id::{estimate_gains, ExcitationReport, GainEstimationConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationConfig {
    /// Number of evaluation nodes `K` for the cost and noise systems.
    pub nodes: usize,
    pub quadrature: Quadrature,
    pub gains: GainEstimationConfig,
    pub recovery: RecoveryConfig,
}

impl IdentificationConfig {
    pub fn with_nodes(nodes: usize) -> Self {
        Self { nodes, quadrature: Quadrature::default(), gains: GainEstimationConfig::default(), recovery: RecoveryConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct PlayerIdentification<T: Scalar> {
    pub theta: DVector<T>,
    pub singular_values: Vec<f64>,
    pub diagnostics: NullSpaceDiagnostics,
    /// PSD violations reported by the recovery step.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Identification<T: Scalar> {
    pub gains: StrategyProfile<T>,
    pub excitation: ExcitationReport,
    pub nodes: Vec<usize>,
    pub players: Vec<PlayerIdentification<T>>,
    pub costs: CostParameters<T>,
    pub covariance: DMatrix<T>,
    pub noise: NoiseEstimate<T>,
    /// Wall-clock time of the whole identification.
    pub elapsed: Duration,
}

/// Runs the identification on a bundle. Only `A`, `B_i` and the grid of
/// `game` are used.
///
/// The noise covariance is estimated from the residuals at the same `K`
/// evaluation nodes used for the cost systems.
pub fn identify<T: Scalar>(
    game: &GameDefinition<T>,
    bundle: &TrajectoryBundle<T>,
    cfg: &IdentificationConfig,
) -> Result<Identification<T>> {
    let start = Instant::now();
    bundle.check_game(game)?;

    let (gains, excitation) = estimate_gains(bundle, &cfg.gains)?;
    let gains = gains.with_closed_loop(game)?;
    let nodes = select_nodes(game.grid().steps(), cfg.nodes);

    let mut players = Vec::with_capacity(game.players());
    let mut costs = Vec::with_capacity(game.players());
    for i in 0..game.players() {
        let system = stack_system(game, &gains, i, &nodes, cfg.quadrature)?;
        let (theta, diagnostics) = solve_null_space(&system)?;
        let recovered = recover_costs(&theta, game, i, &cfg.recovery)?;
        players.push(PlayerIdentification {
            theta,
            singular_values: system.singular_values.iter().map(|s| s.to_f64_lossy()).collect(),
            diagnostics,
            violations: recovered.violations,
        });
        costs.push(recovered.cost);
    }

    let res = residuals(bundle, game)?.restrict(&nodes)?;
    let covariance = mle_covariance(&res)?;
    let noise = recover_l(&covariance, res.dt)?;

    Ok(Identification {
        gains,
        excitation,
        nodes,
        players,
        costs: CostParameters::new(costs),
        covariance,
        noise,
        elapsed: start.elapsed(),
    })
}
