//! Forward and inverse solvers for finite-horizon linear-quadratic Gaussian
//! differential games.
//!
//! The forward direction integrates the coupled Riccati equations to obtain
//! feedback Nash gains and simulates the closed loop with Euler–Maruyama.
//! The inverse direction takes demonstrations plus `A`, `B_i` and recovers
//! the gains by least squares, each player's cost matrices up to scale from
//! the null space of a stacked linear system, and the diagonal noise scaling
//! by maximum likelihood.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`.

pub mod config;
pub mod cost_id;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod noise_id;
pub mod pipeline;
pub mod riccati;
pub mod scalar;
pub mod sim;
pub mod strategy_id;
pub mod study;

pub use cost_id::Quadrature;
pub use error::{Error, Result};
pub use model::{
    devectorize_costs, validate, vectorize_costs, CostParameters, Demonstration, GameDefinition, NoiseModel,
    PlayerCost, StrategyProfile, TimeGrid, TrajectoryBundle, ValidationReport,
};
pub use riccati::{check_stability, closed_loop_matrix, solve_coupled_riccati, Integrator, RiccatiSolverConfig};
pub use scalar::Scalar;
pub use sim::{empirical_moments, propagate_moments, simulate_bundle, MomentSeries, SimulationConfig};

pub type GameDefinition64 = GameDefinition<f64>;
pub type CostParameters64 = CostParameters<f64>;
pub type PlayerCost64 = PlayerCost<f64>;
pub type NoiseModel64 = NoiseModel<f64>;
pub type StrategyProfile64 = StrategyProfile<f64>;
pub type TrajectoryBundle64 = TrajectoryBundle<f64>;
pub type MomentSeries64 = MomentSeries<f64>;

pub type GameDefinition32 = GameDefinition<f32>;
pub type CostParameters32 = CostParameters<f32>;
pub type StrategyProfile32 = StrategyProfile<f32>;
pub type TrajectoryBundle32 = TrajectoryBundle<f32>;
