//! Euler–Maruyama simulation of the closed-loop game and sample moments of
//! the resulting demonstrations.
//!
//! Each demonstration draws from its own ChaCha stream (`stream = d`) under
//! the shared seed, so demonstrations can be generated in any order or in
//! parallel and the bundle stays bit-identical.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Demonstration, GameDefinition, NoiseModel, StrategyProfile, TrajectoryBundle};
use crate::linalg::symmetrize;
use crate::riccati::closed_loop_matrix;
use crate::scalar::{from_usize, lit, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig<T: Scalar> {
    /// Number of demonstrations, at least 1.
    pub demos: usize,
    pub seed: u64,
    /// Drop the diffusion term. Bypasses the `l_s > 0` requirement.
    pub deterministic: bool,
    /// Per-demonstration initial states; falls back to the game's `x0`.
    pub initial_states: Option<Vec<DVector<T>>>,
}

impl<T: Scalar> SimulationConfig<T> {
    pub fn new(demos: usize, seed: u64) -> Self {
        Self { demos, seed, deterministic: false, initial_states: None }
    }

    pub fn deterministic(mut self) -> Self {
        self.deterministic = true;
        self
    }
}

/// Name of the generator family used for every bundle.
pub const RNG_NAME: &str = "chacha8-stream-per-demo";

pub(crate) fn demo_rng(seed: u64, demo: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(demo as u64);
    rng
}

/// Standard-normal increments scaled by `sqrt(dt)`: one `n`-vector per step.
/// These are exactly the increments `simulate_bundle` uses for demonstration
/// `demo`.
pub fn wiener_increments<T: Scalar>(seed: u64, demo: usize, n: usize, steps: usize, dt: T) -> Vec<DVector<T>> {
    let mut rng = demo_rng(seed, demo);
    let sqrt_dt = dt.sqrt();
    (0..steps)
        .map(|_| {
            DVector::from_iterator(
                n,
                (0..n).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    lit::<T>(z) * sqrt_dt
                }),
            )
        })
        .collect()
}

/// Simulates `cfg.demos` closed-loop trajectories
/// `x_{k+1} = x_k + (A x_k + sum_i B_i u_{i,k}) dt + L dw_k` with
/// `u_{i,k} = -K_i(t_k) x_k`. Controls are recorded at every node, including
/// `t_N`.
pub fn simulate_bundle<T: Scalar>(
    game: &GameDefinition<T>,
    profile: &StrategyProfile<T>,
    noise: &NoiseModel<T>,
    cfg: &SimulationConfig<T>,
) -> Result<TrajectoryBundle<T>> {
    if cfg.demos == 0 {
        return Err(Error::Config("demonstration count must be at least 1".into()));
    }
    profile.check_game(game)?;
    let grid = *game.grid();
    let dt = grid.dt();
    let n = game.state_dim();
    if noise.matrix().nrows() != n {
        return Err(Error::Dimension(format!("L must be {n}x{n}")));
    }
    if !cfg.deterministic {
        let v = noise.violations();
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let tol = lit::<T>(1e-9) * dt.abs().max(T::one());
        if (noise.dt() - dt).abs() > tol {
            return Err(Error::Config(format!("noise dt {} differs from grid step {}", noise.dt(), dt)));
        }
    }
    if let Some(x0s) = &cfg.initial_states {
        if x0s.len() != cfg.demos || x0s.iter().any(|x| x.len() != n) {
            return Err(Error::Dimension("initial-state overrides must give one n-vector per demonstration".into()));
        }
    }

    let demos = (0..cfg.demos)
        .into_par_iter()
        .map(|d| {
            let x0 = cfg
                .initial_states
                .as_ref()
                .map(|v| v[d].clone())
                .unwrap_or_else(|| game.x0().clone());
            let increments = if cfg.deterministic {
                None
            } else {
                Some(wiener_increments(cfg.seed, d, n, grid.steps(), dt))
            };
            simulate_one(game, profile, noise.matrix(), x0, increments.as_deref(), d)
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryBundle::new(grid, demos, Some(cfg.seed))
}

fn simulate_one<T: Scalar>(
    game: &GameDefinition<T>,
    profile: &StrategyProfile<T>,
    l: &DMatrix<T>,
    x0: DVector<T>,
    increments: Option<&[DVector<T>]>,
    demo: usize,
) -> Result<Demonstration<T>> {
    let grid = game.grid();
    let dt = grid.dt();
    let nodes = grid.len();
    let players = game.players();
    let mut states = DMatrix::zeros(game.state_dim(), nodes);
    let mut controls: Vec<DMatrix<T>> = (0..players).map(|i| DMatrix::zeros(game.control_dim(i), nodes)).collect();

    let mut x = x0;
    for k in 0..nodes {
        states.set_column(k, &x);
        let mut drift = game.a() * &x;
        for i in 0..players {
            let u = -(profile.gain(i, k) * &x);
            drift += game.b(i) * &u;
            controls[i].set_column(k, &u);
        }
        if k + 1 == nodes {
            break;
        }
        let mut next = &x + drift * dt;
        if let Some(dw) = increments {
            next += l * &dw[k];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Explosion { demo, time: grid.time(k + 1).to_f64_lossy() });
        }
        x = next;
    }
    Ok(Demonstration { states, controls })
}

/// Per-node sample mean and unbiased sample variance of states and controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries<T: Scalar> {
    /// `n x nodes`.
    pub state_mean: DMatrix<T>,
    pub state_var: DMatrix<T>,
    /// Per player, `m_i x nodes`.
    pub control_mean: Vec<DMatrix<T>>,
    pub control_var: Vec<DMatrix<T>>,
}

fn mean_var<T: Scalar>(samples: &[&DMatrix<T>]) -> (DMatrix<T>, DMatrix<T>) {
    let d = samples.len();
    let (r, c) = samples[0].shape();
    let mut mean = DMatrix::zeros(r, c);
    for s in samples {
        mean += *s;
    }
    mean /= from_usize::<T>(d);
    let mut var = DMatrix::zeros(r, c);
    for s in samples {
        let diff = *s - &mean;
        var += diff.component_mul(&diff);
    }
    var /= from_usize::<T>(d - 1);
    (mean, var)
}

/// Sample moments across demonstrations. Needs at least two demonstrations.
pub fn empirical_moments<T: Scalar>(bundle: &TrajectoryBundle<T>) -> Result<MomentSeries<T>> {
    if bundle.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 demonstrations, got {}",
            bundle.len()
        )));
    }
    let states: Vec<&DMatrix<T>> = bundle.demos().iter().map(|d| &d.states).collect();
    let (state_mean, state_var) = mean_var(&states);
    let (control_mean, control_var) = (0..bundle.control_dims().len())
        .map(|i| {
            let u: Vec<&DMatrix<T>> = bundle.demos().iter().map(|d| &d.controls[i]).collect();
            mean_var(&u)
        })
        .unzip();
    Ok(MomentSeries { state_mean, state_var, control_mean, control_var })
}

/// Exact first and second moments of the Euler-Maruyama recursion started
/// at `game.x0`:
///
/// ```text
/// mu_{k+1}    = Phi_k mu_k
/// Sigma_{k+1} = Phi_k Sigma_k Phi_k^T + L L^T dt,   Phi_k = I + (A - sum_i B_i K_i(t_k)) dt
/// ```
///
/// Control moments follow from `u_i = -K_i x`. Variances are the diagonals.
pub fn propagate_moments<T: Scalar>(
    game: &GameDefinition<T>,
    profile: &StrategyProfile<T>,
    noise: &NoiseModel<T>,
) -> Result<MomentSeries<T>> {
    profile.check_game(game)?;
    let grid = game.grid();
    let n = game.state_dim();
    if noise.matrix().shape() != (n, n) {
        return Err(Error::Dimension(format!("L must be {n}x{n}")));
    }
    let dt = grid.dt();
    let nodes = grid.len();
    let diffusion = noise.covariance_rate() * dt;
    let eye = DMatrix::<T>::identity(n, n);

    let mut state_mean = DMatrix::zeros(n, nodes);
    let mut state_var = DMatrix::zeros(n, nodes);
    let dims = game.control_dims();
    let mut control_mean: Vec<DMatrix<T>> = dims.iter().map(|&m| DMatrix::zeros(m, nodes)).collect();
    let mut control_var: Vec<DMatrix<T>> = dims.iter().map(|&m| DMatrix::zeros(m, nodes)).collect();

    let mut mu = game.x0().clone();
    let mut sigma = DMatrix::<T>::zeros(n, n);
    for k in 0..nodes {
        state_mean.set_column(k, &mu);
        state_var.set_column(k, &sigma.diagonal());
        for (i, kg) in profile.gains_at(k).iter().enumerate() {
            control_mean[i].set_column(k, &(-(kg * &mu)));
            control_var[i].set_column(k, &(kg * &sigma * kg.transpose()).diagonal());
        }
        if k + 1 < nodes {
            let phi = &eye + closed_loop_matrix(game, &profile.gains_at(k))? * dt;
            mu = &phi * mu;
            sigma = &phi * sigma * phi.transpose() + &diffusion;
            sigma = symmetrize(&sigma);
        }
    }
    Ok(MomentSeries { state_mean, state_var, control_mean, control_var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;

    fn scalar_setup() -> (GameDefinition<f64>, StrategyProfile<f64>) {
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let game = GameDefinition::new(
            DMatrix::from_element(1, 1, 0.5),
            vec![DMatrix::from_element(1, 1, 1.0)],
            grid,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let prof = StrategyProfile::constant(grid, vec![DMatrix::from_element(1, 1, 2.0)]).unwrap();
        (game, prof)
    }

    #[test]
    fn deterministic_mode_is_explicit_euler() {
        let (game, prof) = scalar_setup();
        let noise = NoiseModel::diagonal(&[0.0], 0.01);
        let b = simulate_bundle(&game, &prof, &noise, &SimulationConfig::new(1, 0).deterministic()).unwrap();
        let x = &b.demos()[0].states;
        for k in 0..=100 {
            let expected = (1.0f64 - 1.5 * 0.01).powi(k as i32);
            assert!((x[(0, k)] - expected).abs() < 1e-13);
            assert_eq!(b.demos()[0].controls[0][(0, k)], -2.0 * x[(0, k)]);
        }
        // and within O(dt) of the exact ODE solution
        assert!((x[(0, 100)] - (-1.5f64).exp()).abs() < 0.01);
    }

    #[test]
    fn zero_demos_and_bad_noise_are_rejected() {
        let (game, prof) = scalar_setup();
        let noise = NoiseModel::diagonal(&[0.1], 0.01);
        assert!(simulate_bundle(&game, &prof, &noise, &SimulationConfig::new(0, 1)).is_err());
        let zero = NoiseModel::diagonal(&[0.0], 0.01);
        assert!(matches!(
            simulate_bundle(&game, &prof, &zero, &SimulationConfig::new(2, 1)),
            Err(Error::Validation(_))
        ));
        let wrong_dt = NoiseModel::diagonal(&[0.1], 0.02);
        assert!(simulate_bundle(&game, &prof, &wrong_dt, &SimulationConfig::new(2, 1)).is_err());
    }

    #[test]
    fn explosion_is_diagnosed() {
        let grid = TimeGrid::new(0.0, 100.0, 100).unwrap();
        let game = GameDefinition::new(
            DMatrix::from_element(1, 1, 1e4),
            vec![DMatrix::from_element(1, 1, 1.0)],
            grid,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let prof = StrategyProfile::constant(grid, vec![DMatrix::zeros(1, 1)]).unwrap();
        let noise = NoiseModel::diagonal(&[0.1], 1.0);
        match simulate_bundle(&game, &prof, &noise, &SimulationConfig::new(3, 1)) {
            Err(Error::Explosion { time, .. }) => assert!(time > 0.0),
            other => panic!("expected explosion, got {other:?}"),
        }
    }

    #[test]
    fn moment_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let demo = |x: f64| Demonstration {
            states: DMatrix::from_row_slice(1, 2, &[x, x]),
            controls: vec![DMatrix::from_row_slice(1, 2, &[-x, 0.0])],
        };
        let b = TrajectoryBundle::new(grid, vec![demo(1.0), demo(3.0)], None).unwrap();
        let m = empirical_moments(&b).unwrap();
        assert_eq!(m.state_mean[(0, 0)], 2.0);
        assert_eq!(m.state_var[(0, 1)], 2.0);
        assert_eq!(m.control_var[0][(0, 1)], 0.0);

        let same = TrajectoryBundle::new(grid, vec![demo(1.5); 4], None).unwrap();
        let m = empirical_moments(&same).unwrap();
        assert!(m.state_var.iter().all(|&v| v == 0.0));
        assert_eq!(m.state_mean[(0, 1)], 1.5);

        let single = TrajectoryBundle::new(grid, vec![demo(1.0)], None).unwrap();
        assert!(empirical_moments(&single).is_err());
    }
}
