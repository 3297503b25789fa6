//! Backward integration of the coupled Riccati differential equations of a
//! finite-horizon N-player game and extraction of the feedback Nash gains.
//!
//! For each player `i`
//!
//! ```text
//! dP_i/dt = -Q_i - P_i F - F^T P_i - sum_j P_j B_j R_jj^-1 R_ij R_jj^-1 B_j^T P_j
//! K_i     = R_ii^-1 B_i^T P_i
//! F       = A - sum_i B_i K_i
//! ```
//!
//! with `P_i(t_N) = 0` (no terminal cost). The gains are re-derived from the
//! current `P` at every integrator stage.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::{CostParameters, GameDefinition, StrategyProfile};
use crate::scalar::{from_usize, lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiccatiSolverConfig {
    pub integrator: Integrator,
    /// Integration substeps per grid interval, at least 1.
    pub substeps: usize,
    /// Fill in [`StabilityReport`] alongside the solve in callers that ask for it.
    pub stability_check: bool,
}

impl Default for RiccatiSolverConfig {
    fn default() -> Self {
        Self { integrator: Integrator::Rk4, substeps: 10, stability_check: true }
    }
}

/// Precomputed, time-invariant pieces of the right-hand side.
struct RiccatiSystem<T: Scalar> {
    a: DMatrix<T>,
    b: Vec<DMatrix<T>>,
    q: Vec<DMatrix<T>>,
    /// `R_ii^-1 B_i^T`.
    gain_map: Vec<DMatrix<T>>,
    /// `coupling[i][j] = B_j R_jj^-1 R_ij R_jj^-1 B_j^T`.
    coupling: Vec<Vec<DMatrix<T>>>,
}

impl<T: Scalar> RiccatiSystem<T> {
    fn new(game: &GameDefinition<T>, costs: &CostParameters<T>) -> Result<Self> {
        costs.check_dims(game)?;
        let players = game.players();
        let r_inv = (0..players)
            .map(|j| {
                costs.players[j].r[j]
                    .clone()
                    .try_inverse()
                    .filter(|m| m.iter().all(|x| x.is_finite()))
                    .ok_or(Error::SingularControlWeight { player: j + 1 })
            })
            .collect::<Result<Vec<_>>>()?;
        let gain_map = (0..players).map(|i| &r_inv[i] * game.b(i).transpose()).collect();
        let coupling = (0..players)
            .map(|i| {
                (0..players)
                    .map(|j| {
                        let bj = game.b(j);
                        bj * &r_inv[j] * &costs.players[i].r[j] * &r_inv[j] * bj.transpose()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            a: game.a().clone(),
            b: game.b_all().to_vec(),
            q: costs.players.iter().map(|p| p.q.clone()).collect(),
            gain_map,
            coupling,
        })
    }

    fn gains(&self, p: &[DMatrix<T>]) -> Vec<DMatrix<T>> {
        self.gain_map.iter().zip(p).map(|(g, pi)| g * pi).collect()
    }

    fn closed_loop(&self, gains: &[DMatrix<T>]) -> DMatrix<T> {
        let mut f = self.a.clone();
        for (b, k) in self.b.iter().zip(gains) {
            f -= b * k;
        }
        f
    }

    /// Time derivative `dP_i/dt` for every player.
    fn derivative(&self, p: &[DMatrix<T>]) -> Vec<DMatrix<T>> {
        let f = self.closed_loop(&self.gains(p));
        let ft = f.transpose();
        (0..p.len())
            .map(|i| {
                let mut d = -&self.q[i] - &p[i] * &f - &ft * &p[i];
                for (j, pj) in p.iter().enumerate() {
                    d -= pj * &self.coupling[i][j] * pj;
                }
                d
            })
            .collect()
    }
}

fn axpy<T: Scalar>(p: &[DMatrix<T>], h: T, k: &[DMatrix<T>]) -> Vec<DMatrix<T>> {
    p.iter().zip(k).map(|(pi, ki)| pi + ki * h).collect()
}

fn all_finite<T: Scalar>(p: &[DMatrix<T>]) -> bool {
    p.iter().all(|m| m.iter().all(|x| x.is_finite()))
}

/// Integrates the coupled Riccati equations backward from `P_i(t_N) = 0` and
/// returns `P_i`, `K_i` and `F` at every grid node.
pub fn solve_coupled_riccati<T: Scalar>(
    game: &GameDefinition<T>,
    costs: &CostParameters<T>,
    cfg: &RiccatiSolverConfig,
) -> Result<StrategyProfile<T>> {
    if cfg.substeps == 0 {
        return Err(Error::Config("riccati substeps must be at least 1".into()));
    }
    let sys = RiccatiSystem::new(game, costs)?;
    let grid = *game.grid();
    let n = game.state_dim();
    let players = game.players();
    let h = grid.dt() / from_usize(cfg.substeps);
    let half: T = lit(0.5);
    let sixth: T = lit(1.0 / 6.0);
    let two: T = lit(2.0);

    let mut p: Vec<DMatrix<T>> = vec![DMatrix::zeros(n, n); players];
    let mut p_nodes: Vec<Vec<DMatrix<T>>> = vec![Vec::with_capacity(grid.len()); players];
    let record = |p: &[DMatrix<T>], store: &mut Vec<Vec<DMatrix<T>>>| {
        for (s, pi) in store.iter_mut().zip(p) {
            s.push(pi.clone());
        }
    };
    record(&p, &mut p_nodes);

    // March in reverse time: with s = t_N - t, dP/ds = -dP/dt.
    for k in (0..grid.steps()).rev() {
        for sub in 0..cfg.substeps {
            let next = match cfg.integrator {
                Integrator::Euler => {
                    let d = sys.derivative(&p);
                    axpy(&p, -h, &d)
                }
                Integrator::Rk4 => {
                    let k1 = sys.derivative(&p);
                    let k2 = sys.derivative(&axpy(&p, -h * half, &k1));
                    let k3 = sys.derivative(&axpy(&p, -h * half, &k2));
                    let k4 = sys.derivative(&axpy(&p, -h, &k3));
                    p.iter()
                        .enumerate()
                        .map(|(i, pi)| pi - (&k1[i] + &k2[i] * two + &k3[i] * two + &k4[i]) * (h * sixth))
                        .collect()
                }
            };
            p = next.iter().map(symmetrize).collect();
            if !all_finite(&p) {
                let t = grid.time(k + 1) - h * from_usize(sub + 1);
                return Err(Error::Divergence { time: t.to_f64_lossy() });
            }
        }
        record(&p, &mut p_nodes);
    }
    for pi in &mut p_nodes {
        pi.reverse();
    }

    let gains: Vec<Vec<DMatrix<T>>> = (0..players)
        .map(|i| p_nodes[i].iter().map(|pik| &sys.gain_map[i] * pik).collect())
        .collect();
    StrategyProfile::new(grid, gains)?
        .with_riccati(p_nodes)?
        .with_closed_loop(game)
}

/// `F = A - sum_i B_i K_i`.
pub fn closed_loop_matrix<T: Scalar>(game: &GameDefinition<T>, gains: &[DMatrix<T>]) -> Result<DMatrix<T>> {
    if gains.len() != game.players() {
        return Err(Error::Dimension(format!("{} gains for {} players", gains.len(), game.players())));
    }
    let n = game.state_dim();
    let mut f = game.a().clone();
    for (i, k) in gains.iter().enumerate() {
        if k.shape() != (game.control_dim(i), n) {
            return Err(Error::Dimension(format!(
                "K_{} is {}x{}, expected {}x{n}",
                i + 1,
                k.nrows(),
                k.ncols(),
                game.control_dim(i)
            )));
        }
        f -= game.b(i) * k;
    }
    Ok(f)
}

/// Per-node spectral abscissa of the closed-loop matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub max_real_part: Vec<f64>,
    pub stable: bool,
}

impl StabilityReport {
    pub fn worst(&self) -> f64 {
        self.max_real_part.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Node after which every node is unstable, if the instability is
    /// confined to a terminal window. `None` when stable everywhere or when
    /// an unstable node is followed by a stable one.
    pub fn unstable_tail(&self) -> Option<usize> {
        let last_stable = self.max_real_part.iter().rposition(|&x| x < 0.0);
        let start = last_stable.map_or(0, |k| k + 1);
        let earlier_unstable = self.max_real_part[..start].iter().any(|&x| x >= 0.0);
        (start < self.max_real_part.len() && !earlier_unstable).then_some(start)
    }
}

pub fn spectral_abscissa<T: Scalar>(f: &DMatrix<T>) -> f64 {
    f.complex_eigenvalues()
        .iter()
        .map(|z| z.re.to_f64_lossy())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Stability of `F(t_k)` at every node; `stable` iff every eigenvalue has a
/// strictly negative real part everywhere.
pub fn check_stability<T: Scalar>(profile: &StrategyProfile<T>) -> Result<StabilityReport> {
    let f = profile
        .closed_loop()
        .ok_or_else(|| Error::InsufficientData("profile does not store closed-loop matrices".into()))?;
    Ok(stability_of(f))
}

pub fn stability_of<T: Scalar>(f: &[DMatrix<T>]) -> StabilityReport {
    let max_real_part: Vec<f64> = f.iter().map(spectral_abscissa).collect();
    let stable = max_real_part.iter().all(|&x| x < 0.0);
    StabilityReport { max_real_part, stable }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PlayerCost, TimeGrid};
    use nalgebra::DVector;

    fn scalar_game(a: f64, b: f64, steps: usize) -> GameDefinition<f64> {
        GameDefinition::new(
            DMatrix::from_element(1, 1, a),
            vec![DMatrix::from_element(1, 1, b)],
            TimeGrid::new(0.0, 1.0, steps).unwrap(),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_gains_give_a() {
        let game = scalar_game(2.0, 1.0, 4);
        let f = closed_loop_matrix(&game, &[DMatrix::zeros(1, 1)]).unwrap();
        assert_eq!(f[(0, 0)], 2.0);
        let f = closed_loop_matrix(&game, &[DMatrix::from_element(1, 1, 3.0)]).unwrap();
        assert_eq!(f[(0, 0)], -1.0);
        assert!(closed_loop_matrix(&game, &[DMatrix::zeros(2, 1)]).is_err());
        assert!(closed_loop_matrix(&game, &[]).is_err());
    }

    #[test]
    fn terminal_gain_is_zero() {
        let game = scalar_game(1.0, 1.0, 20);
        let costs = CostParameters::new(vec![PlayerCost {
            q: DMatrix::from_element(1, 1, 1.0),
            r: vec![DMatrix::from_element(1, 1, 1.0)],
        }]);
        let prof = solve_coupled_riccati(&game, &costs, &RiccatiSolverConfig::default()).unwrap();
        assert_eq!(prof.gain(0, 20)[(0, 0)], 0.0);
        assert!(prof.gain(0, 0)[(0, 0)] > 0.0);
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        // a = 0, b = 1, q = r = 1: dP/dt = -1 + P^2, P(T) = 0 => P = tanh(T - t)
        let game = scalar_game(0.0, 1.0, 50);
        let costs = CostParameters::new(vec![PlayerCost {
            q: DMatrix::from_element(1, 1, 1.0),
            r: vec![DMatrix::from_element(1, 1, 1.0)],
        }]);
        let prof = solve_coupled_riccati(&game, &costs, &RiccatiSolverConfig::default()).unwrap();
        let p = &prof.riccati().unwrap()[0];
        for (k, t) in game.grid().times().into_iter().enumerate() {
            assert!((p[k][(0, 0)] - (1.0 - t).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_r_is_rejected() {
        let game = scalar_game(0.0, 1.0, 5);
        let costs = CostParameters::new(vec![PlayerCost {
            q: DMatrix::from_element(1, 1, 1.0),
            r: vec![DMatrix::zeros(1, 1)],
        }]);
        let err = solve_coupled_riccati(&game, &costs, &RiccatiSolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SingularControlWeight { player: 1 }));
    }

    #[test]
    fn divergence_reports_time() {
        // dP/dt = -1 - P^2 with P(T) = 0 gives P = tan(T - t), blowing up at T - pi/2.
        let game = GameDefinition::new(
            DMatrix::from_element(1, 1, 0.0),
            vec![DMatrix::from_element(1, 1, 1.0)],
            TimeGrid::new(0.0, 3.0, 30).unwrap(),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let costs = CostParameters::new(vec![PlayerCost {
            q: DMatrix::from_element(1, 1, 1.0),
            r: vec![DMatrix::from_element(1, 1, -1.0)],
        }]);
        match solve_coupled_riccati(&game, &costs, &RiccatiSolverConfig::default()) {
            Err(Error::Divergence { time }) => assert!(time < 3.0 - 1.5 && time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stability_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let game = GameDefinition::new(
            -DMatrix::<f64>::identity(2, 2),
            vec![DMatrix::identity(2, 2)],
            grid,
            DVector::zeros(2),
        )
        .unwrap();
        let prof = StrategyProfile::constant(grid, vec![DMatrix::zeros(2, 2)])
            .unwrap()
            .with_closed_loop(&game)
            .unwrap();
        let rep = check_stability(&prof).unwrap();
        assert!(rep.stable);
        assert!((rep.worst() + 1.0).abs() < 1e-12);

        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let rep = stability_of(&[nil.clone(), nil]);
        assert!(!rep.stable);
        assert!(rep.worst().abs() < 1e-12);

        let bare = StrategyProfile::constant(grid, vec![DMatrix::<f64>::zeros(2, 2)]).unwrap();
        assert!(check_stability(&bare).is_err());
    }
}
