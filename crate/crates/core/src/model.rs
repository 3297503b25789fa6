//! Domain types for an N-player linear-quadratic Gaussian game on a uniform
//! time grid, plus parameter validation and cost vectorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, unvec_col, vec_col, Definiteness};
use crate::scalar::{from_usize, lit, Scalar};

/// Relative eigenvalue threshold used for every definiteness decision.
pub const DEFINITENESS_TOL: f64 = 1e-9;

/// Uniform grid `t_k = t0 + k * dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    t0: T,
    tn: T,
    steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t0: T, tn: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("grid needs at least one interval".into()));
        }
        if !(tn > t0) {
            return Err(Error::Config(format!("horizon end {tn} must exceed start {t0}")));
        }
        Ok(Self { t0, tn, steps })
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn tn(&self) -> T {
        self.tn
    }

    /// Number of intervals.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> T {
        (self.tn - self.t0) / from_usize(self.steps)
    }

    pub fn time(&self, k: usize) -> T {
        if k == self.steps {
            self.tn
        } else {
            self.t0 + self.dt() * from_usize(k)
        }
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.steps == other.steps && self.t0 == other.t0 && self.tn == other.tn
    }
}

/// System matrices, player dimensions, horizon and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct GameDefinition<T: Scalar> {
    a: DMatrix<T>,
    b: Vec<DMatrix<T>>,
    grid: TimeGrid<T>,
    x0: DVector<T>,
}

impl<T: Scalar> GameDefinition<T> {
    pub fn new(a: DMatrix<T>, b: Vec<DMatrix<T>>, grid: TimeGrid<T>, x0: DVector<T>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.is_empty() {
            return Err(Error::Dimension("at least one player is required".into()));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.nrows() != n || bi.ncols() == 0 {
                return Err(Error::Dimension(format!(
                    "B_{} is {}x{}, expected {n}x(m>=1)",
                    i + 1,
                    bi.nrows(),
                    bi.ncols()
                )));
            }
        }
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
        }
        Ok(Self { a, b, grid, x0 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn players(&self) -> usize {
        self.b.len()
    }

    pub fn control_dims(&self) -> Vec<usize> {
        self.b.iter().map(|b| b.ncols()).collect()
    }

    pub fn control_dim(&self, player: usize) -> usize {
        self.b[player].ncols()
    }

    /// Length of a player's parameter vector: `n^2 + sum_j m_j^2`.
    pub fn param_dim(&self) -> usize {
        let n = self.state_dim();
        n * n + self.b.iter().map(|b| b.ncols() * b.ncols()).sum::<usize>()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self, player: usize) -> &DMatrix<T> {
        &self.b[player]
    }

    pub fn b_all(&self) -> &[DMatrix<T>] {
        &self.b
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn x0(&self) -> &DVector<T> {
        &self.x0
    }

    pub fn with_grid(&self, grid: TimeGrid<T>) -> Self {
        Self { grid, ..self.clone() }
    }

    pub fn check_player(&self, player: usize) -> Result<()> {
        if player >= self.players() {
            return Err(Error::Dimension(format!("player index {player} out of range ({} players)", self.players())));
        }
        Ok(())
    }
}

/// One player's weighting matrices `Q_i` and `R_i1 .. R_iN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerCost<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: Vec<DMatrix<T>>,
}

impl<T: Scalar> PlayerCost<T> {
    /// `theta_i = [vec(Q_i); vec(R_i1); ...; vec(R_iN)]` with column-major vec.
    pub fn to_theta(&self) -> DVector<T> {
        let mut out: Vec<T> = vec_col(&self.q).iter().copied().collect();
        for r in &self.r {
            out.extend(vec_col(r).iter().copied());
        }
        DVector::from_vec(out)
    }

    /// Reassembles the matrices from a parameter vector, symmetrizing each
    /// block via `(X + X^T) / 2`.
    pub fn from_theta(theta: &[T], n: usize, control_dims: &[usize]) -> Result<Self> {
        let p = n * n + control_dims.iter().map(|m| m * m).sum::<usize>();
        if theta.len() != p {
            return Err(Error::Dimension(format!("theta has length {}, expected {p}", theta.len())));
        }
        let q = symmetrize(&unvec_col(&theta[..n * n], n, n));
        let mut offset = n * n;
        let r = control_dims
            .iter()
            .map(|&m| {
                let block = symmetrize(&unvec_col(&theta[offset..offset + m * m], m, m));
                offset += m * m;
                block
            })
            .collect();
        Ok(Self { q, r })
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            q: &self.q * alpha,
            r: self.r.iter().map(|r| r * alpha).collect(),
        }
    }
}

/// Cost parameters of every player.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParameters<T: Scalar> {
    pub players: Vec<PlayerCost<T>>,
}

impl<T: Scalar> CostParameters<T> {
    pub fn new(players: Vec<PlayerCost<T>>) -> Self {
        Self { players }
    }

    pub fn player(&self, i: usize) -> &PlayerCost<T> {
        &self.players[i]
    }

    pub fn check_dims(&self, game: &GameDefinition<T>) -> Result<()> {
        let n = game.state_dim();
        let m = game.control_dims();
        if self.players.len() != m.len() {
            return Err(Error::Dimension(format!(
                "{} cost blocks for {} players",
                self.players.len(),
                m.len()
            )));
        }
        for (i, pc) in self.players.iter().enumerate() {
            if pc.q.shape() != (n, n) {
                return Err(Error::Dimension(format!("Q_{} must be {n}x{n}", i + 1)));
            }
            if pc.r.len() != m.len() {
                return Err(Error::Dimension(format!("player {} needs {} R blocks", i + 1, m.len())));
            }
            for (j, r) in pc.r.iter().enumerate() {
                if r.shape() != (m[j], m[j]) {
                    return Err(Error::Dimension(format!("R_{}{} must be {}x{}", i + 1, j + 1, m[j], m[j])));
                }
            }
        }
        Ok(())
    }
}

/// Returns `theta_i` for `player`.
pub fn vectorize_costs<T: Scalar>(costs: &CostParameters<T>, player: usize) -> Result<DVector<T>> {
    let pc = costs
        .players
        .get(player)
        .ok_or_else(|| Error::Dimension(format!("player index {player} out of range")))?;
    Ok(pc.to_theta())
}

/// Inverse of [`vectorize_costs`].
pub fn devectorize_costs<T: Scalar>(theta: &DVector<T>, n: usize, control_dims: &[usize]) -> Result<PlayerCost<T>> {
    PlayerCost::from_theta(theta.as_slice(), n, control_dims)
}

/// Diagonal noise-scaling matrix `L` and discretization step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<T: Scalar> {
    l: DMatrix<T>,
    dt: T,
}

impl<T: Scalar> NoiseModel<T> {
    /// Wraps a full matrix; diagonality and positivity are checked by
    /// [`validate`], not here.
    pub fn from_matrix(l: DMatrix<T>, dt: T) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::Dimension("L must be square".into()));
        }
        Ok(Self { l, dt })
    }

    pub fn diagonal(entries: &[T], dt: T) -> Self {
        Self {
            l: DMatrix::from_diagonal(&DVector::from_column_slice(entries)),
            dt,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn diag(&self) -> DVector<T> {
        self.l.diagonal()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// `L L^T`.
    pub fn covariance_rate(&self) -> DMatrix<T> {
        &self.l * self.l.transpose()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.l.nrows();
        for r in 0..n {
            for c in 0..n {
                if r != c && self.l[(r, c)] != T::zero() {
                    v.push(format!("L not diagonal (entry {},{})", r + 1, c + 1));
                }
            }
            if !(self.l[(r, r)] > T::zero()) {
                v.push(format!("l{} not strictly positive", r + 1));
            }
        }
        if !(self.dt > T::zero()) {
            v.push("noise dt not strictly positive".into());
        }
        v
    }
}

/// Feedback gains on the grid, with optional Riccati solutions and
/// closed-loop matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile<T: Scalar> {
    grid: TimeGrid<T>,
    /// `gains[i][k]` is `K_i(t_k)`.
    gains: Vec<Vec<DMatrix<T>>>,
    riccati: Option<Vec<Vec<DMatrix<T>>>>,
    closed_loop: Option<Vec<DMatrix<T>>>,
}

impl<T: Scalar> StrategyProfile<T> {
    pub fn new(grid: TimeGrid<T>, gains: Vec<Vec<DMatrix<T>>>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::Dimension("profile needs at least one player".into()));
        }
        for (i, g) in gains.iter().enumerate() {
            if g.len() != grid.len() {
                return Err(Error::Dimension(format!(
                    "player {} has {} gains for {} grid nodes",
                    i + 1,
                    g.len(),
                    grid.len()
                )));
            }
            if let Some(first) = g.first() {
                if g.iter().any(|k| k.shape() != first.shape()) {
                    return Err(Error::Dimension(format!("player {} gains change shape", i + 1)));
                }
            }
        }
        Ok(Self { grid, gains, riccati: None, closed_loop: None })
    }

    /// The same gains at every node.
    pub fn constant(grid: TimeGrid<T>, gains: Vec<DMatrix<T>>) -> Result<Self> {
        let per_player = gains.into_iter().map(|g| vec![g; grid.len()]).collect();
        Self::new(grid, per_player)
    }

    pub fn with_riccati(mut self, p: Vec<Vec<DMatrix<T>>>) -> Result<Self> {
        if p.len() != self.gains.len() || p.iter().any(|pi| pi.len() != self.grid.len()) {
            return Err(Error::Dimension("riccati solutions do not match the profile".into()));
        }
        self.riccati = Some(p);
        Ok(self)
    }

    /// Stores `F(t_k) = A - sum_i B_i K_i(t_k)` at every node.
    pub fn with_closed_loop(mut self, game: &GameDefinition<T>) -> Result<Self> {
        let f = (0..self.grid.len())
            .map(|k| crate::riccati::closed_loop_matrix(game, &self.gains_at(k)))
            .collect::<Result<Vec<_>>>()?;
        self.closed_loop = Some(f);
        Ok(self)
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn players(&self) -> usize {
        self.gains.len()
    }

    pub fn gain(&self, player: usize, k: usize) -> &DMatrix<T> {
        &self.gains[player][k]
    }

    pub fn gains(&self, player: usize) -> &[DMatrix<T>] {
        &self.gains[player]
    }

    /// All players' gains at node `k`.
    pub fn gains_at(&self, k: usize) -> Vec<DMatrix<T>> {
        self.gains.iter().map(|g| g[k].clone()).collect()
    }

    pub fn riccati(&self) -> Option<&[Vec<DMatrix<T>>]> {
        self.riccati.as_deref()
    }

    pub fn closed_loop(&self) -> Option<&[DMatrix<T>]> {
        self.closed_loop.as_deref()
    }

    pub fn check_game(&self, game: &GameDefinition<T>) -> Result<()> {
        if !self.grid.same_as(game.grid()) {
            return Err(Error::Dimension("profile grid differs from the game grid".into()));
        }
        if self.players() != game.players() {
            return Err(Error::Dimension("profile and game disagree on player count".into()));
        }
        let n = game.state_dim();
        for i in 0..self.players() {
            if self.gains[i][0].shape() != (game.control_dim(i), n) {
                return Err(Error::Dimension(format!("K_{} must be {}x{n}", i + 1, game.control_dim(i))));
            }
        }
        Ok(())
    }
}

/// One demonstration: states and per-player controls at every node, stored
/// column-per-node.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration<T: Scalar> {
    /// `n x (steps + 1)`.
    pub states: DMatrix<T>,
    /// Per player `m_i x (steps + 1)`.
    pub controls: Vec<DMatrix<T>>,
}

/// A set of demonstrations sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle<T: Scalar> {
    grid: TimeGrid<T>,
    demos: Vec<Demonstration<T>>,
    seed: Option<u64>,
}

impl<T: Scalar> TrajectoryBundle<T> {
    pub fn new(grid: TimeGrid<T>, demos: Vec<Demonstration<T>>, seed: Option<u64>) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::InsufficientData("a bundle needs at least one demonstration".into()))?;
        let n = first.states.nrows();
        let dims: Vec<usize> = first.controls.iter().map(|u| u.nrows()).collect();
        if dims.is_empty() {
            return Err(Error::Dimension("demonstrations carry no controls".into()));
        }
        for (d, demo) in demos.iter().enumerate() {
            let ok = demo.states.shape() == (n, grid.len())
                && demo.controls.len() == dims.len()
                && demo
                    .controls
                    .iter()
                    .zip(&dims)
                    .all(|(u, &m)| u.shape() == (m, grid.len()));
            if !ok {
                return Err(Error::Dimension(format!("demonstration {d} does not match the bundle layout")));
            }
        }
        Ok(Self { grid, demos, seed })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn demos(&self) -> &[Demonstration<T>] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn state_dim(&self) -> usize {
        self.demos[0].states.nrows()
    }

    pub fn control_dims(&self) -> Vec<usize> {
        self.demos[0].controls.iter().map(|u| u.nrows()).collect()
    }

    pub fn check_game(&self, game: &GameDefinition<T>) -> Result<()> {
        if !self.grid.same_as(game.grid()) {
            return Err(Error::Dimension("bundle grid differs from the game grid".into()));
        }
        if self.state_dim() != game.state_dim() || self.control_dims() != game.control_dims() {
            return Err(Error::Dimension("bundle dimensions differ from the game".into()));
        }
        Ok(())
    }

    /// Keeps the demonstrations at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let demos = indices
            .iter()
            .map(|&d| {
                self.demos
                    .get(d)
                    .cloned()
                    .ok_or_else(|| Error::Dimension(format!("demonstration {d} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.grid, demos, self.seed)
    }
}

/// List of violated invariants; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(self.violations))
        }
    }
}

/// Checks dimensions, symmetry and definiteness of the cost parameters and
/// the shape of the noise model. Violations are collected, never thrown.
pub fn validate<T: Scalar>(
    game: &GameDefinition<T>,
    costs: &CostParameters<T>,
    noise: &NoiseModel<T>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let tol: T = lit(DEFINITENESS_TOL);
    let n = game.state_dim();

    if let Err(e) = costs.check_dims(game) {
        violations.push(e.to_string());
    } else {
        for (i, pc) in costs.players.iter().enumerate() {
            let name = |blk: &str| format!("{blk}{}", i + 1);
            let dq = Definiteness::of(&pc.q);
            if !dq.is_symmetric(tol) {
                violations.push(format!("{} not symmetric", name("Q")));
            }
            if !dq.is_positive_definite(tol) {
                violations.push(format!("{} not positive definite", name("Q")));
            }
            for (j, r) in pc.r.iter().enumerate() {
                let label = format!("R{}{}", i + 1, j + 1);
                let dr = Definiteness::of(r);
                if !dr.is_symmetric(tol) {
                    violations.push(format!("{label} not symmetric"));
                }
                if i == j {
                    if !dr.is_positive_definite(tol) {
                        violations.push(format!("{label} not positive definite"));
                    }
                } else if !dr.is_positive_semidefinite(tol) {
                    violations.push(format!("{label} not positive semidefinite"));
                }
            }
        }
    }

    if noise.matrix().nrows() != n {
        violations.push(format!("L must be {n}x{n}"));
    } else {
        violations.extend(noise.violations());
    }
    ValidationReport { violations }
}
