//! Recovery of a player's cost parameters, up to scale, from the feedback
//! gains.
//!
//! Substituting `B_i^T P_i = R_ii K_i` into the Riccati equation of player
//! `i`, integrating from `t` to `t_N` and vectorizing gives one homogeneous
//! linear system per node:
//!
//! ```text
//! M_i(t) theta_i = 0,   M_i(t) = [ M_Q | M_R_i1 | ... | M_R_iN ]   (m_i^2 x p)
//!
//! M_Q(t)   = (t_N - t) (B_i^T (x) B_i^T)
//! M_R_ii(t) = int_t^tN [ (G_i (x) I) + (I (x) G_i) + (H_ii (x) H_ii) ] ds - (H_ii(t) (x) I)
//! M_R_ij(t) = int_t^tN [ H_ij (x) H_ij ] ds                          j != i
//!
//! G_i = B_i^T F^T K_i^T,   H_ij = B_i^T K_j^T
//! ```
//!
//! Integrals are accumulated backward from `t_N` with a node-based rule
//! (fourth-order cubic by default, trapezoid on request). Rows for several nodes are stacked and the null
//! vector is taken from the SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, Definiteness};
use crate::model::{GameDefinition, PlayerCost, StrategyProfile, DEFINITENESS_TOL};
use crate::riccati::closed_loop_matrix;
use crate::scalar::{from_usize, lit, Scalar};

/// Quadrature rule for the integrals over `[t_k, t_N]`, evaluated on grid
/// nodes only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Composite trapezoid, second order.
    Trapezoid,
    /// Piecewise-cubic cumulative rule, fourth order. Falls back to the
    /// trapezoid on grids with fewer than three intervals.
    #[default]
    Cubic,
}

/// For each interval `[t_k, t_k+1]`: index of the first node used and the
/// weights (in units of `dt`) applied to consecutive nodes from there.
fn interval_weights(rule: Quadrature, steps: usize) -> Vec<(usize, Vec<f64>)> {
    if rule == Quadrature::Trapezoid || steps < 3 {
        return (0..steps).map(|k| (k, vec![0.5, 0.5])).collect();
    }
    (0..steps)
        .map(|k| {
            if k == 0 {
                (0, vec![9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0])
            } else if k == steps - 1 {
                (k - 2, vec![1.0 / 24.0, -5.0 / 24.0, 19.0 / 24.0, 9.0 / 24.0])
            } else {
                (k - 1, vec![-1.0 / 24.0, 13.0 / 24.0, 13.0 / 24.0, -1.0 / 24.0])
            }
        })
        .collect()
}

/// Relative cutoff for the numerical rank: `sigma < max(rows, cols) * sigma_max * RANK_TOL`.
pub const RANK_TOL: f64 = 1e-10;

/// Cumulative integrals `int_{t_k}^{t_N}` of the integrand blocks for one player.
struct BlockIntegrals<T: Scalar> {
    /// `[k][j]`, `m_i^2 x m_j^2`; the `j = i` entry holds the full `R_ii` integrand.
    cumulative: Vec<Vec<DMatrix<T>>>,
}

fn closed_loop_series<T: Scalar>(game: &GameDefinition<T>, profile: &StrategyProfile<T>) -> Result<Vec<DMatrix<T>>> {
    match profile.closed_loop() {
        Some(f) => Ok(f.to_vec()),
        None => (0..profile.grid().len())
            .map(|k| closed_loop_matrix(game, &profile.gains_at(k)))
            .collect(),
    }
}

fn integrands<T: Scalar>(
    game: &GameDefinition<T>,
    profile: &StrategyProfile<T>,
    f: &DMatrix<T>,
    player: usize,
    k: usize,
) -> Vec<DMatrix<T>> {
    let bt = game.b(player).transpose();
    let mi = game.control_dim(player);
    let eye = DMatrix::<T>::identity(mi, mi);
    (0..game.players())
        .map(|j| {
            let h = &bt * profile.gain(j, k).transpose();
            let quad = h.kronecker(&h);
            if j == player {
                let g = &bt * f.transpose() * profile.gain(player, k).transpose();
                g.kronecker(&eye) + eye.kronecker(&g) + quad
            } else {
                quad
            }
        })
        .collect()
}

impl<T: Scalar> BlockIntegrals<T> {
    fn new(game: &GameDefinition<T>, profile: &StrategyProfile<T>, player: usize, rule: Quadrature) -> Result<Self> {
        let f = closed_loop_series(game, profile)?;
        let grid = profile.grid();
        let nodes = grid.len();
        let dims = game.control_dims();
        let mi = dims[player];

        let values: Vec<Vec<DMatrix<T>>> = (0..nodes).map(|k| integrands(game, profile, &f[k], player, k)).collect();
        let weights = interval_weights(rule, grid.steps());
        let h = grid.dt();

        let mut cumulative: Vec<Vec<DMatrix<T>>> = vec![Vec::new(); nodes];
        cumulative[nodes - 1] = dims.iter().map(|&mj| DMatrix::zeros(mi * mi, mj * mj)).collect();
        for k in (0..nodes - 1).rev() {
            let (first, w) = &weights[k];
            cumulative[k] = (0..dims.len())
                .map(|j| {
                    let mut acc = cumulative[k + 1][j].clone();
                    for (off, &wt) in w.iter().enumerate() {
                        acc += &values[first + off][j] * (h * lit::<T>(wt));
                    }
                    acc
                })
                .collect();
        }
        Ok(Self { cumulative })
    }

    fn row_block(&self, game: &GameDefinition<T>, profile: &StrategyProfile<T>, player: usize, k: usize) -> DMatrix<T> {
        let bt = game.b(player).transpose();
        let mi = game.control_dim(player);
        let n = game.state_dim();
        let eye = DMatrix::<T>::identity(mi, mi);
        let remaining = profile.grid().tn() - profile.grid().time(k);

        let mut out = DMatrix::zeros(mi * mi, game.param_dim());
        out.view_mut((0, 0), (mi * mi, n * n)).copy_from(&(bt.kronecker(&bt) * remaining));
        let mut col = n * n;
        for (j, integral) in self.cumulative[k].iter().enumerate() {
            let width = integral.ncols();
            let mut block = integral.clone();
            if j == player {
                let h = &bt * profile.gain(player, k).transpose();
                block -= h.kronecker(&eye);
            }
            out.view_mut((0, col), (mi * mi, width)).copy_from(&block);
            col += width;
        }
        out
    }
}

fn check_inputs<T: Scalar>(game: &GameDefinition<T>, profile: &StrategyProfile<T>, player: usize) -> Result<()> {
    game.check_player(player)?;
    profile.check_game(game)
}

/// `M_i(t_k)`, an `m_i^2 x p` matrix.
pub fn build_m_blocks<T: Scalar>(
    game: &GameDefinition<T>,
    profile: &StrategyProfile<T>,
    player: usize,
    node: usize,
    rule: Quadrature,
) -> Result<DMatrix<T>> {
    check_inputs(game, profile, player)?;
    if node >= profile.grid().len() {
        return Err(Error::Dimension(format!("node {node} outside grid of {} nodes", profile.grid().len())));
    }
    let ints = BlockIntegrals::new(game, profile, player, rule)?;
    Ok(ints.row_block(game, profile, player, node))
}

/// `K` equally spaced node indices in `[0, steps)`, starting at 0. The
/// terminal node is excluded because its rows vanish.
pub fn select_nodes(steps: usize, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    if count >= steps {
        return (0..steps).collect();
    }
    (0..count).map(|j| j * steps / count).collect()
}

/// Stacked system `M~_i theta_i = 0` with its spectrum.
#[derive(Debug, Clone)]
pub struct CostInferenceSystem<T: Scalar> {
    pub player: usize,
    pub nodes: Vec<usize>,
    pub state_dim: usize,
    pub control_dims: Vec<usize>,
    /// `(K m_i^2) x p`.
    pub matrix: DMatrix<T>,
    /// Descending.
    pub singular_values: Vec<T>,
    /// Right singular vectors as columns, ordered like `singular_values`.
    pub right_vectors: DMatrix<T>,
    pub rank: usize,
}

impl<T: Scalar> CostInferenceSystem<T> {
    pub fn param_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Offset of `vec(R_ii)` inside theta.
    fn own_block_offset(&self) -> usize {
        self.state_dim * self.state_dim
            + self.control_dims[..self.player].iter().map(|m| m * m).sum::<usize>()
    }
}

fn sorted_svd<T: Scalar>(m: &DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let p = m.ncols();
    // pad so that the SVD returns a full set of right singular vectors
    let padded = if m.nrows() < p {
        let mut z = DMatrix::zeros(p, p);
        z.view_mut((0, 0), m.shape()).copy_from(m);
        z
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_columns(&order.iter().map(|&i| v_t.row(i).transpose()).collect::<Vec<_>>());
    (sigma, v)
}

pub fn numerical_rank<T: Scalar>(sigma: &[T], rows: usize, cols: usize) -> usize {
    let s_max = sigma.first().copied().unwrap_or_else(T::zero);
    if s_max <= T::zero() {
        return 0;
    }
    let tol = from_usize::<T>(rows.max(cols)) * s_max * lit(RANK_TOL);
    sigma.iter().filter(|&&s| s > tol).count()
}

/// Stacks `M_i(t_k)` for the given (sorted, on-grid) nodes and computes the
/// singular values and numerical rank.
pub fn stack_system<T: Scalar>(
    game: &GameDefinition<T>,
    profile: &StrategyProfile<T>,
    player: usize,
    nodes: &[usize],
    rule: Quadrature,
) -> Result<CostInferenceSystem<T>> {
    check_inputs(game, profile, player)?;
    if nodes.is_empty() {
        return Err(Error::InsufficientData("at least one evaluation node is required".into()));
    }
    let len = profile.grid().len();
    if nodes.iter().any(|&k| k >= len) || nodes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Dimension("evaluation nodes must be sorted grid indices".into()));
    }
    let ints = BlockIntegrals::new(game, profile, player, rule)?;
    let mi2 = game.control_dim(player).pow(2);
    let p = game.param_dim();
    let mut matrix = DMatrix::zeros(nodes.len() * mi2, p);
    for (r, &k) in nodes.iter().enumerate() {
        matrix
            .view_mut((r * mi2, 0), (mi2, p))
            .copy_from(&ints.row_block(game, profile, player, k));
    }
    let (singular_values, right_vectors) = sorted_svd(&matrix);
    let rank = numerical_rank(&singular_values, matrix.nrows(), p);
    Ok(CostInferenceSystem {
        player,
        nodes: nodes.to_vec(),
        state_dim: game.state_dim(),
        control_dims: game.control_dims(),
        matrix,
        singular_values,
        right_vectors,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceDiagnostics {
    pub rank: usize,
    pub param_dim: usize,
    /// `sigma_{p-1} / sigma_p`; infinite when `sigma_p = 0`.
    pub gap_ratio: f64,
    /// `sigma_p / sigma_1`, i.e. `||M~ v|| / ||M~||_2` for the unit null vector.
    pub certificate: f64,
    /// `rank != p - 1`.
    pub rank_flag: bool,
    pub warnings: Vec<String>,
}

/// Null vector of the stacked system, normalized so that `Q_i[0,0] = 1`
/// (or the first non-zero diagonal entry of `R_ii` when that vanishes).
pub fn solve_null_space<T: Scalar>(system: &CostInferenceSystem<T>) -> Result<(DVector<T>, NullSpaceDiagnostics)> {
    let p = system.param_dim();
    if system.rank + 1 < p {
        return Err(Error::AmbiguousIdentification { player: system.player + 1, nullity: p - system.rank });
    }
    let sigma = &system.singular_values;
    let s_p = sigma[p - 1].to_f64_lossy();
    let s_pm1 = if p >= 2 { sigma[p - 2].to_f64_lossy() } else { f64::INFINITY };
    let s_1 = sigma[0].to_f64_lossy();
    let mut warnings = Vec::new();
    if system.rank == p {
        warnings.push(format!(
            "player {}: full column rank, no exact null vector (sigma_min / sigma_max = {:.3e})",
            system.player + 1,
            s_p / s_1
        ));
    }

    let v: DVector<T> = system.right_vectors.column(p - 1).into_owned();
    let scale = max_abs(&DMatrix::from_column_slice(p, 1, v.as_slice()));
    let nonzero = |x: T| x.abs() > scale * lit(1e-8);
    let n = system.state_dim;
    let mi = system.control_dims[system.player];
    let offset = system.own_block_offset();
    let pivot = std::iter::once(0)
        .chain((0..mi).map(|d| offset + d * mi + d))
        .find(|&idx| nonzero(v[idx]))
        .ok_or_else(|| Error::IndefiniteEstimate {
            player: system.player + 1,
            detail: "null vector has vanishing Q[0,0] and R_ii diagonal".into(),
        })?;
    debug_assert!(pivot == 0 || pivot >= n * n);
    let theta = &v / v[pivot];

    let diagnostics = NullSpaceDiagnostics {
        rank: system.rank,
        param_dim: p,
        gap_ratio: if s_p > 0.0 { s_pm1 / s_p } else { f64::INFINITY },
        certificate: if s_1 > 0.0 { s_p / s_1 } else { 0.0 },
        rank_flag: system.rank + 1 != p,
        warnings,
    };
    Ok((theta, diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    /// Eigenvalues of the PSD blocks in `(-psd_tol * ||theta||_inf, 0)` are clipped to zero.
    pub psd_tol: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { psd_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCost<T: Scalar> {
    pub cost: PlayerCost<T>,
    /// Definiteness problems that were reported rather than fixed.
    pub violations: Vec<String>,
}

fn clip_negative<T: Scalar>(m: &DMatrix<T>, tol: T) -> (DMatrix<T>, T) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().fold(T::max_value().unwrap_or_else(T::one), |a, &x| a.min(x));
    if min >= T::zero() || min < -tol {
        return (m.clone(), min);
    }
    let clipped = eig.eigenvalues.map(|x| if x < T::zero() && x >= -tol { T::zero() } else { x });
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    ((&rebuilt + rebuilt.transpose()) * lit::<T>(0.5), min)
}

/// Turns a normalized null vector into symmetric cost matrices.
pub fn recover_costs<T: Scalar>(
    theta_hat: &DVector<T>,
    game: &GameDefinition<T>,
    player: usize,
    cfg: &RecoveryConfig,
) -> Result<RecoveredCost<T>> {
    game.check_player(player)?;
    let mut cost = PlayerCost::from_theta(theta_hat.as_slice(), game.state_dim(), &game.control_dims())?;
    let scale = theta_hat.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
    let clip_tol = scale * lit(cfg.psd_tol);
    let pd_tol: T = lit(DEFINITENESS_TOL);
    let label = |blk: String| format!("{blk} (player {})", player + 1);

    let mut hard = Vec::new();
    if !Definiteness::of(&cost.q).is_positive_definite(pd_tol) {
        hard.push(label(format!("Q{} not positive definite", player + 1)));
    }
    let mut violations = Vec::new();
    for j in 0..cost.r.len() {
        let name = format!("R{}{}", player + 1, j + 1);
        if j == player {
            if !Definiteness::of(&cost.r[j]).is_positive_definite(pd_tol) {
                hard.push(label(format!("{name} not positive definite")));
            }
        } else {
            let (clipped, min) = clip_negative(&cost.r[j], clip_tol);
            if min < -clip_tol {
                violations.push(format!("{name} has eigenvalue {:.3e} below -{:.1e}", min.to_f64_lossy(), clip_tol.to_f64_lossy()));
            }
            cost.r[j] = clipped;
        }
    }
    if !hard.is_empty() {
        return Err(Error::IndefiniteEstimate { player: player + 1, detail: hard.join("; ") });
    }
    Ok(RecoveredCost { cost, violations })
}

/// Cosine of the angle between two parameter vectors.
pub fn cosine<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).to_f64_lossy()
}

/// Angle in radians between the rays spanned by `a` and `b`.
pub fn ray_angle<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> f64 {
    // sin-based formula keeps precision for tiny angles
    let ua = a / a.norm();
    let ub = b / b.norm();
    let c = ua.dot(&ub);
    let ub = if c < T::zero() { -ub } else { ub };
    let diff = (&ua - &ub).norm().to_f64_lossy();
    let sum = (&ua + &ub).norm().to_f64_lossy();
    2.0 * diff.atan2(sum)
}
