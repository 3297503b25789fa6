#![allow(dead_code)]

use lqgame::config::GameConfig;
use lqgame::*;
use nalgebra::{DMatrix, DVector};

pub struct Reference {
    pub game: GameDefinition64,
    pub costs: CostParameters64,
    pub noise: NoiseModel64,
}

pub fn reference() -> Reference {
    let cfg = GameConfig::reference_example();
    Reference { game: cfg.game().unwrap(), costs: cfg.costs().unwrap(), noise: cfg.noise().unwrap() }
}

pub fn solve(game: &GameDefinition64, costs: &CostParameters64) -> StrategyProfile64 {
    solve_coupled_riccati(game, costs, &RiccatiSolverConfig::default()).unwrap()
}

pub fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(entries))
}

/// Largest entrywise deviation over all nodes divided by the largest entry
/// of the reference.
pub fn series_rel_err(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> f64 {
    let num = est.iter().zip(truth).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    let den = truth.iter().map(|m| m.amax()).fold(0.0, f64::max);
    num / den
}

/// Classical single-player LQR: `-dP/dt = Q + P A + A^T P - P B R^-1 B^T P`,
/// `P(t_N) = 0`, integrated backward with classical RK4 at `substeps` per
/// interval. Returns `K = R^-1 B^T P` at the grid nodes.
pub fn lqr_oracle(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    t0: f64,
    tn: f64,
    steps: usize,
    substeps: usize,
) -> Vec<DMatrix<f64>> {
    let r_inv = r.clone().try_inverse().unwrap();
    let s = b * &r_inv * b.transpose();
    let rhs = |p: &DMatrix<f64>| -> DMatrix<f64> {
        // dP/dt
        -(q + p * a + a.transpose() * p - p * &s * p)
    };
    let n = a.nrows();
    let h = (tn - t0) / (steps * substeps) as f64;
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut out = vec![DMatrix::zeros(r.nrows(), n); steps + 1];
    out[steps] = &r_inv * b.transpose() * &p;
    for k in (0..steps).rev() {
        for _ in 0..substeps {
            // step from t to t - h
            let k1 = rhs(&p);
            let k2 = rhs(&(&p - &k1 * (h / 2.0)));
            let k3 = rhs(&(&p - &k2 * (h / 2.0)));
            let k4 = rhs(&(&p - &k3 * h));
            p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        out[k] = &r_inv * b.transpose() * &p;
    }
    out
}

/// Solves `F S + S F^T + W = 0` through `(I (x) F + F (x) I) vec(S) = -vec(W)`.
pub fn lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(f) + f.kronecker(&eye);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let v = op.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Random symmetric positive definite matrix `M M^T + shift I` from the given entries.
pub fn spd_from(entries: &[f64], n: usize, shift: f64) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    &m * m.transpose() + DMatrix::identity(n, n) * shift
}
