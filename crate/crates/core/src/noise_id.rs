//! Closed-form maximum-likelihood estimate of the diagonal noise scaling
//! from Euler–Maruyama residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::model::{GameDefinition, NoiseModel, TrajectoryBundle};
use crate::scalar::{from_usize, lit, Scalar};

/// Residuals `dx_k = x_{k+1} - x_k - (A x_k + sum_i B_i u_{i,k}) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals<T: Scalar> {
    pub dt: T,
    /// `[d]` is an `n x steps` matrix whose column `k` is `dx_k`.
    pub per_demo: Vec<DMatrix<T>>,
}

impl<T: Scalar> Residuals<T> {
    pub fn state_dim(&self) -> usize {
        self.per_demo.first().map_or(0, |m| m.nrows())
    }

    pub fn count(&self) -> usize {
        self.per_demo.iter().map(|m| m.ncols()).sum()
    }

    pub fn get(&self, demo: usize, k: usize) -> DVector<T> {
        self.per_demo[demo].column(k).into_owned()
    }

    /// Keeps only the steps in `steps` for every demonstration.
    pub fn restrict(&self, steps: &[usize]) -> Result<Self> {
        let per_demo = self
            .per_demo
            .iter()
            .map(|m| {
                if steps.iter().any(|&k| k >= m.ncols()) {
                    return Err(Error::Dimension("residual step out of range".into()));
                }
                Ok(m.select_columns(steps))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt: self.dt, per_demo })
    }

    /// Stacks copies of the residual set, as if more demonstrations had
    /// produced identical data.
    pub fn repeated(&self, times: usize) -> Self {
        let per_demo = (0..times).flat_map(|_| self.per_demo.iter().cloned()).collect();
        Self { dt: self.dt, per_demo }
    }
}

/// Residuals for every demonstration and step `k = 0..steps-1`, using the
/// recorded controls.
pub fn residuals<T: Scalar>(bundle: &TrajectoryBundle<T>, game: &GameDefinition<T>) -> Result<Residuals<T>> {
    bundle.check_game(game)?;
    let dt = bundle.grid().dt();
    let steps = bundle.grid().steps();
    let per_demo = bundle
        .demos()
        .iter()
        .map(|demo| {
            let mut out = DMatrix::zeros(game.state_dim(), steps);
            for k in 0..steps {
                let x = demo.states.column(k);
                let mut drift = game.a() * x;
                for (i, u) in demo.controls.iter().enumerate() {
                    drift += game.b(i) * u.column(k);
                }
                let predicted = x + drift * dt;
                out.set_column(k, &(demo.states.column(k + 1) - predicted));
            }
            out
        })
        .collect();
    Ok(Residuals { dt, per_demo })
}

/// `(1 / (D K dt)) sum_d sum_k dx dx^T`, summed pairwise for bit stability.
pub fn mle_covariance<T: Scalar>(res: &Residuals<T>) -> Result<DMatrix<T>> {
    let count = res.count();
    if count == 0 {
        return Err(Error::InsufficientData("no residuals".into()));
    }
    if !(res.dt > T::zero()) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let n = res.state_dim();
    let outer: Vec<DMatrix<T>> = res
        .per_demo
        .iter()
        .flat_map(|m| m.column_iter().map(|c| c * c.transpose()))
        .collect();
    let sum = pairwise_sum(&outer, n, n);
    let cov = sum / (from_usize::<T>(count) * res.dt);
    Ok((&cov + cov.transpose()) * lit::<T>(0.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate<T: Scalar> {
    pub noise: NoiseModel<T>,
    /// `||offdiag(cov)||_F / ||diag(cov)||_F`.
    pub mismatch_ratio: f64,
}

/// `L_hat = diag(sqrt(cov_ss))`; off-diagonal mass is only reported.
pub fn recover_l<T: Scalar>(cov: &DMatrix<T>, dt: T) -> Result<NoiseEstimate<T>> {
    if !cov.is_square() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let n = cov.nrows();
    let mut diag = Vec::with_capacity(n);
    let (mut on, mut off) = (T::zero(), T::zero());
    for r in 0..n {
        for c in 0..n {
            let v = cov[(r, c)];
            if r == c {
                on += v * v;
            } else {
                off += v * v;
            }
        }
        let v = cov[(r, r)];
        if !(v > T::zero()) {
            return Err(Error::DegenerateNoise { index: r + 1, value: v.to_f64_lossy() });
        }
        diag.push(v.sqrt());
    }
    Ok(NoiseEstimate {
        noise: NoiseModel::diagonal(&diag, dt),
        mismatch_ratio: (off.sqrt() / on.sqrt()).to_f64_lossy(),
    })
}

/// Gaussian log-likelihood of all residuals under increment covariance
/// `cov * dt`.
pub fn log_likelihood<T: Scalar>(res: &Residuals<T>, cov: &DMatrix<T>) -> Result<T> {
    let n = res.state_dim();
    if cov.shape() != (n, n) {
        return Err(Error::Dimension(format!("covariance must be {n}x{n}")));
    }
    let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let log_det = chol.l().diagonal().iter().fold(T::zero(), |a, &d| a + d.ln()) * lit(2.0);
    let two_pi: T = lit(std::f64::consts::TAU);
    let per_step = from_usize::<T>(n) * (two_pi * res.dt).ln() + log_det;
    let mut quad = Vec::with_capacity(res.count());
    for m in &res.per_demo {
        for c in m.column_iter() {
            let y = chol.solve(&c.into_owned());
            quad.push(DMatrix::from_element(1, 1, c.dot(&y)));
        }
    }
    let q = pairwise_sum(&quad, 1, 1)[(0, 0)];
    Ok(-(per_step * from_usize::<T>(res.count()) + q / res.dt) * lit(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Demonstration, TimeGrid};

    #[test]
    fn residual_arithmetic() {
        let grid = TimeGrid::new(0.0, 0.01, 1).unwrap();
        let game = GameDefinition::new(
            DMatrix::zeros(1, 1),
            vec![DMatrix::zeros(1, 1)],
            grid,
            DVector::zeros(1),
        )
        .unwrap();
        let demo = Demonstration {
            states: DMatrix::from_row_slice(1, 2, &[0.0, 0.1]),
            controls: vec![DMatrix::zeros(1, 2)],
        };
        let b = TrajectoryBundle::new(grid, vec![demo], None).unwrap();
        let r = residuals(&b, &game).unwrap();
        assert_eq!(r.get(0, 0)[0], 0.1);
    }

    #[test]
    fn covariance_by_hand() {
        let res = Residuals::<f64> { dt: 0.01, per_demo: vec![DMatrix::from_row_slice(1, 2, &[0.01, -0.01])] };
        let cov = mle_covariance(&res).unwrap();
        assert!((cov[(0, 0)] - 0.01).abs() < 1e-15);

        let zero = Residuals { dt: 0.01, per_demo: vec![DMatrix::zeros(2, 5)] };
        assert!(mle_covariance(&zero).unwrap().iter().all(|&x| x == 0.0));
        let empty = Residuals::<f64> { dt: 0.01, per_demo: vec![] };
        assert!(mle_covariance(&empty).is_err());
    }

    #[test]
    fn l_recovery() {
        let cov = DMatrix::<f64>::from_diagonal(&DVector::from_vec(vec![0.01, 0.04]));
        let est = recover_l(&cov, 0.01).unwrap();
        assert!((est.noise.diag()[0] - 0.1).abs() < 1e-15);
        assert!((est.noise.diag()[1] - 0.2).abs() < 1e-15);
        assert_eq!(est.mismatch_ratio, 0.0);

        assert!(matches!(
            recover_l(&DMatrix::<f64>::zeros(2, 2), 0.01),
            Err(Error::DegenerateNoise { index: 1, .. })
        ));

        let coupled = DMatrix::<f64>::from_row_slice(2, 2, &[0.01, 0.005, 0.005, 0.01]);
        let est = recover_l(&coupled, 0.01).unwrap();
        assert!((est.noise.diag()[0] - 0.1).abs() < 1e-15);
        assert!((est.mismatch_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn likelihood_by_hand() {
        let res = Residuals { dt: 1.0, per_demo: vec![DMatrix::zeros(1, 1)] };
        let ll = log_likelihood(&res, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!(matches!(
            log_likelihood(&res, &DMatrix::zeros(1, 1)),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn likelihood_is_additive_over_demos() {
        let res = Residuals {
            dt: 0.01,
            per_demo: vec![DMatrix::from_row_slice(2, 3, &[0.01, -0.02, 0.005, 0.03, 0.0, -0.01])],
        };
        let cov = DMatrix::<f64>::from_row_slice(2, 2, &[0.02, 0.001, 0.001, 0.05]);
        let once = log_likelihood(&res, &cov).unwrap();
        let twice = log_likelihood(&res.repeated(2), &cov).unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12 * once.abs());
    }
}
