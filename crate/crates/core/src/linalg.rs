//! Small dense-matrix helpers used across modules.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Scalar};

/// Column-major vectorization.
pub fn vec_col<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    // nalgebra storage is column-major already
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_col`].
pub fn unvec_col<T: Scalar>(v: &[T], rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Infinity norm (max absolute row sum).
pub fn inf_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    m.row_iter()
        .map(|r| r.iter().fold(T::zero(), |acc, &x| acc + x.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Sorted (ascending) eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    let s = symmetrize(m);
    let mut ev: Vec<T> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Outcome of a definiteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Definiteness<T> {
    pub min_eigenvalue: T,
    pub spectral_norm: T,
    pub asymmetry: T,
}

impl<T: Scalar> Definiteness<T> {
    pub fn of(m: &DMatrix<T>) -> Self {
        let ev = sym_eigenvalues(m);
        let spectral_norm = ev.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
        let min_eigenvalue = ev.first().copied().unwrap_or_else(T::zero);
        Self {
            min_eigenvalue,
            spectral_norm,
            asymmetry: max_abs(&(m - m.transpose())),
        }
    }

    pub fn is_symmetric(&self, rel_tol: T) -> bool {
        self.asymmetry <= rel_tol * self.spectral_norm.max(T::one())
    }

    /// Smallest eigenvalue strictly above `rel_tol * ||M||_2`.
    pub fn is_positive_definite(&self, rel_tol: T) -> bool {
        self.spectral_norm > T::zero() && self.min_eigenvalue > rel_tol * self.spectral_norm
    }

    pub fn is_positive_semidefinite(&self, rel_tol: T) -> bool {
        self.min_eigenvalue >= -rel_tol * self.spectral_norm
    }
}

/// Pairwise (cascade) summation of a slice of matrices. Order of
/// evaluation depends only on the slice length, so results are bit-stable.
pub fn pairwise_sum<T: Scalar>(items: &[DMatrix<T>], rows: usize, cols: usize) -> DMatrix<T> {
    match items.len() {
        0 => DMatrix::zeros(rows, cols),
        1 => items[0].clone(),
        n if n <= 8 => {
            let mut acc = items[0].clone();
            for m in &items[1..] {
                acc += m;
            }
            acc
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&items[..mid], rows, cols) + pairwise_sum(&items[mid..], rows, cols)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_is_column_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_col(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvec_col(&[1.0, 3.0, 2.0, 4.0], 2, 2), m);
    }

    #[test]
    fn definiteness_thresholds() {
        let pd = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let d = Definiteness::of(&pd);
        assert!(d.is_positive_definite(1e-9));
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let d = Definiteness::of(&indefinite);
        assert!(!d.is_positive_semidefinite(1e-9));
        let zero = DMatrix::<f64>::zeros(2, 2);
        let d = Definiteness::of(&zero);
        assert!(d.is_positive_semidefinite(1e-9));
        assert!(!d.is_positive_definite(1e-9));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let items: Vec<DMatrix<f64>> =
            (0..37).map(|k| DMatrix::from_element(2, 1, k as f64)).collect();
        let s = pairwise_sum(&items, 2, 1);
        assert_eq!(s[(0, 0)], (0..37).sum::<i32>() as f64);
    }
}
