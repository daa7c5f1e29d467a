//! Real sparse matrices and a reusable sparse LU factorization.
//!
//! The factorization is computed once and then serves any number of
//! right-hand sides. It is `Send + Sync`; concurrent solves only read it.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Square real sparse matrix stored as sorted, duplicate-free triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    /// `(row, col, value)`, sorted by column then row.
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Duplicate coordinates are summed.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        SparseMatrix { dim, entries: merged }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(col, row), |&(r, c, _)| (c, r))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for &(r, c, v) in &self.entries {
            out[r][c] = v;
        }
        out
    }

    pub fn factorize(&self) -> Result<Factorization> {
        let triplets: Vec<_> = self
            .entries
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.dim, self.dim, &triplets)
            .map_err(|e| Error::Singular(format!("cannot assemble matrix: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::Singular(format!("LU factorization failed: {e:?}")))?;
        Ok(Factorization {
            lu,
            matrix: self.clone(),
            solves: Arc::new(AtomicUsize::new(0)),
        })
    }
}

/// Sparse LU factors of a [`SparseMatrix`].
#[derive(Debug, Clone)]
pub struct Factorization {
    lu: Lu<usize, f64>,
    matrix: SparseMatrix,
    /// Right-hand sides solved so far, shared between clones.
    solves: Arc<AtomicUsize>,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Number of right-hand sides solved against these factors.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// Solves `A x = b`, rejecting non-finite results and results whose
    /// backward error shows the matrix is numerically singular.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.solve_many(&[rhs])?;
        Ok(out.pop().expect("one column"))
    }

    /// Solves against several right-hand sides with one pass over the
    /// factors.
    pub fn solve_many(&self, rhs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        self.solves.fetch_add(rhs.len(), Ordering::Relaxed);
        let mut b = Mat::<f64>::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
        self.lu.solve_in_place(b.as_mut());
        let mut cols = Vec::with_capacity(rhs.len());
        for (j, r) in rhs.iter().enumerate() {
            let x: Vec<f64> = (0..n).map(|i| b[(i, j)]).collect();
            self.check(&x, r)?;
            cols.push(x);
        }
        Ok(cols)
    }

    fn check(&self, x: &[f64], b: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("solution is not finite".into()));
        }
        let ax = self.matrix.mul_vec(x);
        let resid = ax.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = self.matrix.entries.iter().map(|e| e.2.abs()).fold(0.0, f64::max)
            * x.iter().map(|v| v.abs()).fold(0.0, f64::max)
            + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if resid > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular(format!(
                "backward error {resid:.3e} relative to scale {scale:.3e}"
            )));
        }
        Ok(())
    }
}

/// Dense 4×4 helpers for the outage transfer system.
pub(crate) mod small {
    use faer::prelude::*;

    pub type M4 = [[f64; 4]; 4];

    fn to_mat(a: &M4) -> Mat<f64> {
        Mat::from_fn(4, 4, |i, j| a[i][j])
    }

    /// 2-norm condition number; infinite when the smallest singular value
    /// vanishes.
    pub fn condition(a: &M4) -> f64 {
        match to_mat(a).singular_values() {
            Ok(s) => {
                let max = s.iter().copied().fold(0.0, f64::max);
                let min = s.iter().copied().fold(f64::INFINITY, f64::min);
                if min == 0.0 || !min.is_finite() {
                    f64::INFINITY
                } else {
                    max / min
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    pub fn solve(a: &M4, b: &[f64; 4]) -> [f64; 4] {
        let lu = to_mat(a).partial_piv_lu();
        let mut rhs = Mat::from_fn(4, 1, |i, _| b[i]);
        lu.solve_in_place(rhs.as_mut());
        [rhs[(0, 0)], rhs[(1, 0)], rhs[(2, 0)], rhs[(3, 0)]]
    }

    pub fn mul_vec(a: &M4, x: &[f64; 4]) -> [f64; 4] {
        let mut y = [0.0; 4];
        for (yi, row) in y.iter_mut().zip(a) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 4.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.entries().len(), 3);
    }

    #[test]
    fn solves_multiple_right_hand_sides() {
        let m = SparseMatrix::from_triplets(
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (2, 0, 1.0)],
        );
        let f = m.factorize().unwrap();
        let b1 = [1.0, 2.0, 3.0];
        let b2 = [0.0, -1.0, 0.5];
        let xs = f.solve_many(&[&b1, &b2]).unwrap();
        for (x, b) in xs.iter().zip([b1, b2]) {
            let ax = m.mul_vec(x);
            for (a, b) in ax.iter().zip(b) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = SparseMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let res = m.factorize().and_then(|f| f.solve(&[1.0, 0.0]));
        assert!(matches!(res, Err(Error::Singular(_))), "{res:?}");
    }

    #[test]
    fn small_condition() {
        let id = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!((small::condition(&id) - 1.0).abs() < 1e-12);
        let mut sing = id;
        sing[3] = [0.0; 4];
        assert!(small::condition(&sing) > 1e12);
        let x = small::solve(&id, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x, [1.0, 2.0, 3.0, 4.0]);
    }
}
