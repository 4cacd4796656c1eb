//! Dense row-major matrices and Householder QR least squares.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// A column is treated as linearly dependent when its Householder pivot is
/// below this fraction of its original norm.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data.
    ///
    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self[(i, j)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Householder QR factorization of a full-column-rank matrix with at least
/// as many rows as columns.
#[derive(Debug, Clone)]
pub struct Qr {
    rows: usize,
    cols: usize,
    /// Strict upper triangle holds R above the diagonal.
    r: Matrix,
    diag: Vec<f64>,
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Result<Self> {
        let (rows, cols) = (a.rows, a.cols);
        if rows < cols {
            return Err(Error::RankDeficient);
        }
        let norms: Vec<f64> = (0..cols)
            .map(|j| libm::sqrt(a.column(j).map(|v| v * v).sum()))
            .collect();
        let mut work = a.clone();
        let mut diag = Vec::with_capacity(cols);
        let mut reflectors = Vec::with_capacity(cols);
        for j in 0..cols {
            let mut v: Vec<f64> = (j..rows).map(|i| work[(i, j)]).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm.is_nan() || norm <= RANK_TOLERANCE * norms[j] {
                return Err(Error::RankDeficient);
            }
            let alpha = if v[0] > 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let beta = 2.0 / vv;
            for k in j + 1..cols {
                let s: f64 = v
                    .iter()
                    .enumerate()
                    .map(|(t, vt)| vt * work[(j + t, k)])
                    .sum::<f64>()
                    * beta;
                for (t, vt) in v.iter().enumerate() {
                    work[(j + t, k)] -= s * vt;
                }
            }
            diag.push(alpha);
            reflectors.push((v, beta));
        }
        Ok(Self {
            rows,
            cols,
            r: work,
            diag,
            reflectors,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Overwrites `b` with `Q' b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.rows);
        for (j, (v, beta)) in self.reflectors.iter().enumerate() {
            let s: f64 = v.iter().zip(&b[j..]).map(|(x, y)| x * y).sum::<f64>() * beta;
            for (bt, vt) in b[j..].iter_mut().zip(v) {
                *bt -= s * vt;
            }
        }
    }

    fn r_at(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.r[(i, j)]
        }
    }

    /// Least-squares solution of `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let mut x = vec![0.0; self.cols];
        for i in (0..self.cols).rev() {
            let tail: f64 = (i + 1..self.cols).map(|j| self.r_at(i, j) * x[j]).sum();
            x[i] = (qtb[i] - tail) / self.diag[i];
        }
        x
    }

    /// `(A'A)^{-1} = R^{-1} R^{-T}`.
    pub fn inverse_gram(&self) -> Matrix {
        let p = self.cols;
        let mut rinv = Matrix::zeros(p, p);
        for col in 0..p {
            for i in (0..=col).rev() {
                let rhs = if i == col { 1.0 } else { 0.0 };
                let tail: f64 = (i + 1..=col)
                    .map(|j| self.r_at(i, j) * rinv[(j, col)])
                    .sum();
                rinv[(i, col)] = (rhs - tail) / self.diag[i];
            }
        }
        let mut out = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] = (i.max(j)..p).map(|k| rinv[(i, k)] * rinv[(j, k)]).sum();
            }
        }
        out
    }
}

/// Least-squares fit of `y` on the columns of `x`.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    Ok(Qr::new(x)?.solve(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_interpolation() {
        // y = 5 + 2 t
        let x = Matrix::from_row_major(3, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = least_squares(&x, &[5.0, 7.0, 9.0]).unwrap();
        assert!((b[0] - 5.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn square_solve() {
        let a = Matrix::from_row_major(2, 2, vec![4.0, 1.0, 1.0, 3.0]);
        let x = Qr::new(&a).unwrap().solve(&[1.0, 2.0]);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficiency_is_detected() {
        let dup = Matrix::from_row_major(2, 2, vec![1.0, 3.0, 1.0, 3.0]);
        assert_eq!(Qr::new(&dup).unwrap_err(), Error::RankDeficient);
        let wide = Matrix::from_row_major(1, 2, vec![1.0, 2.0]);
        assert_eq!(Qr::new(&wide).unwrap_err(), Error::RankDeficient);
        let zero_col = Matrix::from_row_major(3, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(Qr::new(&zero_col).unwrap_err(), Error::RankDeficient);
    }

    #[test]
    fn inverse_gram_matches_direct_inverse() {
        let x = Matrix::from_row_major(4, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        // X'X = [[4, 8], [8, 30]], det = 56
        let g = Qr::new(&x).unwrap().inverse_gram();
        let expected = [[30.0 / 56.0, -8.0 / 56.0], [-8.0 / 56.0, 4.0 / 56.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[(i, j)] - expected[i][j]).abs() < 1e-13);
            }
        }
    }
}
