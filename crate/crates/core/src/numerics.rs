//! Dense complex linear algebra for detector preprocessing.
//!
//! Only what the tree search needs: a thin QR factorization with a real,
//! positive diagonal, its column-sorted variant (SQRD), and the matched
//! filter `Q^H y`. Dimensions are tiny (a handful of antennas), so plain
//! row-major storage and modified Gram-Schmidt are sufficient.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

/// Residual column norms at or below this fraction of the original column
/// norm are treated as linear dependence.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}; QR needs rows >= cols >= 1")]
    Shape { rows: usize, cols: usize },
    #[error("column {column} is numerically dependent (residual norm {residual:e})")]
    RankDeficient { column: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert!(rows >= 1 && cols >= 1, "empty matrix");
        assert_eq!(data.len(), rows * cols, "entry count must equal rows*cols");
        Self { rows, cols, data }
    }

    /// Convenience constructor from real-valued rows.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), cols, "ragged rows");
                r.iter().map(|&v| Complex64::new(v, 0.0))
            })
            .collect();
        Self::from_row_major(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &ComplexVector) -> Result<ComplexVector, LinalgError> {
        if self.cols != v.len() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok(ComplexVector::new(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    /// Returns the matrix whose column `k` is column `perm[k]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.cols);
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (k, &p) in perm.iter().enumerate() {
                out[(i, k)] = self[(i, p)];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.rows).all(|i| (0..i.min(self.cols)).all(|j| self[(i, j)] == Complex64::new(0.0, 0.0)))
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector(Vec<Complex64>);

impl ComplexVector {
    pub fn new(entries: Vec<Complex64>) -> Self {
        assert!(!entries.is_empty(), "empty vector");
        Self(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl Index<usize> for ComplexVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl From<Vec<Complex64>> for ComplexVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self::new(v)
    }
}

/// Thin QR factorization `H = QR` with `R` having a positive real diagonal.
pub fn qr_decompose(h: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix), LinalgError> {
    let (q, r, _) = gram_schmidt(h, false)?;
    Ok((q, r))
}

/// Sorted QR decomposition: `H P = QR` where at every step the remaining
/// column with the smallest residual norm is orthogonalized next.
///
/// `perm[k]` is the (zero-based) column of `H` placed at position `k`.
/// Ties go to the lowest original column index.
pub fn sorted_qr(
    h: &ComplexMatrix,
) -> Result<(ComplexMatrix, ComplexMatrix, Vec<usize>), LinalgError> {
    gram_schmidt(h, true)
}

/// Returns `Q^H y`.
pub fn matched_filter(q: &ComplexMatrix, y: &ComplexVector) -> Result<ComplexVector, LinalgError> {
    if q.rows() != y.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: q.rows(),
            actual: y.len(),
        });
    }
    let out = (0..q.cols())
        .map(|j| (0..q.rows()).map(|i| q[(i, j)].conj() * y[i]).sum())
        .collect();
    Ok(ComplexVector::new(out))
}

fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

// Modified Gram-Schmidt. Every remaining column is orthogonalized against
// each new basis vector as soon as it is fixed, so residual norms are always
// current for the sorting rule. The chosen column gets a second
// orthogonalization pass before normalization.
fn gram_schmidt(
    h: &ComplexMatrix,
    sorted: bool,
) -> Result<(ComplexMatrix, ComplexMatrix, Vec<usize>), LinalgError> {
    let (m, n) = (h.rows(), h.cols());
    if m < n || n == 0 {
        return Err(LinalgError::Shape { rows: m, cols: n });
    }

    let original_norms: Vec<f64> = (0..n).map(|j| norm(&h.column(j))).collect();
    let mut residual: Vec<Vec<Complex64>> = (0..n).map(|j| h.column(j)).collect();
    // coeffs[col][step] = projection of original column `col` on basis vector `step`.
    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut perm = Vec::with_capacity(n);
    let mut r = ComplexMatrix::zeros(n, n);

    for step in 0..n {
        let slot = if sorted {
            let mut best = 0;
            let mut best_norm = norm(&residual[remaining[0]]);
            for (s, &col) in remaining.iter().enumerate().skip(1) {
                let nrm = norm(&residual[col]);
                if nrm < best_norm {
                    best = s;
                    best_norm = nrm;
                }
            }
            best
        } else {
            0
        };
        let col = remaining.remove(slot);

        let mut v = std::mem::take(&mut residual[col]);
        for (p, q) in basis.iter().enumerate() {
            let c = dot_conj(q, &v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
            coeffs[col][p] += c;
        }
        let nrm = norm(&v);
        if original_norms[col] == 0.0 || nrm <= RANK_TOLERANCE * original_norms[col] {
            return Err(LinalgError::RankDeficient {
                column: col,
                residual: nrm,
            });
        }
        for vi in v.iter_mut() {
            *vi /= nrm;
        }

        for (p, c) in coeffs[col].iter().take(step).enumerate() {
            r[(p, step)] = *c;
        }
        r[(step, step)] = Complex64::new(nrm, 0.0);

        for &other in &remaining {
            let c = dot_conj(&v, &residual[other]);
            for (ri, qi) in residual[other].iter_mut().zip(&v) {
                *ri -= c * qi;
            }
            coeffs[other][step] += c;
        }

        basis.push(v);
        perm.push(col);
    }

    let mut q = ComplexMatrix::zeros(m, n);
    for (j, b) in basis.iter().enumerate() {
        for (i, &z) in b.iter().enumerate() {
            q[(i, j)] = z;
        }
    }
    Ok((q, r, perm))
}
