//! Row-major dense matrix storage and the few decompositions the pipeline needs.
//!
//! Feature and patch matrices are stored row-major because every stage walks
//! them one sample at a time. A row-major `rows × cols` buffer is bit-for-bit a
//! column-major `cols × rows` matrix, so products go through nalgebra views of
//! the transpose without copying.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};

use crate::error::{PdlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PdlError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(RowMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(PdlError::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(RowMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend(m.row(i).iter());
        }
        RowMatrix { rows, cols, data }
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

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Column-major view of the transpose (`cols × rows`), no copy.
    pub fn transposed_view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.cols, self.rows)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn select_columns(&self, cols: &[usize]) -> RowMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in self.iter_rows() {
            data.extend(cols.iter().map(|&j| r[j]));
        }
        RowMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> RowMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        RowMatrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.rows == 0 && self.data.is_empty() && self.cols == 0 {
            self.cols = row.len();
        }
        if row.len() != self.cols {
            return Err(PdlError::DimensionMismatch {
                expected: self.cols,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// non-increasing; eigenvector `j` is column `j` of the returned matrix.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Pseudo-inverse of a symmetric matrix, dropping eigenvalues whose magnitude
/// is at most `rel_tol` times the largest. Returns the inverse and the number
/// of retained eigenvalues.
pub fn pinv_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let (values, vectors) = symmetric_eigen_desc(m);
    let largest = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = rel_tol * largest;
    let mut scaled = vectors.clone();
    let mut rank = 0;
    for j in 0..n {
        let v = values[j];
        if largest > 0.0 && v.abs() > cutoff {
            scaled.column_mut(j).scale_mut(1.0 / v);
            rank += 1;
        } else {
            scaled.column_mut(j).fill(0.0);
        }
    }
    (scaled * vectors.transpose(), rank)
}

/// Flip each column so its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if largest_magnitude(col.iter().copied()) < 0.0 {
            col.neg_mut();
        }
    }
}

/// Entry of largest magnitude (first one wins on ties), with its sign.
pub(crate) fn largest_magnitude(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for v in values {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    best
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_view_matches_dense_transpose() {
        let m = RowMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let view = m.transposed_view();
        assert_eq!(view.shape(), (3, 2));
        assert_eq!(view.clone_owned(), m.to_dmatrix().transpose());
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = symmetric_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[5.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_drops_null_space() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, rank) = pinv_symmetric(&m, 1e-10);
        assert_eq!(rank, 1);
        let expected = DMatrix::from_element(2, 2, 0.25);
        assert!((p - expected).abs().max() < 1e-12);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(RowMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
