//! Row- and column-compressed sparse matrices with deterministic parallel
//! products.

use rayon::prelude::*;

const REDUCE_CHUNK: usize = 1024;

/// Dot product reduced over fixed-size chunks, so the summation order does
/// not depend on scheduling.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse matrix stored both by rows and by columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_val: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` entries. Duplicate columns in a
    /// row are summed.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut row_val = Vec::new();
        row_ptr.push(0);
        let mut scratch = Vec::new();
        for row in rows {
            scratch.clear();
            scratch.extend_from_slice(row);
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                assert!(c < cols, "column {c} out of range");
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *row_val.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    row_val.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }

        let mut counts = vec![0usize; cols + 1];
        for &c in &col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..cols {
            counts[c + 1] += counts[c];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0; col_idx.len()];
        let mut col_val = vec![0.0; col_idx.len()];
        for r in 0..rows.len() {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = col_idx[k];
                row_idx[next[c]] = r;
                col_val[next[c]] = row_val[k];
                next[c] += 1;
            }
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            row_val,
            col_ptr,
            row_idx,
            col_val,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `A·x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .into_par_iter()
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.row_val[k] * x[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// `Aᵀ·y`, one independent sum per column.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        (0..self.cols)
            .into_par_iter()
            .map(|c| {
                (self.col_ptr[c]..self.col_ptr[c + 1])
                    .map(|k| self.col_val[k] * y[self.row_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// Diagonal of `AᵀA`.
    pub fn col_sq_norms(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|c| self.col_val[self.col_ptr[c]..self.col_ptr[c + 1]].iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.row_val[k];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn products_match_dense() {
        let rows = vec![
            vec![(0, 1.0), (2, -2.0)],
            vec![],
            vec![(1, 3.0), (1, 0.5), (3, 4.0)],
            vec![(3, -1.0), (0, 2.0)],
        ];
        let a = SparseMatrix::from_rows(4, &rows);
        assert_eq!(a.nnz(), 6);
        let d = a.to_dense();
        assert_eq!(d[(2, 1)], 3.5);
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [0.3, 1.0, -1.0, 2.0];
        let ax = d.clone() * DVector::from_row_slice(&x);
        let aty = d.transpose() * DVector::from_row_slice(&y);
        assert_eq!(a.mul_vec(&x), ax.as_slice());
        assert_eq!(a.tr_mul_vec(&y), aty.as_slice());
        let diag = (d.transpose() * &d).diagonal();
        assert_eq!(a.col_sq_norms(), diag.as_slice());
    }

    #[test]
    fn dot_is_thread_independent() {
        let a: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.11).cos()).collect();
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let one = pool(1).install(|| dot(&a, &b));
        let many = pool(8).install(|| dot(&a, &b));
        assert_eq!(one.to_bits(), many.to_bits());
    }
}
