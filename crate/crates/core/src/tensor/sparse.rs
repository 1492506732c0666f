use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Constant sparse matrix in CSR form.
///
/// Used as a fixed left operand for graph propagation, per-graph pooling and
/// broadcast; it never receives gradients itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed; within a
    /// row, columns are stored in ascending order.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {rows}×{cols}"
                )));
            }
        }
        sorted.sort_by_key(|t| (t.0, t.1));

        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] += v;
            }
        }
        out
    }

    /// out[rows×d] += self · x[cols×d]
    pub(crate) fn spmm_acc(&self, x: &[T], d: usize, out: &mut [T]) {
        for r in 0..self.rows {
            let out_row = &mut out[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                for (o, &xv) in out_row.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *o += v * xv;
                }
            }
        }
    }

    /// out[cols×d] += selfᵀ · g[rows×d]
    pub(crate) fn spmm_t_acc(&self, g: &[T], d: usize, out: &mut [T]) {
        for r in 0..self.rows {
            let g_row = &g[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                for (o, &gv) in out[c * d..(c + 1) * d].iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::<f64>::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)])
            .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), vec![0.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(SparseMatrix::<f64>::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }
}
