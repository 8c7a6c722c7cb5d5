//! Compressed sparse row matrices, used for the POI transition graph.

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<R: Real> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<R>,
}

impl<R: Real> Csr<R> {
    /// Builds from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, R)>,
    ) -> Self {
        let mut per_row: Vec<std::collections::BTreeMap<usize, R>> = vec![Default::default(); nrows];
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            *per_row[r].entry(c).or_insert_with(R::zero) += v;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in per_row {
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[R]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, R)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Csr<R> {
        Csr::from_triplets(self.ncols, self.nrows, self.iter().map(|(r, c, v)| (c, r, v)))
    }

    pub fn row_sums(&self) -> Vec<R> {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().copied().sum())
            .collect()
    }

    /// Scales each row by the given factor.
    pub fn scale_rows(&self, factors: &[R]) -> Csr<R> {
        assert_eq!(factors.len(), self.nrows);
        let mut out = self.clone();
        for r in 0..self.nrows {
            let (s, e) = (out.indptr[r], out.indptr[r + 1]);
            for v in &mut out.values[s..e] {
                *v *= factors[r];
            }
        }
        out
    }

    /// Sparse-dense product `self (m x k) . dense (k x n)`.
    pub fn matmul_dense(&self, dense: &Tensor<R>) -> Tensor<R> {
        assert_eq!(self.ncols, dense.rows(), "spmm shape mismatch");
        let n = dense.cols();
        let mut out = Tensor::zeros(self.nrows, n);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let drow = dense.row(c);
                let orow = &mut out.data_mut()[r * n..(r + 1) * n];
                for j in 0..n {
                    orow[j] += v * drow[j];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Tensor<R> {
        let mut out = Tensor::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            out.set(r, c, out.get(r, c) + v);
        }
        out
    }
}
