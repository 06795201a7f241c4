//! Compressed sparse row storage.

use crate::error::{Error, Result};

/// Real matrix in CSR layout with sorted, duplicate-free rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in input order; explicitly stored zeros are kept.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n_rows];
        for &(r, c, _) in triplets {
            if r >= n_rows {
                return Err(Error::Range {
                    index: r,
                    limit: n_rows,
                });
            }
            if c >= n_cols {
                return Err(Error::Range {
                    index: c,
                    limit: n_cols,
                });
            }
            counts[r] += 1;
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for i in 0..n_rows {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let mut cursor = row_ptr[..n_rows].to_vec();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[cursor[r]] = (c, v);
            cursor[r] += 1;
        }

        let mut out_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        out_ptr.push(0);
        for i in 0..n_rows {
            let row = &mut entries[row_ptr[i]..row_ptr[i + 1]];
            // stable: duplicates are accumulated in file order
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            out_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr: out_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Stored value at `(i, j)`, if the entry is structurally present.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    /// Iterates over stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "mul_vec: x has wrong length");
        assert_eq!(y.len(), self.n_rows, "mul_vec: y has wrong length");
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `y += A x`.
    pub fn mul_vec_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "mul_vec_add: x has wrong length");
        assert_eq!(y.len(), self.n_rows, "mul_vec_add: y has wrong length");
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi += cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>();
        }
    }

    /// True when the stored pattern is symmetric.
    pub fn is_pattern_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(i, j, _)| self.get(j, i).is_some())
    }

    /// True when the matrix equals its transpose, value for value.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(i, j, v)| self.get(j, i).is_some_and(|w| w == v))
    }

    /// Largest distance `|i - j|` over stored entries (lower, upper).
    pub fn bandwidths(&self) -> (usize, usize) {
        self.iter().fold((0, 0), |(lo, up), (i, j, _)| {
            if i > j {
                (lo.max(i - j), up)
            } else {
                (lo, up.max(j - i))
            }
        })
    }

    /// Submatrix on the given row and column index lists. Entries are
    /// renumbered to positions within those lists.
    pub fn extract(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &r in rows {
            let (cs, vs) = self.row(r);
            let mut entries: Vec<(usize, f64)> = cs
                .iter()
                .zip(vs)
                .filter(|(&c, _)| col_map[c] != usize::MAX)
                .map(|(&c, &v)| (col_map[c], v))
                .collect();
            entries.sort_by_key(|&(c, _)| c);
            for (c, v) in entries {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: rows.len(),
            n_cols: cols.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }
}
