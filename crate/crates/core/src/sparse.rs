//! Compressed sparse row matrices.

use crate::error::{PideError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets, summing duplicates and
    /// dropping exact zeros. Column indices are sorted within each row.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Csr> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(PideError::DimensionMismatch(format!(
                "entry ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        let mut kept_indices = Vec::with_capacity(indices.len());
        let mut kept_values = Vec::with_capacity(values.len());
        for ((c, v), r) in indices.into_iter().zip(values).zip(row_of) {
            if v != 0.0 {
                kept_indices.push(c);
                kept_values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Csr {
            rows,
            cols,
            indptr,
            indices: kept_indices,
            values: kept_values,
        })
    }

    pub fn identity(n: usize) -> Csr {
        Csr {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn max_row_nnz(&self) -> usize {
        self.indptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let (idx, val) = self.row(r);
            *out = idx.iter().zip(val).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `a I + b A` for square `A`; the diagonal is always stored.
    pub fn shifted(&self, a: f64, b: f64) -> Result<Csr> {
        if self.rows != self.cols {
            return Err(PideError::DimensionMismatch("shift of a non-square matrix".into()));
        }
        let mut t = Vec::with_capacity(self.nnz() + self.rows);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                t.push((r, c, b * v));
            }
            t.push((r, r, a));
        }
        Csr::from_triplets(self.rows, self.cols, t)
    }

    /// Kronecker product `A (x) B`.
    pub fn kron(a: &Csr, b: &Csr) -> Csr {
        let mut t = Vec::with_capacity(a.nnz() * b.nnz());
        for ra in 0..a.rows {
            let (ia, va) = a.row(ra);
            for rb in 0..b.rows {
                let (ib, vb) = b.row(rb);
                for (&ca, &xa) in ia.iter().zip(va) {
                    for (&cb, &xb) in ib.iter().zip(vb) {
                        t.push((ra * b.rows + rb, ca * b.cols + cb, xa * xb));
                    }
                }
            }
        }
        Csr::from_triplets(a.rows * b.rows, a.cols * b.cols, t).expect("indices in range")
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in d.iter_mut().enumerate() {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                row[c] = v;
            }
        }
        d
    }
}
