//! Row-compressed real sparse matrices and their on-disk triplet format.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const FLAG_HERMITIAN: u64 = 1;

/// Real sparse matrix in CSR layout with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    hermitian: bool,
}

impl SparseOperator {
    /// Accumulates `(row, col, value)` triplets, summing duplicates and
    /// dropping exact zeros.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>, hermitian: bool) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= dim || *c >= dim) {
            return Err(Error::InvalidArgument(format!(
                "triplet ({r}, {c}) outside a {dim}x{dim} operator"
            )));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
        for (r, c, v) in triplets {
            match rows[r].last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => rows[r].push((c, v)),
            }
        }
        Ok(Self::from_sorted_rows(rows, hermitian))
    }

    /// Rows must already carry strictly increasing column indices.
    pub(crate) fn from_sorted_rows(rows: Vec<Vec<(usize, f64)>>, hermitian: bool) -> Self {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            hermitian,
        }
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let rows = entries.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect();
        Self::from_sorted_rows(rows, true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(pos) => self.vals[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        self.apply_into(x.as_slice(), y.as_mut_slice());
        y
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.dim];
        for (i, j, v) in self.triplets() {
            rows[j].push((i, v));
        }
        Self::from_sorted_rows(rows, self.hermitian)
    }

    /// Exact equality with the transpose, entry by entry.
    pub fn is_symmetric_exact(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Dense copy of the trailing block `[start, dim) x [start, dim)`.
    pub fn trailing_dense(&self, start: usize) -> DMatrix<f64> {
        let n = self.dim - start;
        let mut m = DMatrix::zeros(n, n);
        for i in start..self.dim {
            for (j, v) in self.row(i) {
                if j >= start {
                    m[(i - start, j - start)] = v;
                }
            }
        }
        m
    }

    /// Sparse copy of the trailing block `[start, dim) x [start, dim)`.
    pub fn trailing_block(&self, start: usize) -> Self {
        let rows = (start..self.dim)
            .map(|i| {
                self.row(i)
                    .filter(|&(j, _)| j >= start)
                    .map(|(j, v)| (j - start, v))
                    .collect()
            })
            .collect();
        Self::from_sorted_rows(rows, self.hermitian)
    }

    /// `self + diag(shift)`; `shift` must have length `dim`.
    pub fn plus_diagonal(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let rows = (0..self.dim)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self.row(i).collect();
                match row.binary_search_by_key(&i, |e| e.0) {
                    Ok(p) => row[p].1 += shift[i],
                    Err(p) => row.insert(p, (i, shift[i])),
                }
                row
            })
            .collect();
        Self::from_sorted_rows(rows, self.hermitian)
    }

    /// Little-endian `u64 dim, u64 nnz, u64 flags` header followed by
    /// `(u64 row, u64 col, f64 value)` records in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 24 * self.nnz());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        let flags = if self.hermitian { FLAG_HERMITIAN } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for (i, j, v) in self.triplets() {
            out.extend_from_slice(&(i as u64).to_le_bytes());
            out.extend_from_slice(&(j as u64).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 8]> {
            bytes
                .get(at..at + 8)
                .map(|s| s.try_into().expect("slice of length 8"))
                .ok_or_else(|| Error::Format(format!("truncated at byte {at}")))
        };
        let dim = u64::from_le_bytes(word(0)?) as usize;
        let nnz = u64::from_le_bytes(word(8)?) as usize;
        let flags = u64::from_le_bytes(word(16)?);
        if bytes.len() != 24 + 24 * nnz {
            return Err(Error::Format(format!(
                "expected {} bytes for {nnz} records, found {}",
                24 + 24 * nnz,
                bytes.len()
            )));
        }
        let mut triplets = Vec::with_capacity(nnz);
        for r in 0..nnz {
            let at = 24 + 24 * r;
            let i = u64::from_le_bytes(word(at)?) as usize;
            let j = u64::from_le_bytes(word(at + 8)?) as usize;
            let v = f64::from_le_bytes(word(at + 16)?);
            triplets.push((i, j, v));
        }
        Self::from_triplets(dim, triplets, flags & FLAG_HERMITIAN != 0)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<String> {
        let bytes = self.to_bytes();
        out.write_all(&bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<(Self, String)> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let hash = sha256_hex(&bytes);
        Ok((Self::from_bytes(&bytes)?, hash))
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
