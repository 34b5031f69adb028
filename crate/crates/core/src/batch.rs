//! Row-major batches of points in `R^dim`.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A batch of `len` points in `R^dim`, stored row-major in one buffer.
///
/// This is the common currency between sampling, cost evaluation and
/// batched network passes; keeping it contiguous lets the network layer
/// hand the whole batch to a matrix kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    dim: usize,
    data: Vec<f64>,
}

impl PointBatch {
    /// Empty batch of points in `R^dim`.
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * n) }
    }

    /// Wraps an existing row-major buffer.
    pub fn from_vec(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim.max(1), got: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.data.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }

    /// Resizes to exactly `n` rows (new entries zeroed). Used to recycle
    /// workspace batches across training iterations.
    pub fn resize_rows(&mut self, n: usize) {
        self.data.resize(n * self.dim, 0.0);
    }

    /// Copies the selected columns of every row into `out` (one row per
    /// input row). `out` keeps its own `dim`, which must equal `cols.len()`.
    pub fn gather_columns(&self, cols: &[usize], out: &mut PointBatch) {
        debug_assert_eq!(out.dim, cols.len());
        out.data.clear();
        for row in self.rows() {
            for &c in cols {
                out.data.push(row[c]);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
