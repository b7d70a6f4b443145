//! Dense row-major `f64` matrix shared by spectrograms, heatmaps and network I/O.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
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

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear resampling on a corner-aligned grid: output corners coincide
    /// with input corners.
    pub fn resize_bilinear(&self, out_rows: usize, out_cols: usize) -> Self {
        let scale = |n_in: usize, n_out: usize| {
            if n_out > 1 {
                (n_in - 1) as f64 / (n_out - 1) as f64
            } else {
                0.0
            }
        };
        let sr = scale(self.rows, out_rows);
        let sc = scale(self.cols, out_cols);
        Matrix::from_fn(out_rows, out_cols, |r, c| {
            let y = r as f64 * sr;
            let x = c as f64 * sc;
            let y0 = (y.floor() as usize).min(self.rows - 1);
            let x0 = (x.floor() as usize).min(self.cols - 1);
            let y1 = (y0 + 1).min(self.rows - 1);
            let x1 = (x0 + 1).min(self.cols - 1);
            let fy = y - y0 as f64;
            let fx = x - x0 as f64;
            let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
            let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Partitions the matrix into an `out_rows x out_cols` grid of blocks
    /// (boundaries at `floor(i * n / out)`) and folds each block with `f` starting from `init`.
    /// Blocks are never empty: when the output is larger than the input along
    /// an axis, the source index is repeated.
    pub fn block_reduce(
        &self,
        out_rows: usize,
        out_cols: usize,
        init: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let rb = block_bounds(self.rows, out_rows);
        let cb = block_bounds(self.cols, out_cols);
        Matrix::from_fn(out_rows, out_cols, |r, c| {
            let (r0, r1) = rb[r];
            let (c0, c1) = cb[c];
            (r0..r1).fold(init, |acc, rr| {
                self.data[rr * self.cols + c0..rr * self.cols + c1].iter().fold(acc, |a, &v| f(a, v))
            })
        })
    }
}

/// Half-open source ranges `[start, end)` covered by each of `n_out` blocks
/// partitioning `n_in` cells.
pub fn block_bounds(n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
    (0..n_out)
        .map(|i| {
            let start = i * n_in / n_out;
            let end = ((i + 1) * n_in / n_out).max(start + 1).min(n_in.max(1));
            (start.min(n_in.saturating_sub(1)), end)
        })
        .collect()
}
