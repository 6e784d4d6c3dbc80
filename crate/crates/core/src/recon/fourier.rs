use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unitary 2-D DFT on a row-major `rows x cols` grid.
///
/// k-space is kept center-shifted: the DC sample sits at `(rows / 2, cols / 2)`.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Image to centered k-space.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.row_fwd, &self.col_fwd);
        self.shift(data, self.rows / 2, self.cols / 2);
    }

    /// Centered k-space to image.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.shift(data, self.rows - self.rows / 2, self.cols - self.cols / 2);
        self.apply(data, &self.row_inv, &self.col_inv);
    }

    /// Cyclic shift moving index `(r, c)` to `(r + dr, c + dc)`.
    fn shift(&self, data: &mut [Complex64], dr: usize, dc: usize) {
        let src = data.to_vec();
        for r in 0..self.rows {
            let rr = (r + dr) % self.rows;
            for c in 0..self.cols {
                data[rr * self.cols + (c + dc) % self.cols] = src[r * self.cols + c];
            }
        }
    }

    fn apply(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "grid size mismatch");
        row.process(data);
        let mut column = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[r * self.cols + c];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                data[r * self.cols + c] = column[r] * self.scale;
            }
        }
    }
}
