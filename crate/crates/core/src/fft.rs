//! Two-dimensional FFT utilities built on `rustfft`.
//!
//! Convolutions throughout the crate are circular (periodic boundary), which
//! keeps every linear operator diagonal in the frequency domain — the property
//! the variational solver depends on. Kernels are embedded centered at the
//! origin with wraparound, so convolving with a symmetric kernel introduces no
//! phase shift.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{invalid, Result};

/// Planned forward/inverse transforms for one raster shape.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    fwd_rows: Arc<dyn Fft<f64>>,
    inv_rows: Arc<dyn Fft<f64>>,
    fwd_cols: Arc<dyn Fft<f64>>,
    inv_cols: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            fwd_rows: planner.plan_fft_forward(rows),
            inv_rows: planner.plan_fft_inverse(rows),
            fwd_cols: planner.plan_fft_forward(cols),
            inv_cols: planner.plan_fft_inverse(cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.rows * self.cols);
        // FFT each row (contiguous), then transpose, FFT again, transpose back.
        let row_fft = if inverse {
            &self.inv_cols
        } else {
            &self.fwd_cols
        };
        let col_fft = if inverse {
            &self.inv_rows
        } else {
            &self.fwd_rows
        };
        row_fft.process(buf);
        let mut t = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut t, self.rows, self.cols);
        col_fft.process(&mut t);
        transpose(&t, buf, self.cols, self.rows);
        if inverse {
            let scale = 1.0 / (self.rows * self.cols) as f64;
            for v in buf.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// In-place forward transform of a row-major complex plane.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// In-place normalized inverse transform.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    /// Forward transform of a real plane.
    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Normalized inverse transform, keeping the real part.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|v| v.re).collect()
    }

    /// Circular convolution of a real plane with a precomputed transfer
    /// function (see [`kernel_otf`]).
    pub fn convolve(&self, plane: &[f64], otf: &[Complex64]) -> Vec<f64> {
        let mut spec = self.forward_real(plane);
        for (s, h) in spec.iter_mut().zip(otf.iter()) {
            *s *= h;
        }
        self.inverse_real(&spec)
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Transfer function of a square kernel embedded centered at the origin with
/// wraparound, for a `rows x cols` plane. Multiplying a plane's spectrum by
/// this and inverting realizes circular convolution with the centered kernel.
pub fn kernel_otf(kernel: &[f64], size: usize, fft: &Fft2) -> Result<Vec<Complex64>> {
    if size == 0 || size % 2 == 0 || kernel.len() != size * size {
        return invalid(format!(
            "kernel must be square with odd side, got side {size} and {} taps",
            kernel.len()
        ));
    }
    let (rows, cols) = (fft.rows(), fft.cols());
    let mut plane = vec![0.0f64; rows * cols];
    let half = (size / 2) as isize;
    for i in 0..size {
        for j in 0..size {
            let r = (i as isize - half).rem_euclid(rows as isize) as usize;
            let c = (j as isize - half).rem_euclid(cols as isize) as usize;
            plane[r * cols + c] += kernel[i * size + j];
        }
    }
    Ok(fft.forward_real(&plane))
}

/// Discrete-time transfer function of a centered kernel at one spatial
/// frequency pair (cycles per sample).
pub fn kernel_transfer(kernel: &[f64], size: usize, fx: f64, fy: f64) -> Complex64 {
    let half = (size / 2) as isize;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..size {
        for j in 0..size {
            let dy = i as isize - half;
            let dx = j as isize - half;
            let phase = -2.0 * std::f64::consts::PI * (fy * dy as f64 + fx * dx as f64);
            acc += kernel[i * size + j] * Complex64::new(phase.cos(), phase.sin());
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force circular convolution with a centered kernel; the
    /// independent reference the FFT path is checked against.
    fn direct_circular(
        plane: &[f64],
        rows: usize,
        cols: usize,
        kernel: &[f64],
        size: usize,
    ) -> Vec<f64> {
        let half = (size / 2) as isize;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let mut acc = 0.0;
                for i in 0..size as isize {
                    for j in 0..size as isize {
                        let sr = (r - (i - half)).rem_euclid(rows as isize) as usize;
                        let sc = (c - (j - half)).rem_euclid(cols as isize) as usize;
                        acc += kernel[(i * size as isize + j) as usize] * plane[sr * cols + sc];
                    }
                }
                out[(r * cols as isize + c) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn roundtrip_recovers_plane() {
        let rows = 7;
        let cols = 5;
        let plane: Vec<f64> = (0..rows * cols).map(|v| (v as f64 * 0.37).sin()).collect();
        let fft = Fft2::new(rows, cols);
        let spec = fft.forward_real(&plane);
        let back = fft.inverse_real(&spec);
        for (a, b) in plane.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_convolution_matches_direct_loop() {
        let rows = 12;
        let cols = 10;
        let plane: Vec<f64> = (0..rows * cols)
            .map(|v| ((v * 7919 % 1000) as f64) / 250.0 - 2.0)
            .collect();
        let kernel = [0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05];
        let fft = Fft2::new(rows, cols);
        let otf = kernel_otf(&kernel, 3, &fft).unwrap();
        let got = fft.convolve(&plane, &otf);
        let want = direct_circular(&plane, rows, cols, &kernel, 3);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let rows = 6;
        let cols = 6;
        let plane: Vec<f64> = (0..36).map(|v| v as f64).collect();
        let fft = Fft2::new(rows, cols);
        let otf = kernel_otf(&[1.0], 1, &fft).unwrap();
        let out = fft.convolve(&plane, &otf);
        for (a, b) in out.iter().zip(plane.iter()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn transfer_function_of_delta_is_flat() {
        let h = kernel_transfer(&[1.0], 1, 0.25, 0.4);
        assert!((h.re - 1.0).abs() < 1e-15 && h.im.abs() < 1e-15);
    }

    #[test]
    fn kernel_otf_rejects_even_side() {
        let fft = Fft2::new(4, 4);
        assert!(kernel_otf(&[0.25; 4], 2, &fft).is_err());
    }
}
