//! Relative sensor calibration from an overlapping image pair.
//!
//! Estimates the panchromatic spectral response and the hyperspectral PSF
//! directly from the data, using the consistency constraint that the
//! response applied to the hyperspectral spectra must equal the blurred,
//! decimated pan image. The bilinear problem is solved by alternating
//! regularized least squares over the two unknowns.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::fft::kernel_transfer;
use crate::preprocess::{mtf_kernel, SensorModel};
use crate::raster::{HyperCube, PanImage};

/// Knobs for [`estimate_sensor`].
#[derive(Debug, Clone)]
pub struct SensorEstimateOptions {
    /// Odd PSF side; 0 picks `2 * ratio + 1`.
    pub psf_size: usize,
    /// Weight of the first-difference penalty on the spectral response.
    pub smooth_response: f64,
    /// Weight of the Laplacian penalty on the PSF.
    pub smooth_psf: f64,
    pub max_iter: usize,
    /// Relative change of the stacked unknowns that counts as converged.
    pub rel_tol: f64,
}

impl Default for SensorEstimateOptions {
    fn default() -> Self {
        SensorEstimateOptions {
            psf_size: 0,
            smooth_response: 1e-3,
            smooth_psf: 1e-3,
            max_iter: 50,
            rel_tol: 1e-8,
        }
    }
}

/// Ridge keeping the normal equations positive definite.
const SOLVE_RIDGE: f64 = 1e-10;

fn solve_spd(mut gram: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let n = gram.nrows();
    for i in 0..n {
        gram[(i, i)] += SOLVE_RIDGE;
    }
    let mut boost = SOLVE_RIDGE;
    loop {
        match gram.clone().cholesky() {
            Some(chol) => return Ok(chol.solve(rhs)),
            None if boost < 1.0 => {
                boost *= 1e3;
                for i in 0..n {
                    gram[(i, i)] += boost;
                }
            }
            None => return numerical(format!("{what} normal equations are not positive definite")),
        }
    }
}

/// `D^T D` for the first-difference operator on `n` points.
fn difference_penalty(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i)] += 1.0;
        m[(i + 1, i + 1)] += 1.0;
        m[(i, i + 1)] -= 1.0;
        m[(i + 1, i)] -= 1.0;
    }
    m
}

/// `L^T L` for the 5-point Laplacian on an `s x s` grid (zero outside).
fn laplacian_penalty(s: usize) -> DMatrix<f64> {
    let n = s * s;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for r in 0..s {
        for c in 0..s {
            let i = r * s + c;
            l[(i, i)] = 4.0;
            if r > 0 {
                l[(i, i - s)] = -1.0;
            }
            if r + 1 < s {
                l[(i, i + s)] = -1.0;
            }
            if c > 0 {
                l[(i, i - 1)] = -1.0;
            }
            if c + 1 < s {
                l[(i, i + 1)] = -1.0;
            }
        }
    }
    l.transpose() * l
}

/// Clip small negative leakage and renormalize to unit sum.
fn to_unit_weights(v: &DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let sum: f64 = w.iter().sum();
    if !(sum.is_finite() && sum > 1e-9) {
        return numerical(format!("estimated {what} collapsed to a non-positive sum"));
    }
    for x in w.iter_mut() {
        *x /= sum;
    }
    Ok(w)
}

/// Estimate a [`SensorModel`] from a registered hyperspectral/panchromatic
/// pair. The pan grid must be the hs grid scaled by `ratio`; the returned
/// model carries the fitted response and PSF (both clipped to non-negative
/// and normalized to unit sum) plus the PSF's measured gain at the
/// decimated-grid Nyquist frequency.
pub fn estimate_sensor(
    hs: &HyperCube,
    pan: &PanImage,
    ratio: usize,
    opts: &SensorEstimateOptions,
) -> Result<SensorModel> {
    if ratio < 2 {
        return invalid(format!("decimation ratio must be at least 2, got {ratio}"));
    }
    if pan.rows() != hs.rows() * ratio || pan.cols() != hs.cols() * ratio {
        return invalid(format!(
            "pan {} x {} is not the hs grid {} x {} scaled by {ratio}",
            pan.rows(),
            pan.cols(),
            hs.rows(),
            hs.cols()
        ));
    }
    let size = if opts.psf_size == 0 {
        2 * ratio + 1
    } else {
        opts.psf_size
    };
    if size % 2 == 0 {
        return invalid(format!("psf side must be odd, got {size}"));
    }
    if size > pan.rows().min(pan.cols()) {
        return invalid(format!(
            "psf side {size} exceeds the pan raster {} x {}",
            pan.rows(),
            pan.cols()
        ));
    }
    if !(opts.smooth_response >= 0.0 && opts.smooth_psf >= 0.0) {
        return invalid("smoothness weights must be non-negative");
    }
    if opts.max_iter == 0 {
        return invalid("estimation needs at least one iteration");
    }
    let bands = hs.bands();
    let n_low = hs.pixels();
    let taps = size * size;
    if n_low < bands.max(taps) {
        return invalid(format!(
            "{n_low} pixels underdetermine {bands} response weights and {taps} psf taps"
        ));
    }

    // H: spectra design (n_low x bands). G: pan samples the psf sees
    // (n_low x taps), circular indexing, phase-0 decimation.
    let mut h = DMatrix::<f64>::zeros(n_low, bands);
    for p in 0..n_low {
        for k in 0..bands {
            h[(p, k)] = hs.data()[k * n_low + p] as f64;
        }
    }
    let (rows, cols) = (pan.rows(), pan.cols());
    let half = (size / 2) as isize;
    let mut g = DMatrix::<f64>::zeros(n_low, taps);
    for i in 0..hs.rows() {
        for j in 0..hs.cols() {
            let p = i * hs.cols() + j;
            for dr in -half..=half {
                for dc in -half..=half {
                    let r = (i as isize * ratio as isize - dr).rem_euclid(rows as isize) as usize;
                    let c = (j as isize * ratio as isize - dc).rem_euclid(cols as isize) as usize;
                    let t = ((dr + half) * size as isize + dc + half) as usize;
                    g[(p, t)] = pan.data()[r * cols + c] as f64;
                }
            }
        }
    }

    let hth = h.transpose() * &h;
    let gtg = g.transpose() * &g;
    let resp_penalty = difference_penalty(bands) * opts.smooth_response;
    let psf_penalty = laplacian_penalty(size) * opts.smooth_psf;

    // Start from a mid-range Gaussian blur; the response step runs first.
    let mut b = DVector::<f64>::from_vec(mtf_kernel(0.5, ratio, size)?);
    let mut r = DVector::<f64>::from_element(bands, 1.0 / bands as f64);
    for _ in 0..opts.max_iter {
        let r_prev = r.clone();
        let b_prev = b.clone();

        let target = &g * &b;
        let rhs_r = h.transpose() * &target;
        r = solve_spd(&hth + &resp_penalty, &rhs_r, "response")?;
        let sum_r = r.sum();
        if !(sum_r.is_finite() && sum_r.abs() > 1e-12) {
            return numerical("response estimate collapsed toward zero");
        }
        // Fix the bilinear scale on the response; the psf step absorbs it.
        r /= sum_r;

        let target = &h * &r;
        let rhs_b = g.transpose() * &target;
        b = solve_spd(&gtg + &psf_penalty, &rhs_b, "psf")?;

        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (new, old) in r
            .iter()
            .zip(r_prev.iter())
            .chain(b.iter().zip(b_prev.iter()))
        {
            num += (new - old) * (new - old);
            den += old * old;
        }
        if num.sqrt() <= opts.rel_tol * den.sqrt().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let response = to_unit_weights(&r, "spectral response")?;
    let psf = to_unit_weights(&b, "psf")?;
    let nyquist = 0.5 / ratio as f64;
    let gain = kernel_transfer(&psf, size, nyquist, 0.0)
        .norm()
        .clamp(1e-3, 1.0 - 1e-9);
    SensorModel::new(response, psf, size, ratio, vec![gain; bands])
}
