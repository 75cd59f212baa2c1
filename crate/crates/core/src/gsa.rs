//! Adaptive Gram-Schmidt sharpening.
//!
//! The intensity component is a learned affine combination of the
//! hyperspectral bands: the panchromatic image is degraded to the
//! hyperspectral grid, regressed on the band spectra, and the fitted
//! weights are reused at full resolution on the upsampled cube. Spatial
//! detail is the difference between the histogram-matched pan image and
//! that synthetic intensity, injected per band with covariance-based gains.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::preprocess::{degrade_pan, upsample_cube_at, Boundary, SensorModel};
use crate::raster::{HyperCube, PanImage};

/// Ridge added to the band block of the weight normal equations.
const WEIGHT_RIDGE: f64 = 1e-8;
/// Intensity variance below this makes the injection gains undefined.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Affine weights mapping a spectrum to a synthetic intensity value.
#[derive(Debug, Clone, PartialEq)]
pub struct GsaWeights {
    pub band: Vec<f64>,
    pub intercept: f64,
}

impl GsaWeights {
    /// Evaluate the affine combination for one pixel of a band-major plane
    /// stack.
    fn intensity_plane(&self, cube: &HyperCube) -> Vec<f64> {
        let npix = cube.pixels();
        let mut plane = vec![self.intercept; npix];
        for (k, w) in self.band.iter().enumerate() {
            let src = cube.band(k);
            for (dst, v) in plane.iter_mut().zip(src.iter()) {
                *dst += w * *v as f64;
            }
        }
        plane
    }
}

/// Intermediate products of a sharpening run, kept for inspection.
#[derive(Debug, Clone)]
pub struct GsaArtifacts {
    pub weights: GsaWeights,
    /// Synthetic intensity at full resolution.
    pub intensity: Vec<f32>,
    /// Pan image after matching first and second moments of the intensity.
    pub matched_pan: Vec<f32>,
    /// Per-band injection gains `cov(band, intensity) / var(intensity)`.
    pub injection_gains: Vec<f64>,
}

/// Fit the affine weights that best explain the low-resolution pan image
/// from the hyperspectral spectra, via damped normal equations.
pub fn gsa_weights(hs: &HyperCube, pan_low: &PanImage) -> Result<GsaWeights> {
    if hs.rows() != pan_low.rows() || hs.cols() != pan_low.cols() {
        return invalid(format!(
            "hs grid {} x {} and degraded pan {} x {} differ",
            hs.rows(),
            hs.cols(),
            pan_low.rows(),
            pan_low.cols()
        ));
    }
    let bands = hs.bands();
    let npix = hs.pixels();
    if npix < bands + 1 {
        return invalid(format!(
            "{npix} pixels underdetermine {bands} band weights plus an intercept"
        ));
    }
    let dim = bands + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut x = vec![0.0f64; dim];
    x[bands] = 1.0;
    for p in 0..npix {
        for (k, slot) in x[..bands].iter_mut().enumerate() {
            *slot = hs.data()[k * npix + p] as f64;
        }
        let y = pan_low.data()[p] as f64;
        for i in 0..dim {
            rhs[i] += x[i] * y;
            for j in i..dim {
                gram[(i, j)] += x[i] * x[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    for k in 0..bands {
        gram[(k, k)] += WEIGHT_RIDGE;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| crate::Error::Numerical("weight normal equations are singular".into()))?;
    let coef = chol.solve(&rhs);
    Ok(GsaWeights {
        band: coef.as_slice()[..bands].to_vec(),
        intercept: coef[bands],
    })
}

fn mean_var(plane: &[f64]) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().sum::<f64>() / n;
    let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Sharpen `hs` against `pan` with the adaptive Gram-Schmidt scheme.
///
/// Steps: degrade pan to the hs grid, fit intensity weights there, upsample
/// the cube, synthesize the intensity at full resolution, match the pan
/// moments to it, then inject `gain_k * (matched - intensity)` into each
/// upsampled band.
pub fn gsa_sharpen(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
) -> Result<(HyperCube, GsaArtifacts)> {
    let ratio = model.ratio();
    if hs.bands() != model.bands() {
        return invalid(format!(
            "cube has {} bands but the sensor model expects {}",
            hs.bands(),
            model.bands()
        ));
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

    let pan_low = degrade_pan(pan, model, 0)?;
    let weights = gsa_weights(hs, &pan_low)?;

    let up = upsample_cube_at(hs, ratio, 0.0, Boundary::Periodic)?;
    let intensity = weights.intensity_plane(&up);
    let (mu_i, var_i) = mean_var(&intensity);
    if var_i < VARIANCE_FLOOR {
        return numerical("degenerate synthetic intensity (zero variance)");
    }
    let pan_f64 = pan.to_f64();
    let (mu_p, var_p) = mean_var(&pan_f64);
    if var_p < VARIANCE_FLOOR {
        return numerical("constant pan image cannot be moment-matched");
    }
    let scale = (var_i / var_p).sqrt();
    let matched: Vec<f64> = pan_f64.iter().map(|v| (v - mu_p) * scale + mu_i).collect();

    let npix = up.pixels();
    let mut gains = Vec::with_capacity(up.bands());
    let mut fused = vec![0.0f32; up.bands() * npix];
    for k in 0..up.bands() {
        let band = up.band(k);
        let mu_k = band.iter().map(|v| *v as f64).sum::<f64>() / npix as f64;
        let mut cov = 0.0f64;
        for (v, i) in band.iter().zip(intensity.iter()) {
            cov += (*v as f64 - mu_k) * (i - mu_i);
        }
        cov /= npix as f64;
        let gain = cov / var_i;
        gains.push(gain);
        let dst = &mut fused[k * npix..(k + 1) * npix];
        for ((d, v), (m, i)) in dst
            .iter_mut()
            .zip(band.iter())
            .zip(matched.iter().zip(intensity.iter()))
        {
            *d = (*v as f64 + gain * (m - i)) as f32;
        }
    }

    let fused = HyperCube::from_data(up.bands(), up.rows(), up.cols(), fused)?
        .metadata_like(&up)
        .with_gsd(pan.gsd_m)?;
    let artifacts = GsaArtifacts {
        weights,
        intensity: intensity.iter().map(|v| *v as f32).collect(),
        matched_pan: matched.iter().map(|v| *v as f32).collect(),
        injection_gains: gains,
    };
    Ok((fused, artifacts))
}
