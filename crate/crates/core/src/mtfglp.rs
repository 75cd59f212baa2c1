//! MTF-matched generalized Laplacian pyramid sharpening.
//!
//! Per band, the pan image is first matched to the upsampled band's first
//! and second moments, then lowpass-filtered with a Gaussian shaped to the
//! band's MTF gain at Nyquist, decimated, and re-expanded. The difference
//! between the matched pan and that lowpass approximation is the spatial
//! detail, injected with one of three gain models.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::fft::{kernel_otf, Fft2};
use crate::preprocess::{
    decimate_plane_f64, mtf_kernel_auto, upsample_cube_at, upsample_plane_f64, Boundary,
    SensorModel,
};
use crate::raster::{HyperCube, PanImage};

/// Variances below this make moment matching or regression gains undefined.
const VARIANCE_FLOOR: f64 = 1e-12;

/// How the per-band detail gain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    /// Inject the detail plane unchanged (gain 1).
    Unit,
    /// Global least-squares gain `cov(band, lowpass) / var(lowpass)`.
    #[default]
    Regression,
    /// High-pass modulation: per-pixel ratio `band / lowpass`.
    Hpm,
}

impl FromStr for GainMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unit" => Ok(GainMode::Unit),
            "regression" => Ok(GainMode::Regression),
            "hpm" => Ok(GainMode::Hpm),
            other => Err(crate::Error::InvalidInput(format!(
                "unknown gain mode `{other}` (expected unit, regression, or hpm)"
            ))),
        }
    }
}

impl std::fmt::Display for GainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GainMode::Unit => "unit",
            GainMode::Regression => "regression",
            GainMode::Hpm => "hpm",
        })
    }
}

/// Per-band gains actually applied by a run.
#[derive(Debug, Clone)]
pub enum AppliedGains {
    /// One scalar per band (unit or regression modes).
    Scalar(Vec<f64>),
    /// Full gain planes (high-pass modulation).
    PerPixel(Vec<Vec<f32>>),
}

/// Intermediate products of a pyramid sharpening run.
#[derive(Debug, Clone)]
pub struct GlpArtifacts {
    pub gain_mode: GainMode,
    /// Lowpass approximation of the matched pan, one plane per band.
    pub pan_lowpass: Vec<Vec<f32>>,
    /// Detail planes `matched - lowpass`, one per band.
    pub details: Vec<Vec<f32>>,
    pub gains: AppliedGains,
}

/// Filter a full-resolution plane with the band kernel, decimate at phase 0,
/// and re-expand to full resolution (offset 0, periodic boundary).
fn lowpass_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    ratio: usize,
    fft: &Fft2,
    otf: &[num_complex::Complex<f64>],
) -> Vec<f64> {
    let filtered = fft.convolve(plane, otf);
    let low = decimate_plane_f64(&filtered, rows, cols, ratio, 0);
    upsample_plane_f64(
        &low,
        rows / ratio,
        cols / ratio,
        ratio,
        0.0,
        Boundary::Periodic,
    )
}

/// Public view of the pyramid's analysis step for one band: the pan image
/// filtered with that band's MTF-matched Gaussian, decimated by the model
/// ratio, and re-expanded. The returned plane has the pan dimensions.
pub fn glp_lowpass(pan: &PanImage, model: &SensorModel, band: usize) -> Result<Vec<f32>> {
    if band >= model.bands() {
        return invalid(format!(
            "band {band} out of range for a {}-band model",
            model.bands()
        ));
    }
    let (rows, cols) = (pan.rows(), pan.cols());
    let ratio = model.ratio();
    if rows % ratio != 0 || cols % ratio != 0 {
        return invalid(format!(
            "pan {rows} x {cols} is not divisible by the ratio {ratio}"
        ));
    }
    let fft = Fft2::new(rows, cols);
    let (kernel, size) = mtf_kernel_auto(model.mtf_gain_nyquist()[band], ratio)?;
    let otf = kernel_otf(&kernel, size, &fft)?;
    let low = lowpass_plane(&pan.to_f64(), rows, cols, ratio, &fft, &otf);
    Ok(low.iter().map(|v| *v as f32).collect())
}

fn mean_var(plane: &[f64]) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().sum::<f64>() / n;
    let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Sharpen `hs` against `pan` with the MTF-matched pyramid.
pub fn mtfglp_sharpen(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    mode: GainMode,
) -> Result<(HyperCube, GlpArtifacts)> {
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
    let (rows, cols) = (pan.rows(), pan.cols());
    let npix = rows * cols;
    let fft = Fft2::new(rows, cols);
    let pan_f64 = pan.to_f64();
    let (mu_p, var_p) = mean_var(&pan_f64);
    if var_p < VARIANCE_FLOOR {
        return numerical("constant pan image cannot be moment-matched");
    }

    let up = upsample_cube_at(hs, ratio, 0.0, Boundary::Periodic)?;

    // Bands usually share one MTF gain; cache kernels by gain bits.
    let mut otf_cache: HashMap<u64, Vec<num_complex::Complex<f64>>> = HashMap::new();

    let bands = hs.bands();
    let mut fused = vec![0.0f32; bands * npix];
    let mut pan_lowpass = Vec::with_capacity(bands);
    let mut details = Vec::with_capacity(bands);
    let mut scalar_gains = Vec::with_capacity(bands);
    let mut pixel_gains: Vec<Vec<f32>> = Vec::with_capacity(bands);

    for k in 0..bands {
        let gain_nyq = model.mtf_gain_nyquist()[k];
        let otf = match otf_cache.entry(gain_nyq.to_bits()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let (kernel, size) = mtf_kernel_auto(gain_nyq, ratio)?;
                e.insert(kernel_otf(&kernel, size, &fft)?)
            }
        };

        let up_k: Vec<f64> = up.band(k).iter().map(|&v| v as f64).collect();
        let (mu_k, var_k) = mean_var(&up_k);
        let scale = (var_k / var_p).sqrt();
        let matched: Vec<f64> = pan_f64.iter().map(|v| (v - mu_p) * scale + mu_k).collect();

        let low = lowpass_plane(&matched, rows, cols, ratio, &fft, otf);
        let detail: Vec<f64> = matched.iter().zip(low.iter()).map(|(m, l)| m - l).collect();

        let dst = &mut fused[k * npix..(k + 1) * npix];
        match mode {
            GainMode::Unit => {
                scalar_gains.push(1.0);
                for ((d, u), det) in dst.iter_mut().zip(up_k.iter()).zip(detail.iter()) {
                    *d = (u + det) as f32;
                }
            }
            GainMode::Regression => {
                let (mu_l, var_l) = mean_var(&low);
                if var_l < VARIANCE_FLOOR {
                    return numerical(format!(
                        "band {k}: lowpass plane is constant; regression gain undefined"
                    ));
                }
                let cov: f64 = up_k
                    .iter()
                    .zip(low.iter())
                    .map(|(u, l)| (u - mu_k) * (l - mu_l))
                    .sum::<f64>()
                    / npix as f64;
                let g = cov / var_l;
                scalar_gains.push(g);
                for ((d, u), det) in dst.iter_mut().zip(up_k.iter()).zip(detail.iter()) {
                    *d = (u + g * det) as f32;
                }
            }
            GainMode::Hpm => {
                let mean_abs = low.iter().map(|v| v.abs()).sum::<f64>() / npix as f64;
                let eps = (1e-6 * mean_abs).max(f64::MIN_POSITIVE);
                let mut plane_gain = Vec::with_capacity(npix);
                for ((d, u), (l, det)) in dst
                    .iter_mut()
                    .zip(up_k.iter())
                    .zip(low.iter().zip(detail.iter()))
                {
                    let g = u / l.max(eps);
                    plane_gain.push(g as f32);
                    *d = (u + g * det) as f32;
                }
                pixel_gains.push(plane_gain);
            }
        }
        pan_lowpass.push(low.iter().map(|v| *v as f32).collect());
        details.push(detail.iter().map(|v| *v as f32).collect());
    }

    let fused = HyperCube::from_data(bands, rows, cols, fused)
        .map_err(|e| e.with_context("pyramid-fused cube"))?
        .metadata_like(hs)
        .with_gsd(pan.gsd_m)?;
    let gains = match mode {
        GainMode::Hpm => AppliedGains::PerPixel(pixel_gains),
        _ => AppliedGains::Scalar(scalar_gains),
    };
    let artifacts = GlpArtifacts {
        gain_mode: mode,
        pan_lowpass,
        details,
        gains,
    };
    Ok((fused, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(state: &mut u64) -> f32 {
        *state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*state >> 33) as f32) / (1u64 << 31) as f32
    }

    fn model_with_gain(bands: usize, ratio: usize, gain: f64) -> SensorModel {
        SensorModel::gaussian(bands, ratio, gain).unwrap()
    }

    #[test]
    fn gain_mode_parses_and_prints() {
        assert_eq!("unit".parse::<GainMode>().unwrap(), GainMode::Unit);
        assert_eq!(" HPM ".parse::<GainMode>().unwrap(), GainMode::Hpm);
        assert_eq!(GainMode::Regression.to_string(), "regression");
        assert!("laplace".parse::<GainMode>().is_err());
    }

    /// A checkerboard flipping sign every `ratio` pixels sits at the Nyquist
    /// frequency of the decimated grid; a 0.3-gain MTF must crush it.
    /// The 2-D attenuation is roughly (0.3 * 4 / pi)^2, well under 0.35.
    #[test]
    fn lowpass_attenuates_nyquist_checkerboard() {
        let ratio = 4;
        let n = 64;
        let data: Vec<f32> = (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                if ((r / ratio) + (c / ratio)) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let pan = PanImage::from_data(n, n, data).unwrap();
        let model = model_with_gain(1, ratio, 0.3);
        let low = glp_lowpass(&pan, &model, 0).unwrap();
        let peak = low.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak < 0.35, "residual checkerboard amplitude {peak}");
    }

    /// A sinusoid eight low-resolution pixels per cycle is far below Nyquist;
    /// a 0.6-gain MTF must pass it nearly unchanged.
    #[test]
    fn lowpass_preserves_low_frequency_sinusoid() {
        let ratio = 4;
        let n = 128;
        let period = 8 * ratio; // 32 pixels
        let data: Vec<f32> = (0..n * n)
            .map(|i| {
                let c = (i % n) as f64;
                (2.0 * std::f64::consts::PI * c / period as f64).sin() as f32
            })
            .collect();
        let pan = PanImage::from_data(n, n, data.clone()).unwrap();
        let model = model_with_gain(1, ratio, 0.6);
        let low = glp_lowpass(&pan, &model, 0).unwrap();
        let worst = low
            .iter()
            .zip(data.iter())
            .map(|(l, d)| (l - d).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 0.05, "sinusoid distorted by {worst}");
    }

    /// Unit-gain fusion recomposed from the public primitives.
    #[test]
    fn unit_gain_fusion_matches_composition() {
        let ratio = 2;
        let mut s = 7u64;
        let hs_data: Vec<f32> = (0..2 * 36).map(|_| lcg(&mut s) + 0.5).collect();
        let hs = HyperCube::from_data(2, 6, 6, hs_data).unwrap();
        let pan_data: Vec<f32> = (0..144).map(|_| lcg(&mut s) * 2.0 + 1.0).collect();
        let pan = PanImage::from_data(12, 12, pan_data).unwrap();
        let model = model_with_gain(2, ratio, 0.3);

        let (fused, art) = mtfglp_sharpen(&hs, &pan, &model, GainMode::Unit).unwrap();
        assert_eq!(art.gain_mode, GainMode::Unit);

        let up = upsample_cube_at(&hs, ratio, 0.0, Boundary::Periodic).unwrap();
        let pan_f = pan.to_f64();
        let (mu_p, var_p) = mean_var(&pan_f);
        for k in 0..2 {
            let up_k: Vec<f64> = up.band(k).iter().map(|&v| v as f64).collect();
            let (mu_k, var_k) = mean_var(&up_k);
            let scale = (var_k / var_p).sqrt();
            // The lowpass of the matched pan is an affine map of the lowpass
            // of the raw pan, because every stage is linear.
            let raw_low = glp_lowpass(&pan, &model, k).unwrap();
            for p in 0..144 {
                let matched = (pan_f[p] - mu_p) * scale + mu_k;
                let low = (raw_low[p] as f64 - mu_p) * scale + mu_k;
                let expect = up_k[p] + (matched - low);
                let got = fused.band(k)[p] as f64;
                assert!((expect - got).abs() < 1e-4, "band {k} pixel {p}");
            }
        }
    }

    /// Regression gain against the scalar closed form.
    #[test]
    fn regression_gain_matches_closed_form() {
        let ratio = 2;
        let mut s = 13u64;
        let hs_data: Vec<f32> = (0..64).map(|_| lcg(&mut s) + 0.5).collect();
        let hs = HyperCube::from_data(1, 8, 8, hs_data).unwrap();
        let pan_data: Vec<f32> = (0..256).map(|_| lcg(&mut s) * 3.0 + 1.0).collect();
        let pan = PanImage::from_data(16, 16, pan_data).unwrap();
        let model = model_with_gain(1, ratio, 0.3);

        let (_, art) = mtfglp_sharpen(&hs, &pan, &model, GainMode::Regression).unwrap();
        let AppliedGains::Scalar(gains) = &art.gains else {
            panic!("regression mode must report scalar gains");
        };

        let up = upsample_cube_at(&hs, ratio, 0.0, Boundary::Periodic).unwrap();
        let up0: Vec<f64> = up.band(0).iter().map(|&v| v as f64).collect();
        let low: Vec<f64> = art.pan_lowpass[0].iter().map(|&v| v as f64).collect();
        let (mu_u, _) = mean_var(&up0);
        let (mu_l, var_l) = mean_var(&low);
        let cov: f64 = up0
            .iter()
            .zip(low.iter())
            .map(|(u, l)| (u - mu_u) * (l - mu_l))
            .sum::<f64>()
            / 256.0;
        // The artifact planes round through f32, so allow a loose tolerance.
        assert!((gains[0] - cov / var_l).abs() < 1e-4, "gain {}", gains[0]);
    }

    /// On a smooth, well-registered scene the lowpass is close to the
    /// upsampled band, so modulation gains hover near 1 and the hpm result
    /// stays close to unit-gain fusion.
    #[test]
    fn hpm_approaches_unit_gain_when_lowpass_tracks_band() {
        let ratio = 2;
        let n = 32;
        let truth: Vec<f32> = (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as f64, (i % n) as f64);
                (5.0 + (2.0 * std::f64::consts::PI * r / n as f64).sin()
                    + (2.0 * std::f64::consts::PI * c / n as f64).cos()) as f32
            })
            .collect();
        let pan = PanImage::from_data(n, n, truth.clone()).unwrap();
        let model = model_with_gain(1, ratio, 0.3);
        let truth_cube = HyperCube::from_data(1, n, n, truth).unwrap();
        let hs = crate::preprocess::degrade_cube(&truth_cube, &model, 0).unwrap();

        let (f_unit, _) = mtfglp_sharpen(&hs, &pan, &model, GainMode::Unit).unwrap();
        let (f_hpm, art) = mtfglp_sharpen(&hs, &pan, &model, GainMode::Hpm).unwrap();
        assert!(matches!(art.gains, AppliedGains::PerPixel(_)));

        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for (a, b) in f_unit.data().iter().zip(f_hpm.data().iter()) {
            diff += (*a as f64 - *b as f64).powi(2);
            norm += (*a as f64).powi(2);
        }
        let rel = (diff / norm).sqrt();
        assert!(rel < 0.02, "hpm deviates from unit gain by {rel}");
    }

    #[test]
    fn constant_band_regression_is_rejected_but_unit_mode_passes() {
        let ratio = 2;
        let hs = HyperCube::from_data(1, 4, 4, vec![2.0; 16]).unwrap();
        let mut s = 3u64;
        let pan = PanImage::from_data(8, 8, (0..64).map(|_| lcg(&mut s)).collect()).unwrap();
        let model = model_with_gain(1, ratio, 0.3);
        // Constant band: matched pan is the constant mean, lowpass constant.
        let err = mtfglp_sharpen(&hs, &pan, &model, GainMode::Regression).unwrap_err();
        assert!(matches!(err, crate::Error::Numerical(_)), "{err}");
        let (fused, _) = mtfglp_sharpen(&hs, &pan, &model, GainMode::Unit).unwrap();
        for v in fused.band(0) {
            assert!((v - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn dimension_checks_and_band_range() {
        let hs = HyperCube::zeros(2, 4, 4).unwrap();
        let model = model_with_gain(2, 2, 0.3);
        let pan_bad = PanImage::zeros(8, 10).unwrap();
        assert!(mtfglp_sharpen(&hs, &pan_bad, &model, GainMode::Unit).is_err());
        let pan = PanImage::zeros(8, 8).unwrap();
        assert!(glp_lowpass(&pan, &model, 2).is_err());
        let pan_odd = PanImage::zeros(9, 8).unwrap();
        assert!(glp_lowpass(&pan_odd, &model, 0).is_err());
    }
}
