//! Synthetic scene generation for testing and demos.
//!
//! Scenes are linear mixtures of a few smooth endmember spectra with
//! spatially smooth abundance fields, plus one planted pure patch per
//! material so subspace identification has exact vertices to find. The
//! matching hyperspectral/panchromatic pair is derived from the truth cube
//! with the same sensor model the fusion methods later receive, which makes
//! reduced-resolution evaluation an honest round trip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::fft::{kernel_otf, Fft2};
use crate::preprocess::{degrade_cube, upsample_plane_f64, Boundary, SensorModel};
use crate::raster::{percentile_sorted, HyperCube, PanImage};

/// A generated scene with its observation pair and generating model.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Ground truth at pan resolution.
    pub truth: HyperCube,
    /// Truth degraded by the model (plus noise when requested).
    pub hs: HyperCube,
    /// Spectral response applied to the truth (plus noise when requested).
    pub pan: PanImage,
    pub model: SensorModel,
    /// Planted endmember spectra (each rounded through f32 so pure pixels
    /// reproduce them exactly).
    pub endmembers: Vec<Vec<f64>>,
    /// Top-left corner of each material's pure patch (pan-grid coordinates);
    /// patches are `ratio x ratio` and aligned to the decimation grid.
    pub pure_patches: Vec<(usize, usize)>,
    pub seed: u64,
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Smooth positive spectrum: a low baseline plus a few Gaussian bumps,
/// rounded through f32.
fn random_spectrum(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut curve = vec![0.15f64; bands];
    for _ in 0..3 {
        let center = rng.random::<f64>() * bands as f64;
        let width = bands as f64 * (0.08 + 0.12 * rng.random::<f64>());
        let amp = 0.3 + 0.7 * rng.random::<f64>();
        for (k, v) in curve.iter_mut().enumerate() {
            let d = (k as f64 - center) / width;
            *v += amp * (-0.5 * d * d).exp();
        }
    }
    curve.into_iter().map(|v| (v as f32) as f64).collect()
}

/// Smooth field at pan resolution: white noise on the coarse grid, blurred,
/// then cubically expanded.
fn smooth_field(
    rows: usize,
    cols: usize,
    ratio: usize,
    fft: &Fft2,
    otf: &[num_complex::Complex<f64>],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (lr, lc) = (rows / ratio, cols / ratio);
    let noise: Vec<f64> = (0..lr * lc).map(|_| rng.random::<f64>()).collect();
    let blurred = fft.convolve(&noise, otf);
    upsample_plane_f64(&blurred, lr, lc, ratio, 0.0, Boundary::Periodic)
}

/// Build a synthetic scene. `rows`/`cols` are pan-grid dimensions and must
/// be divisible by `ratio`; the hs pair is `ratio` times smaller. With
/// `noise_std > 0`, Gaussian noise of that standard deviation is added to
/// both observations (never to the truth).
pub fn make_scene(
    rows: usize,
    cols: usize,
    bands: usize,
    endmembers: usize,
    ratio: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    if ratio < 2 {
        return invalid(format!("decimation ratio must be at least 2, got {ratio}"));
    }
    if rows % ratio != 0 || cols % ratio != 0 {
        return invalid(format!(
            "scene {rows} x {cols} must be divisible by the ratio {ratio}"
        ));
    }
    if bands < 2 {
        return invalid("scene needs at least two bands");
    }
    if endmembers < 2 || endmembers > bands {
        return invalid(format!(
            "endmember count {endmembers} must lie in 2..=bands ({bands})"
        ));
    }
    let (lr, lc) = (rows / ratio, cols / ratio);
    if lr.min(lc) < endmembers + 1 {
        return invalid(format!(
            "hs grid {lr} x {lc} too small to plant {endmembers} disjoint pure patches"
        ));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return invalid(format!("noise level must be non-negative, got {noise_std}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f64>> = (0..endmembers)
        .map(|_| random_spectrum(bands, &mut rng))
        .collect();

    // Smooth, rectified abundance fields.
    let fft_low = Fft2::new(lr, lc);
    let field_sigma = 1.5f64;
    let ksize = {
        let half = (3.0 * field_sigma).ceil() as usize;
        (2 * half + 1).min(if lr.min(lc) % 2 == 0 {
            lr.min(lc) - 1
        } else {
            lr.min(lc)
        })
    };
    let kernel: Vec<f64> = {
        let half = (ksize / 2) as isize;
        let mut k = Vec::with_capacity(ksize * ksize);
        for i in -half..=half {
            for j in -half..=half {
                k.push((-((i * i + j * j) as f64) / (2.0 * field_sigma * field_sigma)).exp());
            }
        }
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let otf = kernel_otf(&kernel, ksize, &fft_low)?;
    let mut fields: Vec<Vec<f64>> = (0..endmembers)
        .map(|_| smooth_field(rows, cols, ratio, &fft_low, &otf, &mut rng))
        .collect();

    // Rectify against a per-field percentile so each material has support
    // regions, not global presence.
    for field in fields.iter_mut() {
        let mut sorted = field.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pivot = percentile_sorted(&sorted, 55.0);
        for v in field.iter_mut() {
            *v = (*v - pivot).max(0.0);
        }
    }

    // Plant one pure ratio x ratio patch per material along the diagonal,
    // aligned to the decimation grid.
    let mut pure_patches = Vec::with_capacity(endmembers);
    for (j, _) in spectra.iter().enumerate() {
        let gi = ((j + 1) * lr) / (endmembers + 1);
        let gj = ((j + 1) * lc) / (endmembers + 1);
        let (r0, c0) = (gi * ratio, gj * ratio);
        pure_patches.push((r0, c0));
        for r in r0..r0 + ratio {
            for c in c0..c0 + ratio {
                let i = r * cols + c;
                for (jj, field) in fields.iter_mut().enumerate() {
                    field[i] = if jj == j { 1.0 } else { 0.0 };
                }
            }
        }
    }

    // Normalize to the simplex; empty pixels fall back to a uniform mix.
    let npix = rows * cols;
    let mut truth = vec![0.0f32; bands * npix];
    for i in 0..npix {
        let total: f64 = fields.iter().map(|f| f[i]).sum();
        for k in 0..bands {
            let mut v = 0.0f64;
            if total > 1e-9 {
                for (field, spectrum) in fields.iter().zip(spectra.iter()) {
                    v += field[i] / total * spectrum[k];
                }
            } else {
                for spectrum in spectra.iter() {
                    v += spectrum[k] / endmembers as f64;
                }
            }
            truth[k * npix + i] = v as f32;
        }
    }
    let wavelengths: Vec<f64> = (0..bands)
        .map(|k| 400.0 + 2100.0 * k as f64 / (bands - 1) as f64)
        .collect();
    let truth = HyperCube::from_data(bands, rows, cols, truth)?
        .with_wavelengths(wavelengths)?
        .with_gsd(5.0)?;

    // Observation model: smooth positive response, Gaussian MTF.
    let response = {
        let mut w: Vec<f64> = (0..bands).map(|_| 0.3 + rng.random::<f64>()).collect();
        for _ in 0..2 {
            let prev = w.clone();
            for k in 0..bands {
                let l = prev[(k + bands - 1) % bands];
                let r = prev[(k + 1) % bands];
                w[k] = 0.5 * prev[k] + 0.25 * (l + r);
            }
        }
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let model = SensorModel::gaussian(bands, ratio, 0.3)?.with_response(response)?;

    let mut hs = degrade_cube(&truth, &model, 0)?;
    let mut pan_data = vec![0.0f32; npix];
    for k in 0..bands {
        let w = model.response()[k];
        for (dst, v) in pan_data.iter_mut().zip(truth.band(k).iter()) {
            *dst += (w * *v as f64) as f32;
        }
    }
    if noise_std > 0.0 {
        for k in 0..bands {
            for v in hs.band_mut(k) {
                *v += (noise_std * randn(&mut rng)) as f32;
            }
        }
        for v in pan_data.iter_mut() {
            *v += (noise_std * randn(&mut rng)) as f32;
        }
    }
    let pan = PanImage::from_data(rows, cols, pan_data)?.with_gsd(5.0)?;

    Ok(SyntheticScene {
        truth,
        hs,
        pan,
        model,
        endmembers: spectra,
        pure_patches,
        seed,
    })
}
