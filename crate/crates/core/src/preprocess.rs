//! Sensor simulation and input conditioning.
//!
//! A [`SensorModel`] bundles everything the fusion methods need to know about
//! the imaging chain: the spectral response that maps a scene onto the
//! panchromatic channel, the spatial PSF that blurs the scene before the
//! hyperspectral sensor samples it, the decimation ratio between the two
//! grids, and the per-band Gaussian MTF gain at Nyquist used to build
//! band-matched low-pass filters.
//!
//! Spatial conventions, shared by every operator in the crate: convolution is
//! circular with a centered kernel, and decimation samples at integer phase
//! `p`, i.e. output `(i, j)` reads the filtered plane at `(ratio*i + p,
//! ratio*j + p)`. Expansion back to the fine grid is separable cubic
//! interpolation; `upsample` places low-resolution samples at block centers
//! (offset `(ratio-1)/2`, reflective boundary), while `upsample_at` exposes
//! the offset and boundary so callers can match the phase-0 decimation grid
//! exactly — the registration every fusion method here relies on.

use crate::error::{invalid, numerical, Result};
use crate::fft::{kernel_otf, Fft2};
use crate::raster::{HyperCube, PanImage};

/// Default Gaussian MTF gain at Nyquist for hyperspectral bands.
pub const DEFAULT_HS_MTF_GAIN: f64 = 0.3;
/// Default Gaussian MTF gain at Nyquist for panchromatic-side filtering.
pub const DEFAULT_PAN_MTF_GAIN: f64 = 0.5;

/// Imaging-chain description relating the hyperspectral and panchromatic grids.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    response: Vec<f64>,
    psf: Vec<f64>,
    psf_size: usize,
    ratio: usize,
    mtf_gain_nyquist: Vec<f64>,
}

impl SensorModel {
    /// Validate and assemble a model. The spectral response and the PSF must
    /// be non-negative and sum to 1 (within 1e-9); the PSF side must be odd;
    /// gains live strictly inside (0, 1), one per band.
    pub fn new(
        response: Vec<f64>,
        psf: Vec<f64>,
        psf_size: usize,
        ratio: usize,
        mtf_gain_nyquist: Vec<f64>,
    ) -> Result<Self> {
        if ratio < 2 {
            return invalid(format!("decimation ratio must be at least 2, got {ratio}"));
        }
        if response.is_empty() {
            return invalid("spectral response must cover at least one band");
        }
        check_weights(&response, "spectral response")?;
        if psf_size == 0 || psf_size % 2 == 0 || psf.len() != psf_size * psf_size {
            return invalid(format!(
                "psf must be square with odd side, got side {psf_size} and {} taps",
                psf.len()
            ));
        }
        check_weights(&psf, "psf")?;
        if mtf_gain_nyquist.len() != response.len() {
            return invalid(format!(
                "{} MTF gains supplied for {} bands",
                mtf_gain_nyquist.len(),
                response.len()
            ));
        }
        if mtf_gain_nyquist
            .iter()
            .any(|&g| !(g.is_finite() && g > 0.0 && g < 1.0))
        {
            return invalid("MTF gains must lie strictly inside (0, 1)");
        }
        Ok(SensorModel {
            response,
            psf,
            psf_size,
            ratio,
            mtf_gain_nyquist,
        })
    }

    /// Gaussian model: uniform spectral response, PSF built from the given
    /// Nyquist gain, and the same gain for every band.
    pub fn gaussian(bands: usize, ratio: usize, gain_nyquist: f64) -> Result<Self> {
        if bands == 0 {
            return invalid("model needs at least one band");
        }
        let (psf, size) = mtf_kernel_auto(gain_nyquist, ratio)?;
        SensorModel::new(
            vec![1.0 / bands as f64; bands],
            psf,
            size,
            ratio,
            vec![gain_nyquist; bands],
        )
    }

    /// Replace the spectral response (same validation as [`SensorModel::new`]).
    pub fn with_response(mut self, response: Vec<f64>) -> Result<Self> {
        if response.len() != self.response.len() {
            return invalid(format!(
                "response holds {} entries for {} bands",
                response.len(),
                self.response.len()
            ));
        }
        check_weights(&response, "spectral response")?;
        self.response = response;
        Ok(self)
    }

    pub fn bands(&self) -> usize {
        self.response.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn psf(&self) -> &[f64] {
        &self.psf
    }

    pub fn psf_size(&self) -> usize {
        self.psf_size
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn mtf_gain_nyquist(&self) -> &[f64] {
        &self.mtf_gain_nyquist
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return invalid(format!("{what} entries must be finite and non-negative"));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return invalid(format!("{what} must sum to 1, got {sum}"));
    }
    Ok(())
}

/// Gaussian blur kernel whose transfer function hits `gain_nyquist` at the
/// decimated grid's Nyquist frequency `1/(2 ratio)`:
/// `sigma = ratio * sqrt(-2 ln gain) / pi`, sampled on an odd `size`-square
/// grid and normalized to sum 1.
pub fn mtf_kernel(gain_nyquist: f64, ratio: usize, size: usize) -> Result<Vec<f64>> {
    if !(gain_nyquist.is_finite() && gain_nyquist > 0.0 && gain_nyquist < 1.0) {
        return invalid(format!(
            "MTF gain must lie strictly inside (0, 1), got {gain_nyquist}"
        ));
    }
    if ratio < 2 {
        return invalid(format!("decimation ratio must be at least 2, got {ratio}"));
    }
    if size == 0 || size % 2 == 0 {
        return invalid(format!("kernel side must be odd, got {size}"));
    }
    let sigma = ratio as f64 * (-2.0 * gain_nyquist.ln()).sqrt() / std::f64::consts::PI;
    let half = (size / 2) as isize;
    let mut kernel = Vec::with_capacity(size * size);
    let two_sigma2 = 2.0 * sigma * sigma;
    for i in -half..=half {
        for j in -half..=half {
            let d2 = (i * i + j * j) as f64;
            kernel.push((-d2 / two_sigma2).exp());
        }
    }
    let sum: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    Ok(kernel)
}

/// [`mtf_kernel`] with an automatic side length: wide enough to cover four
/// standard deviations and never narrower than `2 ratio + 1`.
pub fn mtf_kernel_auto(gain_nyquist: f64, ratio: usize) -> Result<(Vec<f64>, usize)> {
    if !(gain_nyquist.is_finite() && gain_nyquist > 0.0 && gain_nyquist < 1.0) {
        return invalid(format!(
            "MTF gain must lie strictly inside (0, 1), got {gain_nyquist}"
        ));
    }
    let sigma = ratio as f64 * (-2.0 * gain_nyquist.ln()).sqrt() / std::f64::consts::PI;
    let half = ((4.0 * sigma).ceil() as usize).max(ratio);
    let size = 2 * half + 1;
    Ok((mtf_kernel(gain_nyquist, ratio, size)?, size))
}

fn check_degrade_dims(rows: usize, cols: usize, ratio: usize, phase: usize) -> Result<()> {
    if rows % ratio != 0 || cols % ratio != 0 {
        return invalid(format!(
            "raster {rows} x {cols} is not divisible by the decimation ratio {ratio}"
        ));
    }
    if phase >= ratio {
        return invalid(format!(
            "decimation phase {phase} must be below the ratio {ratio}"
        ));
    }
    Ok(())
}

fn degrade_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    ratio: usize,
    phase: usize,
    filtered: Option<&[f64]>,
) -> Vec<f32> {
    let (out_rows, out_cols) = (rows / ratio, cols / ratio);
    let src = filtered.unwrap_or(plane);
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for i in 0..out_rows {
        let r = ratio * i + phase;
        for j in 0..out_cols {
            let c = ratio * j + phase;
            out.push(src[r * cols + c] as f32);
        }
    }
    out
}

/// Blur a cube with the model PSF (circular convolution) and decimate by the
/// model ratio at integer `phase`. Output metadata: wavelengths carried over,
/// GSD multiplied by the ratio.
pub fn degrade_cube(cube: &HyperCube, model: &SensorModel, phase: usize) -> Result<HyperCube> {
    if cube.bands() != model.bands() {
        return invalid(format!(
            "cube has {} bands, model describes {}",
            cube.bands(),
            model.bands()
        ));
    }
    let (rows, cols) = (cube.rows(), cube.cols());
    let ratio = model.ratio();
    check_degrade_dims(rows, cols, ratio, phase)?;
    let fft = (model.psf_size() > 1).then(|| Fft2::new(rows, cols));
    let otf = match &fft {
        Some(fft) => Some(kernel_otf(model.psf(), model.psf_size(), fft)?),
        None => None,
    };
    let mut data = Vec::with_capacity(cube.bands() * (rows / ratio) * (cols / ratio));
    for b in 0..cube.bands() {
        let plane = cube.band_f64(b);
        let filtered = fft
            .as_ref()
            .map(|fft| fft.convolve(&plane, otf.as_ref().unwrap()));
        data.extend(degrade_plane(
            &plane,
            rows,
            cols,
            ratio,
            phase,
            filtered.as_deref(),
        ));
    }
    let out = HyperCube::from_data(cube.bands(), rows / ratio, cols / ratio, data)
        .map_err(|e| e.with_context("degraded cube"))?
        .metadata_like(cube);
    out.with_gsd(cube.gsd_m * ratio as f64)
}

/// [`degrade_cube`] for a panchromatic image.
pub fn degrade_pan(pan: &PanImage, model: &SensorModel, phase: usize) -> Result<PanImage> {
    degrade_pan_with_kernel(pan, model.psf(), model.psf_size(), model.ratio(), phase)
}

/// Degrade a pan image with an explicit kernel (used when the panchromatic
/// side carries its own MTF estimate, e.g. [`DEFAULT_PAN_MTF_GAIN`]).
pub fn degrade_pan_with_kernel(
    pan: &PanImage,
    kernel: &[f64],
    kernel_size: usize,
    ratio: usize,
    phase: usize,
) -> Result<PanImage> {
    let (rows, cols) = (pan.rows(), pan.cols());
    if ratio < 2 {
        return invalid(format!("decimation ratio must be at least 2, got {ratio}"));
    }
    check_degrade_dims(rows, cols, ratio, phase)?;
    let plane = pan.to_f64();
    let filtered = if kernel_size > 1 {
        let fft = Fft2::new(rows, cols);
        let otf = kernel_otf(kernel, kernel_size, &fft)?;
        Some(fft.convolve(&plane, &otf))
    } else {
        None
    };
    let data = degrade_plane(&plane, rows, cols, ratio, phase, filtered.as_deref());
    PanImage::from_data(rows / ratio, cols / ratio, data)?.with_gsd(pan.gsd_m * ratio as f64)
}

/// Boundary handling for interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Half-sample symmetric reflection (edge sample repeats).
    Reflect,
    /// Wraparound, matching the circular convolution used by `degrade`.
    Periodic,
}

fn fold(i: isize, len: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Periodic => i.rem_euclid(len as isize) as usize,
        Boundary::Reflect => {
            let period = 2 * len as isize;
            let mut m = i.rem_euclid(period);
            if m >= len as isize {
                m = period - 1 - m;
            }
            m as usize
        }
    }
}

/// Keys cubic convolution kernel, a = -1/2 (reproduces affine signals).
fn keys(d: f64) -> f64 {
    let d = d.abs();
    if d <= 1.0 {
        (1.5 * d - 2.5) * d * d + 1.0
    } else if d < 2.0 {
        ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0
    } else {
        0.0
    }
}

/// Per-output-phase interpolation taps for one axis.
struct AxisTaps {
    /// For output index `y = ratio*q + s`: source base index `q + shift[s]`,
    /// taps applied to `base - 1 ..= base + 2`.
    shift: Vec<isize>,
    weights: Vec<[f64; 4]>,
}

fn axis_taps(ratio: usize, offset: f64) -> AxisTaps {
    let mut shift = Vec::with_capacity(ratio);
    let mut weights = Vec::with_capacity(ratio);
    for s in 0..ratio {
        let u = (s as f64 - offset) / ratio as f64;
        let base = u.floor();
        let t = u - base;
        shift.push(base as isize);
        weights.push([keys(t + 1.0), keys(t), keys(1.0 - t), keys(2.0 - t)]);
    }
    AxisTaps { shift, weights }
}

fn upsample_axis(
    src: &[f64],
    rows: usize,
    cols: usize,
    ratio: usize,
    taps: &AxisTaps,
    boundary: Boundary,
) -> Vec<f64> {
    // Expands the column axis; callers transpose to reuse it for rows.
    let out_cols = cols * ratio;
    let mut out = vec![0.0f64; rows * out_cols];
    for r in 0..rows {
        let line = &src[r * cols..(r + 1) * cols];
        let dst = &mut out[r * out_cols..(r + 1) * out_cols];
        for q in 0..cols {
            for s in 0..ratio {
                let base = q as isize + taps.shift[s];
                let w = &taps.weights[s];
                let mut acc = 0.0;
                for (m, &wm) in w.iter().enumerate() {
                    let idx = fold(base - 1 + m as isize, cols, boundary);
                    acc += wm * line[idx];
                }
                dst[q * ratio + s] = acc;
            }
        }
    }
    out
}

fn transpose_f64(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn upsample_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    ratio: usize,
    taps: &AxisTaps,
    boundary: Boundary,
) -> Vec<f64> {
    let wide = upsample_axis(plane, rows, cols, ratio, taps, boundary);
    let t = transpose_f64(&wide, rows, cols * ratio);
    let tall = upsample_axis(&t, cols * ratio, rows, ratio, taps, boundary);
    transpose_f64(&tall, cols * ratio, rows * ratio)
}

/// Separable cubic expansion by `ratio` with an explicit sub-pixel `offset`:
/// output pixel `y` interpolates the source at `(y - offset) / ratio`. Offset
/// 0 with [`Boundary::Periodic`] reproduces source samples exactly at
/// positions `ratio * i`, matching phase-0 decimation.
pub fn upsample_cube_at(
    cube: &HyperCube,
    ratio: usize,
    offset: f64,
    boundary: Boundary,
) -> Result<HyperCube> {
    if ratio == 0 {
        return invalid("expansion ratio must be positive");
    }
    if !offset.is_finite() || offset.abs() >= ratio as f64 {
        return invalid(format!(
            "interpolation offset {offset} must be finite and smaller than the ratio {ratio}"
        ));
    }
    let (rows, cols) = (cube.rows(), cube.cols());
    let taps = axis_taps(ratio, offset);
    let mut data = Vec::with_capacity(cube.bands() * rows * ratio * cols * ratio);
    for b in 0..cube.bands() {
        let plane = cube.band_f64(b);
        let up = upsample_plane(&plane, rows, cols, ratio, &taps, boundary);
        data.extend(up.into_iter().map(|v| v as f32));
    }
    let out = HyperCube::from_data(cube.bands(), rows * ratio, cols * ratio, data)
        .map_err(|e| e.with_context("upsampled cube"))?
        .metadata_like(cube);
    out.with_gsd(cube.gsd_m / ratio as f64)
}

/// Block-centered cubic expansion: offset `(ratio - 1) / 2`, reflective
/// boundary. Preserves affine ramps away from the borders.
pub fn upsample_cube(cube: &HyperCube, ratio: usize) -> Result<HyperCube> {
    upsample_cube_at(cube, ratio, (ratio as f64 - 1.0) / 2.0, Boundary::Reflect)
}

/// [`upsample_cube_at`] for a panchromatic image.
pub fn upsample_pan_at(
    pan: &PanImage,
    ratio: usize,
    offset: f64,
    boundary: Boundary,
) -> Result<PanImage> {
    if ratio == 0 {
        return invalid("expansion ratio must be positive");
    }
    if !offset.is_finite() || offset.abs() >= ratio as f64 {
        return invalid(format!(
            "interpolation offset {offset} must be finite and smaller than the ratio {ratio}"
        ));
    }
    let taps = axis_taps(ratio, offset);
    let up = upsample_plane(
        &pan.to_f64(),
        pan.rows(),
        pan.cols(),
        ratio,
        &taps,
        boundary,
    );
    PanImage::from_data(
        pan.rows() * ratio,
        pan.cols() * ratio,
        up.into_iter().map(|v| v as f32).collect(),
    )?
    .with_gsd(pan.gsd_m / ratio as f64)
}

/// Block-centered cubic expansion of a panchromatic image.
pub fn upsample_pan(pan: &PanImage, ratio: usize) -> Result<PanImage> {
    upsample_pan_at(pan, ratio, (ratio as f64 - 1.0) / 2.0, Boundary::Reflect)
}

/// Expand one f64 plane; fast path for the sharpeners, which stay in f64
/// end to end instead of round-tripping through f32 cubes.
pub(crate) fn upsample_plane_f64(
    plane: &[f64],
    rows: usize,
    cols: usize,
    ratio: usize,
    offset: f64,
    boundary: Boundary,
) -> Vec<f64> {
    let taps = axis_taps(ratio, offset);
    upsample_plane(plane, rows, cols, ratio, &taps, boundary)
}

/// Decimate one f64 plane at an integer phase; companion to
/// [`upsample_plane_f64`].
pub(crate) fn decimate_plane_f64(
    plane: &[f64],
    rows: usize,
    cols: usize,
    ratio: usize,
    phase: usize,
) -> Vec<f64> {
    let (out_rows, out_cols) = (rows / ratio, cols / ratio);
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for i in 0..out_rows {
        let r = ratio * i + phase;
        for j in 0..out_cols {
            out.push(plane[r * cols + ratio * j + phase]);
        }
    }
    out
}

/// Why a band was kept or dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandReason {
    Kept,
    /// Wavelength falls inside a configured absorption interval.
    Atmospheric,
    /// Estimated SNR below the screening threshold.
    LowSnr,
}

/// Outcome of band screening.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMask {
    pub keep: Vec<bool>,
    pub reasons: Vec<BandReason>,
    /// Block-median SNR estimate; `None` for bands dropped by wavelength.
    pub snr: Vec<Option<f64>>,
}

impl BandMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn dropped(&self, reason: BandReason) -> usize {
        self.reasons.iter().filter(|&&r| r == reason).count()
    }
}

/// Side of the square blocks used by the SNR estimator.
const SNR_BLOCK: usize = 8;

/// Median across non-overlapping 8x8 blocks of (block mean / block sample
/// std). Rasters smaller than one block use a single whole-image block;
/// constant blocks count as noiseless (infinite SNR).
fn band_snr(plane: &[f32], rows: usize, cols: usize) -> f64 {
    let (brows, bcols) = (rows / SNR_BLOCK, cols / SNR_BLOCK);
    let mut ratios = Vec::new();
    let mut push_block = |r0: usize, c0: usize, h: usize, w: usize| {
        let n = (h * w) as f64;
        let mut sum = 0.0f64;
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                sum += plane[r * cols + c] as f64;
            }
        }
        let mean = sum / n;
        let mut ss = 0.0f64;
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                let d = plane[r * cols + c] as f64 - mean;
                ss += d * d;
            }
        }
        let std = if n > 1.0 {
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        ratios.push(if std > 0.0 { mean / std } else { f64::INFINITY });
    };
    if brows == 0 || bcols == 0 {
        push_block(0, 0, rows, cols);
    } else {
        for br in 0..brows {
            for bc in 0..bcols {
                push_block(br * SNR_BLOCK, bc * SNR_BLOCK, SNR_BLOCK, SNR_BLOCK);
            }
        }
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = ratios.len() / 2;
    if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        0.5 * (ratios[mid - 1] + ratios[mid])
    }
}

/// Tag bands for removal: first by wavelength against absorption intervals
/// (`[lo, hi]` nm, inclusive; order-independent), then by block-median SNR
/// against `snr_threshold`. Errors if every band would be dropped, or if
/// intervals are given for a cube without wavelengths.
pub fn screen_bands(
    cube: &HyperCube,
    intervals_nm: &[(f64, f64)],
    snr_threshold: f64,
) -> Result<BandMask> {
    if !snr_threshold.is_finite() {
        return invalid("SNR threshold must be finite");
    }
    for &(lo, hi) in intervals_nm {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return invalid(format!("malformed wavelength interval ({lo}, {hi})"));
        }
    }
    let wavelengths = match (&cube.wavelengths_nm, intervals_nm.is_empty()) {
        (Some(w), _) => Some(w.as_slice()),
        (None, true) => None,
        (None, false) => {
            return invalid("wavelength intervals given, but the cube has no wavelength table")
        }
    };
    let mut keep = Vec::with_capacity(cube.bands());
    let mut reasons = Vec::with_capacity(cube.bands());
    let mut snrs = Vec::with_capacity(cube.bands());
    for b in 0..cube.bands() {
        let atmospheric = wavelengths
            .map(|w| {
                intervals_nm
                    .iter()
                    .any(|&(lo, hi)| w[b] >= lo && w[b] <= hi)
            })
            .unwrap_or(false);
        if atmospheric {
            keep.push(false);
            reasons.push(BandReason::Atmospheric);
            snrs.push(None);
            continue;
        }
        let snr = band_snr(cube.band(b), cube.rows(), cube.cols());
        snrs.push(Some(snr));
        if snr < snr_threshold {
            keep.push(false);
            reasons.push(BandReason::LowSnr);
        } else {
            keep.push(true);
            reasons.push(BandReason::Kept);
        }
    }
    if !keep.iter().any(|&k| k) {
        return numerical("band screening dropped every band");
    }
    Ok(BandMask {
        keep,
        reasons,
        snr: snrs,
    })
}

/// Drop masked bands, carrying wavelengths and band names through.
pub fn apply_band_mask(cube: &HyperCube, mask: &BandMask) -> Result<HyperCube> {
    if mask.keep.len() != cube.bands() {
        return invalid(format!(
            "mask covers {} bands, cube has {}",
            mask.keep.len(),
            cube.bands()
        ));
    }
    let kept: Vec<usize> = (0..cube.bands()).filter(|&b| mask.keep[b]).collect();
    if kept.is_empty() {
        return numerical("band mask drops every band");
    }
    let n = cube.pixels();
    let mut data = Vec::with_capacity(kept.len() * n);
    for &b in &kept {
        data.extend_from_slice(cube.band(b));
    }
    let mut out =
        HyperCube::from_data(kept.len(), cube.rows(), cube.cols(), data)?.with_gsd(cube.gsd_m)?;
    if let Some(w) = &cube.wavelengths_nm {
        out = out.with_wavelengths(kept.iter().map(|&b| w[b]).collect())?;
    }
    if let Some(names) = &cube.band_names {
        out.band_names = Some(kept.iter().map(|&b| names[b].clone()).collect());
    }
    Ok(out)
}
