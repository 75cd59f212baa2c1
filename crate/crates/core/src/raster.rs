//! In-memory raster model: hyperspectral cubes, panchromatic planes, and
//! stretched 8-bit composites.
//!
//! Cubes store band-major (band, row, column) 32-bit samples; all arithmetic
//! elsewhere in the crate runs in f64 and converts back at the boundaries.
//! Constructors validate shape, finiteness, and metadata so the rest of the
//! crate can assume well-formed rasters.

use crate::error::{invalid, Error, Result};

/// A hyperspectral cube, band-major: `data[band * rows * cols + row * cols + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    bands: usize,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    /// Band-center wavelengths in nanometers, strictly increasing when present.
    pub wavelengths_nm: Option<Vec<f64>>,
    /// Ground sample distance in meters.
    pub gsd_m: f64,
    /// Optional per-band labels carried through I/O.
    pub band_names: Option<Vec<String>>,
}

impl HyperCube {
    /// Build a cube from band-major samples. Fails on empty dimensions,
    /// length mismatch, or non-finite values.
    pub fn from_data(bands: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if bands == 0 || rows == 0 || cols == 0 {
            return invalid(format!(
                "cube dimensions must be positive, got {bands} x {rows} x {cols}"
            ));
        }
        if data.len() != bands * rows * cols {
            return invalid(format!(
                "cube payload holds {} samples, expected {}",
                data.len(),
                bands * rows * cols
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("cube contains a non-finite sample at offset {i}"));
        }
        Ok(HyperCube {
            bands,
            rows,
            cols,
            data,
            wavelengths_nm: None,
            gsd_m: 1.0,
            band_names: None,
        })
    }

    /// All-zero cube with unit GSD and no wavelength table.
    pub fn zeros(bands: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::from_data(bands, rows, cols, vec![0.0; bands * rows * cols])
    }

    /// Attach a wavelength table (one entry per band, strictly increasing).
    pub fn with_wavelengths(mut self, wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() != self.bands {
            return invalid(format!(
                "wavelength table holds {} entries for {} bands",
                wavelengths_nm.len(),
                self.bands
            ));
        }
        if wavelengths_nm.iter().any(|w| !w.is_finite()) {
            return invalid("wavelength table contains a non-finite entry");
        }
        if wavelengths_nm.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("wavelengths must be strictly increasing");
        }
        self.wavelengths_nm = Some(wavelengths_nm);
        Ok(self)
    }

    /// Set the ground sample distance (meters, positive).
    pub fn with_gsd(mut self, gsd_m: f64) -> Result<Self> {
        if !(gsd_m.is_finite() && gsd_m > 0.0) {
            return invalid(format!("gsd must be positive, got {gsd_m}"));
        }
        self.gsd_m = gsd_m;
        Ok(self)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// (bands, rows, cols)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bands, self.rows, self.cols)
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// One band as a row-major plane.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let n = self.rows * self.cols;
        &mut self.data[band * n..(band + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.rows + row) * self.cols + col]
    }

    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f32) {
        self.data[(band * self.rows + row) * self.cols + col] = value;
    }

    /// Spectrum at one pixel, f64 for downstream math.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        let n = self.rows * self.cols;
        let off = row * self.cols + col;
        (0..self.bands)
            .map(|b| self.data[b * n + off] as f64)
            .collect()
    }

    /// Raw band-major payload.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One band widened to f64.
    pub fn band_f64(&self, band: usize) -> Vec<f64> {
        self.band(band).iter().map(|&v| v as f64).collect()
    }

    /// Carry metadata (wavelengths, GSD, names) onto a derived cube of the
    /// same band count.
    pub(crate) fn metadata_like(mut self, src: &HyperCube) -> Self {
        if src.bands == self.bands {
            self.wavelengths_nm = src.wavelengths_nm.clone();
            self.band_names = src.band_names.clone();
        }
        self.gsd_m = src.gsd_m;
        self
    }
}

/// A single-band high-resolution panchromatic image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PanImage {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    /// Ground sample distance in meters.
    pub gsd_m: f64,
}

impl PanImage {
    pub fn from_data(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!(
                "pan dimensions must be positive, got {rows} x {cols}"
            ));
        }
        if data.len() != rows * cols {
            return invalid(format!(
                "pan payload holds {} samples, expected {}",
                data.len(),
                rows * cols
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "pan image contains a non-finite sample at offset {i}"
            ));
        }
        Ok(PanImage {
            rows,
            cols,
            data,
            gsd_m: 1.0,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_data(rows, cols, vec![0.0; rows * cols])
    }

    pub fn with_gsd(mut self, gsd_m: f64) -> Result<Self> {
        if !(gsd_m.is_finite() && gsd_m > 0.0) {
            return invalid(format!("gsd must be positive, got {gsd_m}"));
        }
        self.gsd_m = gsd_m;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// How one composite channel was produced and stretched.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProvenance {
    /// Human-readable source, e.g. `band 12` or `pc 1`.
    pub label: String,
    /// Requested percentile pair.
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    /// Data values the percentiles landed on.
    pub value_lo: f64,
    pub value_hi: f64,
    /// True when the channel had no usable spread and was rendered black.
    pub degenerate: bool,
}

/// An 8-bit RGB rendering with per-channel stretch provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbComposite {
    rows: usize,
    cols: usize,
    /// Interleaved RGB, `3 * rows * cols` bytes.
    pixels: Vec<u8>,
    pub channels: [ChannelProvenance; 3],
}

impl RgbComposite {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Interleaved RGB bytes, row-major.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb_at(&self, row: usize, col: usize) -> [u8; 3] {
        let off = 3 * (row * self.cols + col);
        [self.pixels[off], self.pixels[off + 1], self.pixels[off + 2]]
    }

    /// Save as an 8-bit RGB PNG.
    pub fn write_png(&self, path: &std::path::Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.cols as u32,
            self.rows as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
    }
}

/// Linear-interpolation percentile of an ascending-sorted slice, `q` in [0, 100].
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let t = pos - lo as f64;
        sorted[lo] + t * (sorted[hi] - sorted[lo])
    }
}

/// Threshold below which a channel's stretch range counts as no spread.
const DEGENERATE_SPREAD: f64 = 1e-12;

fn stretch_channel(
    plane: &[f32],
    label: &str,
    lo_pct: f64,
    hi_pct: f64,
) -> (Vec<u8>, ChannelProvenance) {
    let mut sorted: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = percentile_sorted(&sorted, lo_pct);
    let hi = percentile_sorted(&sorted, hi_pct);
    let spread = hi - lo;
    let degenerate = !(spread.is_finite() && spread > DEGENERATE_SPREAD * lo.abs().max(1.0));
    let bytes = if degenerate {
        vec![0u8; plane.len()]
    } else {
        plane
            .iter()
            .map(|&v| {
                let t = (v as f64 - lo) / spread;
                (t * 255.0).round().clamp(0.0, 255.0) as u8
            })
            .collect()
    };
    let provenance = ChannelProvenance {
        label: label.to_string(),
        percentile_lo: lo_pct,
        percentile_hi: hi_pct,
        value_lo: lo,
        value_hi: hi,
        degenerate,
    };
    (bytes, provenance)
}

/// Render three planes into an 8-bit RGB composite. Each channel is stretched
/// independently from its `[lo, hi]` percentile values to `[0, 255]`; values
/// outside the range clip. Channels without spread render black and are
/// flagged in the provenance.
pub fn render_composite_planes(
    planes: [&[f32]; 3],
    rows: usize,
    cols: usize,
    stretch: (f64, f64),
    labels: [&str; 3],
) -> Result<RgbComposite> {
    let (lo_pct, hi_pct) = stretch;
    if rows == 0 || cols == 0 {
        return invalid("composite dimensions must be positive");
    }
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return invalid(format!(
            "stretch percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        ));
    }
    let n = rows * cols;
    for plane in planes {
        if plane.len() != n {
            return invalid(format!(
                "composite plane holds {} samples, expected {n}",
                plane.len()
            ));
        }
    }
    let mut rendered = Vec::with_capacity(3);
    for (plane, label) in planes.iter().zip(labels.iter()) {
        rendered.push(stretch_channel(plane, label, lo_pct, hi_pct));
    }
    let mut pixels = vec![0u8; 3 * n];
    for (c, (bytes, _)) in rendered.iter().enumerate() {
        for (i, &v) in bytes.iter().enumerate() {
            pixels[3 * i + c] = v;
        }
    }
    let mut it = rendered.into_iter().map(|(_, p)| p);
    let channels = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    Ok(RgbComposite {
        rows,
        cols,
        pixels,
        channels,
    })
}

/// Render three cube bands as an RGB composite (see
/// [`render_composite_planes`] for stretch semantics).
pub fn render_composite(
    cube: &HyperCube,
    bands: [usize; 3],
    stretch: (f64, f64),
) -> Result<RgbComposite> {
    for &b in &bands {
        if b >= cube.bands() {
            return invalid(format!(
                "composite band {b} out of range for {}-band cube",
                cube.bands()
            ));
        }
    }
    let labels = bands.map(|b| format!("band {b}"));
    render_composite_planes(
        [
            cube.band(bands[0]),
            cube.band(bands[1]),
            cube.band(bands[2]),
        ],
        cube.rows(),
        cube.cols(),
        stretch,
        [&labels[0], &labels[1], &labels[2]],
    )
}
