//! Declarative run configuration (TOML).
//!
//! A config file describes one end-to-end run: where the input pair lives,
//! how the sensor is modeled, which bands to screen out, how to tile, which
//! methods to run, how to evaluate, and where outputs go. Everything except
//! the input and output locations has a sensible default.

use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{invalid, Result};
use crate::eval::Method;
use crate::hysure::HysureParams;
use crate::mtfglp::GainMode;
use crate::tiling::PadMode;

/// Wavelength intervals (nm) dominated by atmospheric water-vapor
/// absorption; bands inside them carry no usable surface signal.
pub const DEFAULT_ABSORPTION_INTERVALS_NM: [(f64, f64); 3] =
    [(1350.0, 1460.0), (1790.0, 1970.0), (2400.0, 20000.0)];

/// Default SNR threshold below which a band is dropped.
pub const DEFAULT_SNR_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsConfig {
    /// Hyperspectral raster (header path or its stem).
    pub hs: String,
    /// Panchromatic raster (header path or its stem).
    pub pan: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SensorMode {
    /// Gaussian PSF from `mtf_gain`, uniform spectral response.
    #[default]
    Gaussian,
    /// Estimate response and PSF from the data.
    Estimate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub mode: SensorMode,
    /// Resolution ratio between the grids; inferred from the rasters when
    /// omitted.
    pub ratio: Option<usize>,
    /// Gaussian MTF gain at Nyquist (gaussian mode).
    pub mtf_gain: f64,
    /// PSF side for estimation; 0 picks `2 * ratio + 1`.
    pub psf_size: usize,
    pub smooth_response: f64,
    pub smooth_psf: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            mode: SensorMode::Gaussian,
            ratio: None,
            mtf_gain: crate::preprocess::DEFAULT_HS_MTF_GAIN,
            psf_size: 0,
            smooth_response: 1e-3,
            smooth_psf: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    /// Screen bands at all; when false the section is inert.
    pub enabled: bool,
    /// Closed wavelength intervals (nm) to drop outright.
    pub absorption_nm: Vec<(f64, f64)>,
    pub snr_threshold: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            enabled: true,
            absorption_nm: DEFAULT_ABSORPTION_INTERVALS_NM.to_vec(),
            snr_threshold: DEFAULT_SNR_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingConfig {
    /// Tile side on the pan grid; must be a positive multiple of the ratio.
    pub tile_size: usize,
    pub pad: PadMode,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            tile_size: 360,
            pad: PadMode::Reflect,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtfGlpConfig {
    pub gain_mode: String,
}

impl Default for MtfGlpConfig {
    fn default() -> Self {
        MtfGlpConfig {
            gain_mode: "regression".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HysureConfig {
    pub subspace_dim: usize,
    pub lambda_m: f64,
    pub lambda_phi: f64,
    pub mu: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for HysureConfig {
    fn default() -> Self {
        let p = HysureParams::default();
        HysureConfig {
            subspace_dim: p.subspace_dim,
            lambda_m: p.lambda_m,
            lambda_phi: p.lambda_phi,
            mu: p.mu,
            max_iter: p.max_iter,
            rel_tol: p.rel_tol,
        }
    }
}

impl HysureConfig {
    pub fn to_params(&self, seed: u64) -> HysureParams {
        HysureParams {
            subspace_dim: self.subspace_dim,
            lambda_m: self.lambda_m,
            lambda_phi: self.lambda_phi,
            mu: self.mu,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Any of "wald", "full".
    pub protocols: Vec<String>,
    /// UIQI window (also used by the spectral index at full resolution).
    pub window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocols: vec!["wald".to_string(), "full".to_string()],
            window: 32,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub enabled: bool,
    /// Components rendered as R, G, B.
    pub components: [usize; 3],
    /// Optional wavelength restriction for the fit.
    pub band_range_nm: Option<(f64, f64)>,
    /// Percentile stretch applied per channel.
    pub stretch: (f64, f64),
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            enabled: false,
            components: [0, 1, 2],
            band_range_nm: None,
            stretch: (2.0, 98.0),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory receiving fused rasters, composites, and the report.
    pub dir: String,
}

/// One complete run description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputsConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub screen: ScreenConfig,
    #[serde(default)]
    pub tiling: TilingConfig,
    /// Method names; defaults to all three.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub mtfglp: MtfGlpConfig,
    #[serde(default)]
    pub hysure: HysureConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.to_string()).collect()
}

impl RunConfig {
    /// Parse and validate a TOML config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Io(e).with_context(&path.display().to_string()))?;
        Self::parse(&text).map_err(|e| e.with_context(&path.display().to_string()))
    }

    /// Parse and validate config text.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| crate::Error::InvalidInput(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Resolve the method list.
    pub fn methods(&self) -> Result<Vec<Method>> {
        let mut out = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let m = Method::from_str(name)?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return invalid("at least one method must be selected");
        }
        Ok(out)
    }

    /// Resolve the detail gain mode.
    pub fn gain_mode(&self) -> Result<GainMode> {
        GainMode::from_str(&self.mtfglp.gain_mode)
    }

    /// Reject configurations that cannot possibly run, before any raster
    /// i/o happens.
    pub fn validate(&self) -> Result<()> {
        self.methods()?;
        self.gain_mode()?;
        if let Some(r) = self.sensor.ratio {
            if r < 2 {
                return invalid(format!("sensor.ratio must be at least 2, got {r}"));
            }
        }
        if !(self.sensor.mtf_gain > 0.0 && self.sensor.mtf_gain < 1.0) {
            return invalid(format!(
                "sensor.mtf_gain must lie strictly inside (0, 1), got {}",
                self.sensor.mtf_gain
            ));
        }
        if self.sensor.psf_size != 0 && self.sensor.psf_size % 2 == 0 {
            return invalid(format!(
                "sensor.psf_size must be odd (or 0 for automatic), got {}",
                self.sensor.psf_size
            ));
        }
        if self.tiling.tile_size == 0 {
            return invalid("tiling.tile_size must be positive");
        }
        for p in &self.eval.protocols {
            if p != "wald" && p != "full" {
                return invalid(format!(
                    "unknown evaluation protocol `{p}` (expected wald or full)"
                ));
            }
        }
        if self.eval.window == 0 {
            return invalid("eval.window must be positive");
        }
        for &(lo, hi) in &self.screen.absorption_nm {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return invalid(format!("bad absorption interval [{lo}, {hi}]"));
            }
        }
        if !(self.screen.snr_threshold.is_finite() && self.screen.snr_threshold >= 0.0) {
            return invalid("screen.snr_threshold must be non-negative");
        }
        self.hysure.to_params(0).validate()?;
        let (lo, hi) = self.pca.stretch;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return invalid(format!(
                "pca.stretch must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})"
            ));
        }
        Ok(())
    }
}
