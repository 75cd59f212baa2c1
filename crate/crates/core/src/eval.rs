//! Method dispatch and evaluation protocols.
//!
//! The reduced-resolution protocol degrades both observations by the sensor
//! ratio, fuses the degraded pair, and scores the result against the
//! original hyperspectral cube, which acts as the reference. The
//! full-resolution protocol scores a fused product directly against the two
//! observations via the reference-free indices.

use std::str::FromStr;

use crate::error::{invalid, Result};
use crate::gsa::gsa_sharpen;
use crate::hysure::{hysure_sharpen, HysureParams};
use crate::metrics::{d_lambda_k, d_s_star, ergas, sam_degrees, uiqi, QualityReport};
use crate::mtfglp::{mtfglp_sharpen, GainMode};
use crate::preprocess::{degrade_cube, degrade_pan, upsample_cube_at, Boundary, SensorModel};
use crate::raster::{HyperCube, PanImage};

/// The fusion methods the toolkit ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Gsa,
    MtfGlp,
    Hysure,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gsa, Method::MtfGlp, Method::Hysure];
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gsa" => Ok(Method::Gsa),
            "mtfglp" | "mtf-glp" => Ok(Method::MtfGlp),
            "hysure" => Ok(Method::Hysure),
            other => Err(crate::Error::InvalidInput(format!(
                "unknown method `{other}` (expected gsa, mtfglp, or hysure)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Gsa => "gsa",
            Method::MtfGlp => "mtfglp",
            Method::Hysure => "hysure",
        })
    }
}

/// Per-method options gathered in one place so callers can dispatch
/// uniformly.
#[derive(Debug, Clone, Default)]
pub struct MethodOptions {
    pub gain_mode: GainMode,
    pub hysure: HysureParams,
}

/// Run one fusion method on a registered pair.
pub fn sharpen(
    method: Method,
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    opts: &MethodOptions,
) -> Result<HyperCube> {
    match method {
        Method::Gsa => gsa_sharpen(hs, pan, model).map(|(cube, _)| cube),
        Method::MtfGlp => mtfglp_sharpen(hs, pan, model, opts.gain_mode).map(|(cube, _)| cube),
        Method::Hysure => hysure_sharpen(hs, pan, model, &opts.hysure).map(|(cube, _)| cube),
    }
}

/// Plain expansion of the hyperspectral cube to the pan grid, aligned with
/// the phase-0 decimation convention. The no-fusion baseline every method
/// has to beat.
pub fn upsample_baseline(hs: &HyperCube, ratio: usize) -> Result<HyperCube> {
    if ratio < 2 {
        return invalid(format!("expansion ratio must be at least 2, got {ratio}"));
    }
    upsample_cube_at(hs, ratio, 0.0, Boundary::Periodic)
}

/// One reduced-resolution evaluation: what ran, how it scored, and a
/// checksum of the degraded inputs it consumed (hex FNV-1a), so runs are
/// auditable.
#[derive(Debug, Clone)]
pub struct WaldRun {
    pub label: String,
    pub report: QualityReport,
    pub input_checksum: String,
}

/// FNV-1a over little-endian f32 bytes.
fn fnv1a64(acc: u64, data: &[f32]) -> u64 {
    let mut h = acc;
    for v in data {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;

/// Reduced-resolution protocol around an arbitrary fusion closure: degrade
/// both observations by the model ratio, fuse the degraded pair, score
/// against the original cube.
pub fn wald_protocol_with<F>(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    window: usize,
    label: &str,
    mut fuse: F,
) -> Result<WaldRun>
where
    F: FnMut(&HyperCube, &PanImage, &SensorModel) -> Result<HyperCube>,
{
    let ratio = model.ratio();
    if pan.rows() != hs.rows() * ratio || pan.cols() != hs.cols() * ratio {
        return invalid(format!(
            "pan {} x {} is not the hs grid {} x {} scaled by {ratio}",
            pan.rows(),
            pan.cols(),
            hs.rows(),
            hs.cols()
        ));
    }
    let hs_low = degrade_cube(hs, model, 0)
        .map_err(|e| e.with_context("degrading the cube for the reduced-resolution protocol"))?;
    let pan_low = degrade_pan(pan, model, 0)
        .map_err(|e| e.with_context("degrading the pan for the reduced-resolution protocol"))?;
    let checksum = fnv1a64(fnv1a64(FNV_OFFSET, hs_low.data()), pan_low.data());

    let fused = fuse(&hs_low, &pan_low, model)?;
    if fused.shape() != hs.shape() {
        return invalid(format!(
            "fusion returned {:?}, expected the reference shape {:?}",
            fused.shape(),
            hs.shape()
        ));
    }
    let report = QualityReport::reduced(
        uiqi(hs, &fused, window)?,
        sam_degrees(hs, &fused)?,
        ergas(hs, &fused, ratio as f64)?,
        window,
        ratio,
    );
    Ok(WaldRun {
        label: label.to_string(),
        report,
        input_checksum: format!("{checksum:016x}"),
    })
}

/// Reduced-resolution protocol for a shipped method.
pub fn wald_protocol(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    method: Method,
    opts: &MethodOptions,
    window: usize,
) -> Result<WaldRun> {
    wald_protocol_with(hs, pan, model, window, &method.to_string(), |h, p, m| {
        sharpen(method, h, p, m, opts)
    })
}

/// Full-resolution, reference-free evaluation of a fused product against
/// the observations it came from.
pub fn full_resolution_eval(
    fused: &HyperCube,
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    window: usize,
) -> Result<QualityReport> {
    let dl = d_lambda_k(fused, hs, model, window)?;
    let ds = d_s_star(fused, pan)?;
    QualityReport::full(dl, ds, window, model.ratio())
}
