//! Fusion quality metrics.
//!
//! Reduced-resolution (reference-based) metrics: universal image quality
//! index, mean spectral angle, and relative dimensionless global error.
//! Full-resolution (reference-free) metrics: a spectral distortion index
//! built on consistency with the degraded product, a spatial index built on
//! how well the fused bands explain the panchromatic image, and their
//! product. Accumulation is f64 in a fixed order, so results are
//! reproducible bit-for-bit across runs and thread counts.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::preprocess::{degrade_cube, SensorModel};
use crate::raster::{HyperCube, PanImage};

/// Windows whose UIQI denominator falls below this are skipped.
const UIQI_DENOM_FLOOR: f64 = 1e-12;
/// Pixels whose spectral norm falls below this are skipped by SAM.
const SAM_NORM_FLOOR: f64 = 1e-12;
/// Reference band means below this (in magnitude) make ERGAS undefined.
const ERGAS_MEAN_FLOOR: f64 = 1e-12;

fn check_same_shape(a: &HyperCube, b: &HyperCube) -> Result<()> {
    if a.shape() != b.shape() {
        return invalid(format!(
            "cube shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

/// Mean universal image quality index over non-overlapping `window`-square
/// blocks and all bands:
/// `q = 4 cov mu_a mu_b / ((var_a + var_b)(mu_a^2 + mu_b^2))` per block.
/// Blocks with an underflowing denominator are skipped; partial blocks at the
/// ragged edges are ignored. Symmetric in its arguments, and exactly 1 when
/// the cubes are identical and non-degenerate.
pub fn uiqi(a: &HyperCube, b: &HyperCube, window: usize) -> Result<f64> {
    check_same_shape(a, b)?;
    let (rows, cols) = (a.rows(), a.cols());
    if window < 2 || window > rows.min(cols) {
        return invalid(format!(
            "window {window} must be at least 2 and fit inside the {rows} x {cols} raster"
        ));
    }
    let n = (window * window) as f64;
    let mut total = 0.0f64;
    let mut used = 0usize;
    for band in 0..a.bands() {
        let pa = a.band(band);
        let pb = b.band(band);
        for wr in 0..rows / window {
            for wc in 0..cols / window {
                let (r0, c0) = (wr * window, wc * window);
                let mut sum_a = 0.0f64;
                let mut sum_b = 0.0f64;
                for r in r0..r0 + window {
                    for c in c0..c0 + window {
                        sum_a += pa[r * cols + c] as f64;
                        sum_b += pb[r * cols + c] as f64;
                    }
                }
                let mu_a = sum_a / n;
                let mu_b = sum_b / n;
                let mut var_a = 0.0f64;
                let mut var_b = 0.0f64;
                let mut cov = 0.0f64;
                for r in r0..r0 + window {
                    for c in c0..c0 + window {
                        let da = pa[r * cols + c] as f64 - mu_a;
                        let db = pb[r * cols + c] as f64 - mu_b;
                        var_a += da * da;
                        var_b += db * db;
                        cov += da * db;
                    }
                }
                var_a /= n - 1.0;
                var_b /= n - 1.0;
                cov /= n - 1.0;
                let den = (var_a + var_b) * (mu_a * mu_a + mu_b * mu_b);
                if den < UIQI_DENOM_FLOOR {
                    continue;
                }
                // Grouped so identical inputs evaluate to exactly 1.0.
                let num = (2.0 * cov) * (2.0 * (mu_a * mu_b));
                total += num / den;
                used += 1;
            }
        }
    }
    if used == 0 {
        return numerical("every window was degenerate; UIQI undefined");
    }
    Ok(total / used as f64)
}

/// Mean spectral angle in degrees. Per pixel the angle between the two
/// spectra is computed as `2 atan2(|u - v|, |u + v|)` on the normalized
/// spectra — algebraically the arccosine of the clamped normalized dot
/// product, but exact for identical inputs and accurate for small angles.
/// Pixels where either norm underflows are skipped.
pub fn sam_degrees(a: &HyperCube, b: &HyperCube) -> Result<f64> {
    check_same_shape(a, b)?;
    let bands = a.bands();
    let npix = a.pixels();
    let stride = npix;
    let da = a.data();
    let db = b.data();
    let mut total = 0.0f64;
    let mut used = 0usize;
    for p in 0..npix {
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for k in 0..bands {
            let va = da[k * stride + p] as f64;
            let vb = db[k * stride + p] as f64;
            na += va * va;
            nb += vb * vb;
        }
        let na = na.sqrt();
        let nb = nb.sqrt();
        if na < SAM_NORM_FLOOR || nb < SAM_NORM_FLOOR {
            continue;
        }
        let mut diff = 0.0f64;
        let mut sum = 0.0f64;
        for k in 0..bands {
            let ua = da[k * stride + p] as f64 / na;
            let ub = db[k * stride + p] as f64 / nb;
            diff += (ua - ub) * (ua - ub);
            sum += (ua + ub) * (ua + ub);
        }
        total += 2.0 * diff.sqrt().atan2(sum.sqrt());
        used += 1;
    }
    if used == 0 {
        return numerical("every pixel had a degenerate spectrum; SAM undefined");
    }
    Ok((total / used as f64).to_degrees())
}

/// Relative dimensionless global error:
/// `100 / ratio * sqrt(mean_k (rmse_k / mean_k(ref))^2)`.
/// Requires every reference band mean to be bounded away from zero.
pub fn ergas(reference: &HyperCube, test: &HyperCube, ratio: f64) -> Result<f64> {
    check_same_shape(reference, test)?;
    if !(ratio.is_finite() && ratio > 0.0) {
        return invalid(format!("scale ratio must be positive, got {ratio}"));
    }
    let n = reference.pixels() as f64;
    let mut acc = 0.0f64;
    for band in 0..reference.bands() {
        let pr = reference.band(band);
        let pt = test.band(band);
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for (r, t) in pr.iter().zip(pt.iter()) {
            sum += *r as f64;
            let d = *r as f64 - *t as f64;
            sq += d * d;
        }
        let mean = sum / n;
        if mean.abs() < ERGAS_MEAN_FLOOR {
            return numerical(format!(
                "reference band {band} has (near-)zero mean; ERGAS undefined"
            ));
        }
        let rmse = (sq / n).sqrt();
        acc += (rmse / mean) * (rmse / mean);
    }
    Ok(100.0 / ratio * (acc / reference.bands() as f64).sqrt())
}

/// Spectral distortion at full resolution: degrade the fused product with the
/// sensor model (phase 0) and measure `1 - uiqi(hs, degraded)`, clamped to
/// [0, 1].
pub fn d_lambda_k(
    fused: &HyperCube,
    hs: &HyperCube,
    model: &SensorModel,
    window: usize,
) -> Result<f64> {
    let degraded = degrade_cube(fused, model, 0)?;
    if degraded.shape() != hs.shape() {
        return invalid(format!(
            "degraded fused product {:?} does not match the hs cube {:?}",
            degraded.shape(),
            hs.shape()
        ));
    }
    let q = uiqi(hs, &degraded, window)?;
    Ok((1.0 - q).clamp(0.0, 1.0))
}

/// Ridge added to the band block of regression normal equations.
const REGRESSION_RIDGE: f64 = 1e-8;

/// Least-squares fit of `target` on the cube bands plus an intercept.
/// Returns (residual sum of squares, total sum of squares).
fn regression_residuals(cube: &HyperCube, target: &[f64]) -> Result<(f64, f64)> {
    let bands = cube.bands();
    let npix = cube.pixels();
    if npix < bands + 1 {
        return invalid(format!(
            "{npix} pixels cannot determine {bands} band coefficients plus an intercept"
        ));
    }
    let dim = bands + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut x = vec![0.0f64; dim];
    x[bands] = 1.0;
    for (p, &y) in target.iter().enumerate() {
        for (k, slot) in x[..bands].iter_mut().enumerate() {
            *slot = cube.data()[k * npix + p] as f64;
        }
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
        gram[(k, k)] += REGRESSION_RIDGE;
    }
    let mut ridge = REGRESSION_RIDGE;
    let coef = loop {
        match gram.clone().cholesky() {
            Some(chol) => break chol.solve(&rhs),
            None if ridge < 1.0 => {
                ridge *= 100.0;
                for k in 0..dim {
                    gram[(k, k)] += ridge;
                }
            }
            None => return numerical("regression normal equations are not positive definite"),
        }
    };
    let mean_y: f64 = target.iter().sum::<f64>() / npix as f64;
    let mut ssr = 0.0f64;
    let mut sst = 0.0f64;
    for (p, &y) in target.iter().enumerate() {
        let mut pred = coef[bands];
        for k in 0..bands {
            pred += coef[k] * cube.data()[k * npix + p] as f64;
        }
        let r = y - pred;
        ssr += r * r;
        let d = y - mean_y;
        sst += d * d;
    }
    Ok((ssr, sst))
}

/// Spatial distortion proxy at full resolution: `1 - R^2` of the panchromatic
/// image regressed (with intercept) on the fused bands across all pixels,
/// clamped to [0, 1]. Errors on a constant pan image.
pub fn d_s_star(fused: &HyperCube, pan: &PanImage) -> Result<f64> {
    if fused.rows() != pan.rows() || fused.cols() != pan.cols() {
        return invalid(format!(
            "fused {} x {} and pan {} x {} dimensions differ",
            fused.rows(),
            fused.cols(),
            pan.rows(),
            pan.cols()
        ));
    }
    let target = pan.to_f64();
    let (ssr, sst) = regression_residuals(fused, &target)?;
    if sst < 1e-12 {
        return numerical("constant pan image; spatial index undefined");
    }
    Ok((ssr / sst).clamp(0.0, 1.0))
}

/// Combined full-resolution score `(1 - d_lambda)(1 - d_s)`.
pub fn q_star(d_lambda: f64, d_s: f64) -> Result<f64> {
    for (name, v) in [("d_lambda", d_lambda), ("d_s", d_s)] {
        if !(0.0..=1.0).contains(&v) {
            return invalid(format!("{name} = {v} outside [0, 1]"));
        }
    }
    Ok((1.0 - d_lambda) * (1.0 - d_s))
}

/// Which evaluation protocol produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Degrade-then-fuse against the original cube (reference-based).
    ReducedResolution,
    /// Reference-free consistency indices at the native scale.
    FullResolution,
}

/// Scores from one protocol run, with the parameters that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub protocol: Protocol,
    pub window: usize,
    pub ratio: usize,
    pub uiqi: Option<f64>,
    pub sam_deg: Option<f64>,
    pub ergas: Option<f64>,
    pub d_lambda_k: Option<f64>,
    pub d_s_star: Option<f64>,
    pub q_star: Option<f64>,
}

impl QualityReport {
    pub fn reduced(uiqi: f64, sam_deg: f64, ergas: f64, window: usize, ratio: usize) -> Self {
        QualityReport {
            protocol: Protocol::ReducedResolution,
            window,
            ratio,
            uiqi: Some(uiqi),
            sam_deg: Some(sam_deg),
            ergas: Some(ergas),
            d_lambda_k: None,
            d_s_star: None,
            q_star: None,
        }
    }

    /// Full-resolution report; the combined score is derived from the two
    /// indices so the product identity holds by construction.
    pub fn full(d_lambda: f64, d_s: f64, window: usize, ratio: usize) -> Result<Self> {
        let q = q_star(d_lambda, d_s)?;
        Ok(QualityReport {
            protocol: Protocol::FullResolution,
            window,
            ratio,
            uiqi: None,
            sam_deg: None,
            ergas: None,
            d_lambda_k: Some(d_lambda),
            d_s_star: Some(d_s),
            q_star: Some(q),
        })
    }
}
