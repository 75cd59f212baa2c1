//! Subspace-constrained variational sharpening.
//!
//! The fused cube is modeled as `E X`, where `E` is a low-dimensional
//! spectral basis identified from the observed spectra and `X` holds the
//! coefficient planes at pan resolution. `X` minimizes
//!
//! ```text
//!   1/2 ||Y_h - E X B M||^2            (hyperspectral data term)
//! + lambda_m/2 ||Y_m - R E X||^2       (panchromatic data term)
//! + lambda_phi VTV(X)                  (vector total variation)
//! ```
//!
//! where `B` is the sensor PSF (circular), `M` phase-0 decimation, and `R`
//! the pan spectral response. The solver is ADMM with three splittings
//! (`V1 = X B`, `V2 = X`, `V3 = X D`): the `X` step diagonalizes in the
//! frequency domain, the `V1`/`V2` steps are small per-pixel linear solves,
//! and the `V3` step is the group soft-threshold of the vector TV prox.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, numerical, Result};
use crate::fft::{kernel_otf, Fft2};
use crate::preprocess::{upsample_plane_f64, Boundary, SensorModel};
use crate::raster::{HyperCube, PanImage};
use crate::vca::{vca, Subspace};

/// Solver knobs. Defaults suit reflectance-scale imagery.
#[derive(Debug, Clone, PartialEq)]
pub struct HysureParams {
    /// Spectral subspace dimension (clamped to the band count).
    pub subspace_dim: usize,
    /// Weight of the panchromatic data term.
    pub lambda_m: f64,
    /// Weight of the vector total variation.
    pub lambda_phi: f64,
    /// ADMM penalty parameter.
    pub mu: f64,
    pub max_iter: usize,
    /// Relative change of `X` that counts as converged.
    pub rel_tol: f64,
    /// Seed for the subspace identification.
    pub seed: u64,
}

impl Default for HysureParams {
    fn default() -> Self {
        HysureParams {
            subspace_dim: 10,
            lambda_m: 1.0,
            lambda_phi: 5e-4,
            mu: 0.05,
            max_iter: 200,
            rel_tol: 1e-4,
            seed: 1,
        }
    }
}

impl HysureParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.subspace_dim == 0 {
            return invalid("subspace dimension must be positive");
        }
        for (name, v) in [("lambda_m", self.lambda_m), ("lambda_phi", self.lambda_phi)] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return invalid(format!("mu must be positive, got {}", self.mu));
        }
        if self.max_iter == 0 {
            return invalid("solver needs at least one iteration");
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return invalid(format!(
                "rel_tol must be non-negative, got {}",
                self.rel_tol
            ));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of a solve.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    /// Objective value after each iteration.
    pub objective: Vec<f64>,
    /// Relative splitting residuals `(XB - V1, X - V2, XD - V3)`.
    pub splitting_residuals: Vec<[f64; 3]>,
    pub iterations: usize,
    pub converged: bool,
}

/// Group soft-threshold: per pixel, the stacked gradient vector across all
/// planes and both directions is shrunk toward zero by `threshold` in
/// Euclidean norm. This is the proximal map of `threshold * VTV`.
pub fn vtv_prox(
    grad_h: &[f64],
    grad_v: &[f64],
    planes: usize,
    threshold: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if planes == 0 || grad_h.len() != grad_v.len() || grad_h.len() % planes != 0 {
        return invalid("gradient stacks must have equal length, a multiple of `planes`");
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return invalid(format!("threshold must be non-negative, got {threshold}"));
    }
    let npix = grad_h.len() / planes;
    let mut out_h = grad_h.to_vec();
    let mut out_v = grad_v.to_vec();
    for n in 0..npix {
        let mut sq = 0.0f64;
        for j in 0..planes {
            let i = j * npix + n;
            sq += grad_h[i] * grad_h[i] + grad_v[i] * grad_v[i];
        }
        let norm = sq.sqrt();
        let scale = if norm > threshold {
            1.0 - threshold / norm
        } else {
            0.0
        };
        for j in 0..planes {
            let i = j * npix + n;
            out_h[i] *= scale;
            out_v[i] *= scale;
        }
    }
    Ok((out_h, out_v))
}

/// Circular forward differences of one plane, horizontal and vertical.
fn forward_diff(plane: &[f64], rows: usize, cols: usize, dh: &mut [f64], dv: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let right = r * cols + (c + 1) % cols;
            let down = ((r + 1) % rows) * cols + c;
            dh[i] = plane[right] - plane[i];
            dv[i] = plane[down] - plane[i];
        }
    }
}

/// Transfer functions of the circular forward-difference operators.
fn grad_otf(rows: usize, cols: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut dh = Vec::with_capacity(rows * cols);
    let mut dv = Vec::with_capacity(rows * cols);
    let tau = 2.0 * std::f64::consts::PI;
    for u in 0..rows {
        let av = tau * u as f64 / rows as f64;
        let ev = Complex64::new(av.cos() - 1.0, av.sin());
        for v in 0..cols {
            let ah = tau * v as f64 / cols as f64;
            dh.push(Complex64::new(ah.cos() - 1.0, ah.sin()));
            dv.push(ev);
        }
    }
    (dh, dv)
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sharpen with a subspace identified from the cube itself (seeded, via
/// vertex component analysis).
pub fn hysure_sharpen(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    params: &HysureParams,
) -> Result<(HyperCube, SolveTrace)> {
    params.validate()?;
    let dim = params.subspace_dim.min(hs.bands()).min(hs.pixels());
    let subspace = vca(hs, dim, params.seed)?;
    hysure_sharpen_with_subspace(hs, pan, model, params, &subspace)
}

/// Sharpen with an explicitly supplied spectral basis.
pub fn hysure_sharpen_with_subspace(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    params: &HysureParams,
    subspace: &Subspace,
) -> Result<(HyperCube, SolveTrace)> {
    params.validate()?;
    let bands = hs.bands();
    if bands != model.bands() {
        return invalid(format!(
            "cube has {bands} bands but the sensor model expects {}",
            model.bands()
        ));
    }
    if subspace.bands() != bands {
        return invalid(format!(
            "subspace spans {} bands, cube has {bands}",
            subspace.bands()
        ));
    }
    let ratio = model.ratio();
    let (rows, cols) = (pan.rows(), pan.cols());
    if rows != hs.rows() * ratio || cols != hs.cols() * ratio {
        return invalid(format!(
            "pan {rows} x {cols} is not the hs grid {} x {} scaled by {ratio}",
            hs.rows(),
            hs.cols()
        ));
    }

    let p = subspace.dim();
    let npix = rows * cols;
    let n_low = hs.pixels();
    let e = subspace.as_matrix();

    // Small dense pieces shared by the per-pixel updates.
    let ete = e.transpose() * &e;
    let mut c1 = ete.clone();
    for i in 0..p {
        c1[(i, i)] += params.mu;
    }
    let chol1 = c1
        .cholesky()
        .ok_or_else(|| crate::Error::Numerical("hs-term normal equations not SPD".into()))?;
    let response = DVector::<f64>::from_column_slice(model.response());
    let re = e.transpose() * &response; // (R E)^T
    let mut c2 = &re * re.transpose() * params.lambda_m;
    for i in 0..p {
        c2[(i, i)] += params.mu;
    }
    let c2_inv = c2
        .cholesky()
        .ok_or_else(|| crate::Error::Numerical("pan-term normal equations not SPD".into()))?
        .inverse();

    // Subspace coefficients of the observed spectra: pinv(E) Y_h.
    let mut ridge = ete.clone();
    for i in 0..p {
        ridge[(i, i)] += 1e-12;
    }
    let chol_pinv = ridge
        .cholesky()
        .ok_or_else(|| crate::Error::Numerical("subspace basis is rank-deficient".into()))?;
    let mut ety = DMatrix::<f64>::zeros(p, n_low);
    {
        let et = e.transpose();
        let mut spec = DVector::<f64>::zeros(bands);
        for m in 0..n_low {
            for k in 0..bands {
                spec[k] = hs.data()[k * n_low + m] as f64;
            }
            ety.set_column(m, &(&et * &spec));
        }
    }

    // Frequency-domain operators.
    let fft = Fft2::new(rows, cols);
    let b_otf = kernel_otf(model.psf(), model.psf_size(), &fft)?;
    let (dh_otf, dv_otf) = grad_otf(rows, cols);
    let denom: Vec<f64> = (0..npix)
        .map(|i| b_otf[i].norm_sqr() + 1.0 + dh_otf[i].norm_sqr() + dv_otf[i].norm_sqr())
        .collect();

    // High-resolution index of each low-resolution sample (phase 0).
    let samples: Vec<usize> = (0..hs.rows())
        .flat_map(|i| (0..hs.cols()).map(move |j| (i * ratio) * cols + j * ratio))
        .collect();

    // Init: project the observed spectra, then expand each coefficient plane.
    let mut x = vec![0.0f64; p * npix];
    {
        let mut z = vec![0.0f64; p * n_low];
        for m in 0..n_low {
            let sol = chol_pinv.solve(&ety.column(m).into_owned());
            for j in 0..p {
                z[j * n_low + m] = sol[j];
            }
        }
        for j in 0..p {
            let plane = upsample_plane_f64(
                &z[j * n_low..(j + 1) * n_low],
                hs.rows(),
                hs.cols(),
                ratio,
                0.0,
                Boundary::Periodic,
            );
            x[j * npix..(j + 1) * npix].copy_from_slice(&plane);
        }
    }

    let ym = pan.to_f64();
    let mut xb = vec![0.0f64; p * npix];
    let mut xdh = vec![0.0f64; p * npix];
    let mut xdv = vec![0.0f64; p * npix];
    for j in 0..p {
        let plane = &x[j * npix..(j + 1) * npix];
        xb[j * npix..(j + 1) * npix].copy_from_slice(&fft.convolve(plane, &b_otf));
        let (dh, dv) = (
            &mut xdh[j * npix..(j + 1) * npix],
            &mut xdv[j * npix..(j + 1) * npix],
        );
        forward_diff(plane, rows, cols, dh, dv);
    }
    let mut v1 = xb.clone();
    let mut v2 = x.clone();
    let mut v3h = xdh.clone();
    let mut v3v = xdv.clone();
    let mut a1 = vec![0.0f64; p * npix];
    let mut a2 = vec![0.0f64; p * npix];
    let mut a3h = vec![0.0f64; p * npix];
    let mut a3v = vec![0.0f64; p * npix];

    let mut trace = SolveTrace {
        objective: Vec::with_capacity(params.max_iter),
        splitting_residuals: Vec::with_capacity(params.max_iter),
        iterations: 0,
        converged: false,
    };
    let mut x_prev = x.clone();
    let mut rhs_small = DVector::<f64>::zeros(p);
    let mut col_small = vec![0.0f64; p];

    for iter in 0..params.max_iter {
        x_prev.copy_from_slice(&x);

        // X step: frequency-diagonal least squares over the splittings.
        for j in 0..p {
            let o = j * npix;
            let mut w: Vec<Complex64> = (0..npix)
                .map(|i| Complex64::new(v1[o + i] + a1[o + i], 0.0))
                .collect();
            fft.forward(&mut w);
            let mut xhat: Vec<Complex64> = w
                .iter()
                .zip(b_otf.iter())
                .map(|(w, b)| w * b.conj())
                .collect();
            for (dst, src) in w
                .iter_mut()
                .zip(v2[o..o + npix].iter().zip(a2[o..o + npix].iter()))
            {
                *dst = Complex64::new(src.0 + src.1, 0.0);
            }
            fft.forward(&mut w);
            for (acc, w) in xhat.iter_mut().zip(w.iter()) {
                *acc += w;
            }
            for (dst, src) in w
                .iter_mut()
                .zip(v3h[o..o + npix].iter().zip(a3h[o..o + npix].iter()))
            {
                *dst = Complex64::new(src.0 + src.1, 0.0);
            }
            fft.forward(&mut w);
            for ((acc, w), d) in xhat.iter_mut().zip(w.iter()).zip(dh_otf.iter()) {
                *acc += w * d.conj();
            }
            for (dst, src) in w
                .iter_mut()
                .zip(v3v[o..o + npix].iter().zip(a3v[o..o + npix].iter()))
            {
                *dst = Complex64::new(src.0 + src.1, 0.0);
            }
            fft.forward(&mut w);
            for ((acc, w), d) in xhat.iter_mut().zip(w.iter()).zip(dv_otf.iter()) {
                *acc += w * d.conj();
            }
            for (v, d) in xhat.iter_mut().zip(denom.iter()) {
                *v /= *d;
            }
            // Reuse the spectrum for X B before destroying it for X itself.
            for ((dst, xh), b) in w.iter_mut().zip(xhat.iter()).zip(b_otf.iter()) {
                *dst = xh * b;
            }
            fft.inverse(&mut w);
            for (dst, v) in xb[o..o + npix].iter_mut().zip(w.iter()) {
                *dst = v.re;
            }
            fft.inverse(&mut xhat);
            for (dst, v) in x[o..o + npix].iter_mut().zip(xhat.iter()) {
                *dst = v.re;
            }
            let plane = &x[o..o + npix];
            // Split the disjoint gradient buffers out of the big stacks.
            let (dh, dv) = (&mut xdh[o..o + npix], &mut xdv[o..o + npix]);
            forward_diff(plane, rows, cols, dh, dv);
        }

        // V1: matches X B away from the samples, blends in the hs data where
        // the decimation actually observes the scene.
        for i in 0..p * npix {
            v1[i] = xb[i] - a1[i];
        }
        for (m, &n) in samples.iter().enumerate() {
            for j in 0..p {
                rhs_small[j] = ety[(j, m)] + params.mu * v1[j * npix + n];
            }
            let sol = chol1.solve(&rhs_small);
            for j in 0..p {
                v1[j * npix + n] = sol[j];
            }
        }

        // V2: per-pixel blend of the pan data term and the penalty.
        for n in 0..npix {
            for j in 0..p {
                rhs_small[j] = params.lambda_m * re[j] * ym[n]
                    + params.mu * (x[j * npix + n] - a2[j * npix + n]);
            }
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += c2_inv[(j, k)] * rhs_small[k];
                }
                col_small[j] = acc;
            }
            for j in 0..p {
                v2[j * npix + n] = col_small[j];
            }
        }

        // V3: vector-TV prox of the shifted gradients.
        let mut gh = vec![0.0f64; p * npix];
        let mut gv = vec![0.0f64; p * npix];
        for i in 0..p * npix {
            gh[i] = xdh[i] - a3h[i];
            gv[i] = xdv[i] - a3v[i];
        }
        let (ph, pv) = vtv_prox(&gh, &gv, p, params.lambda_phi / params.mu)?;
        v3h.copy_from_slice(&ph);
        v3v.copy_from_slice(&pv);

        // Dual ascent.
        let mut r1 = 0.0f64;
        let mut r2 = 0.0f64;
        let mut r3 = 0.0f64;
        for i in 0..p * npix {
            let d1 = xb[i] - v1[i];
            let d2 = x[i] - v2[i];
            let d3h = xdh[i] - v3h[i];
            let d3v = xdv[i] - v3v[i];
            a1[i] -= d1;
            a2[i] -= d2;
            a3h[i] -= d3h;
            a3v[i] -= d3v;
            r1 += d1 * d1;
            r2 += d2 * d2;
            r3 += d3h * d3h + d3v * d3v;
        }
        let xn = frob(&x).max(f64::MIN_POSITIVE);
        trace
            .splitting_residuals
            .push([r1.sqrt() / xn, r2.sqrt() / xn, r3.sqrt() / xn]);

        // True objective at the current X.
        let mut data_h = 0.0f64;
        for (m, &n) in samples.iter().enumerate() {
            for j in 0..p {
                col_small[j] = xb[j * npix + n];
            }
            for k in 0..bands {
                let mut pred = 0.0;
                for j in 0..p {
                    pred += e[(k, j)] * col_small[j];
                }
                let r = hs.data()[k * n_low + m] as f64 - pred;
                data_h += r * r;
            }
        }
        let mut data_m = 0.0f64;
        for n in 0..npix {
            let mut pred = 0.0;
            for j in 0..p {
                pred += re[j] * x[j * npix + n];
            }
            let r = ym[n] - pred;
            data_m += r * r;
        }
        let mut vtv = 0.0f64;
        for n in 0..npix {
            let mut sq = 0.0;
            for j in 0..p {
                let i = j * npix + n;
                sq += xdh[i] * xdh[i] + xdv[i] * xdv[i];
            }
            vtv += sq.sqrt();
        }
        let objective = 0.5 * data_h + 0.5 * params.lambda_m * data_m + params.lambda_phi * vtv;
        if !objective.is_finite() {
            return numerical(format!("objective diverged at iteration {iter}"));
        }
        trace.objective.push(objective);
        trace.iterations = iter + 1;

        let mut dx = 0.0f64;
        for (a, b) in x.iter().zip(x_prev.iter()) {
            dx += (a - b) * (a - b);
        }
        let xp = frob(&x_prev).max(f64::MIN_POSITIVE);
        if dx.sqrt() <= params.rel_tol * xp {
            trace.converged = true;
            break;
        }
    }

    // Leave the subspace: fused = E X.
    let mut fused = vec![0.0f32; bands * npix];
    for n in 0..npix {
        for j in 0..p {
            col_small[j] = x[j * npix + n];
        }
        for k in 0..bands {
            let mut acc = 0.0;
            for j in 0..p {
                acc += e[(k, j)] * col_small[j];
            }
            fused[k * npix + n] = acc as f32;
        }
    }
    let fused = HyperCube::from_data(bands, rows, cols, fused)
        .map_err(|e| e.with_context("subspace-fused cube"))?
        .metadata_like(hs)
        .with_gsd(pan.gsd_m)?;
    Ok((fused, trace))
}
