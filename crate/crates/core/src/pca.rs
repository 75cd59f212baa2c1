//! Principal-component analysis over spectral bands, for visualization.
//!
//! Fits an orthonormal component basis to the (optionally wavelength-
//! restricted) band covariance, projects pixels onto chosen components, and
//! renders stretched false-color composites from the leading ones.

use nalgebra::DMatrix;

use crate::error::{invalid, numerical, Result};
use crate::raster::{render_composite_planes, HyperCube, RgbComposite};

/// A fitted component basis over a band subset.
#[derive(Debug, Clone)]
pub struct PcaFit {
    /// Indices of the cube bands the fit used, ascending.
    pub band_indices: Vec<usize>,
    /// Per-selected-band mean.
    pub mean: Vec<f64>,
    /// Orthonormal components, column-major `k x k` (k = selected bands),
    /// eigenvalue-descending. Each column's largest-magnitude entry is
    /// positive, fixing the sign convention.
    pub components: Vec<f64>,
    /// Eigenvalues (variances along components), descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaFit {
    pub fn dim(&self) -> usize {
        self.band_indices.len()
    }

    /// One component as a slice of per-band loadings.
    pub fn component(&self, j: usize) -> &[f64] {
        let k = self.dim();
        &self.components[j * k..(j + 1) * k]
    }
}

/// Fit components to the cube's band covariance. `band_range_nm` restricts
/// the fit to bands whose wavelength lies inside the closed interval; it
/// requires a wavelength table, and at least three bands must survive.
pub fn pca_fit(cube: &HyperCube, band_range_nm: Option<(f64, f64)>) -> Result<PcaFit> {
    let band_indices: Vec<usize> = match band_range_nm {
        None => (0..cube.bands()).collect(),
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return invalid(format!("bad wavelength range [{lo}, {hi}]"));
            }
            let Some(wl) = cube.wavelengths_nm.as_ref() else {
                return invalid("wavelength range requested but the cube has no wavelength table");
            };
            (0..cube.bands())
                .filter(|&k| wl[k] >= lo && wl[k] <= hi)
                .collect()
        }
    };
    let k = band_indices.len();
    if k < 3 {
        return invalid(format!(
            "component analysis needs at least 3 bands, found {k}"
        ));
    }
    let npix = cube.pixels();
    if npix < 2 {
        return invalid("component analysis needs at least 2 pixels");
    }

    let mut mean = vec![0.0f64; k];
    for (i, &b) in band_indices.iter().enumerate() {
        mean[i] = cube.band(b).iter().map(|&v| v as f64).sum::<f64>() / npix as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for p in 0..npix {
        for i in 0..k {
            let di = cube.data()[band_indices[i] * npix + p] as f64 - mean[i];
            for j in i..k {
                let dj = cube.data()[band_indices[j] * npix + p] as f64 - mean[j];
                cov[(i, j)] += di * dj;
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov /= (npix - 1) as f64;

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut components = Vec::with_capacity(k * k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in &order {
        let col = eig.eigenvectors.column(idx);
        if col.iter().any(|v| !v.is_finite()) {
            return numerical("covariance eigendecomposition produced non-finite loadings");
        }
        // Sign convention: largest-magnitude loading positive (first wins ties).
        let mut arg = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[arg].abs() {
                arg = i;
            }
        }
        let sign = if col[arg] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * sign));
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok(PcaFit {
        band_indices,
        mean,
        components,
        eigenvalues,
    })
}

/// Project the cube onto one fitted component, returning an f32 plane.
pub fn pca_project(cube: &HyperCube, fit: &PcaFit, component: usize) -> Result<Vec<f32>> {
    let k = fit.dim();
    if component >= k {
        return invalid(format!(
            "component {component} out of range for a {k}-component fit"
        ));
    }
    if fit.band_indices.iter().any(|&b| b >= cube.bands()) {
        return invalid("fit refers to bands the cube does not have");
    }
    let npix = cube.pixels();
    let loadings = fit.component(component);
    let mut plane = vec![0.0f64; npix];
    for (i, &b) in fit.band_indices.iter().enumerate() {
        let band = cube.band(b);
        let w = loadings[i];
        let mu = fit.mean[i];
        for (dst, v) in plane.iter_mut().zip(band.iter()) {
            *dst += w * (*v as f64 - mu);
        }
    }
    Ok(plane.into_iter().map(|v| v as f32).collect())
}

/// Render three projected components as a stretched composite.
pub fn pca_composite(
    cube: &HyperCube,
    fit: &PcaFit,
    components: [usize; 3],
    stretch: (f64, f64),
) -> Result<RgbComposite> {
    let planes: Vec<Vec<f32>> = components
        .iter()
        .map(|&c| pca_project(cube, fit, c))
        .collect::<Result<_>>()?;
    let labels = [
        format!("pc {}", components[0]),
        format!("pc {}", components[1]),
        format!("pc {}", components[2]),
    ];
    render_composite_planes(
        [&planes[0], &planes[1], &planes[2]],
        cube.rows(),
        cube.cols(),
        stretch,
        [&labels[0], &labels[1], &labels[2]],
    )
}
