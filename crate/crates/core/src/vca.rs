//! Spectral subspace identification by vertex component analysis.
//!
//! Pixel spectra that live (approximately) on a simplex spanned by a few
//! pure materials are projected onto their leading principal components;
//! repeatedly projecting a random direction orthogonal to the simplex facet
//! found so far and taking the extreme pixel recovers the simplex vertices.
//! The selected pixel spectra form the subspace basis. When the selection
//! degenerates (duplicate picks, dependent spectra) the routine falls back
//! to the orthonormal principal components themselves.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, numerical, Result};
use crate::raster::HyperCube;

/// Relative singular-value floor below which selected spectra count as
/// linearly dependent.
const INDEPENDENCE_FLOOR: f64 = 1e-8;

/// A spectral subspace: `bands x dim` basis, column-major.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: Vec<f64>,
    bands: usize,
    dim: usize,
    /// (row, col) of the pixel behind each basis column; empty when the
    /// routine fell back to principal components.
    pub endmember_pixels: Vec<(usize, usize)>,
    /// True when degeneracy forced the principal-component fallback.
    pub pca_fallback: bool,
}

impl Subspace {
    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One basis column (a spectrum).
    pub fn column(&self, j: usize) -> &[f64] {
        &self.basis[j * self.bands..(j + 1) * self.bands]
    }

    /// The basis as a `bands x dim` matrix.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.bands, self.dim, &self.basis)
    }

    /// Wrap an explicit basis; columns must be linearly independent.
    pub fn from_columns(bands: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return invalid("subspace needs at least one column");
        }
        if columns.iter().any(|c| c.len() != bands) {
            return invalid("subspace columns must all have `bands` entries");
        }
        let mut basis = Vec::with_capacity(bands * columns.len());
        for c in columns {
            basis.extend_from_slice(c);
        }
        let m = DMatrix::from_column_slice(bands, columns.len(), &basis);
        let svd = m.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax <= 0.0 || smin < INDEPENDENCE_FLOOR * smax {
            return invalid("subspace columns are linearly dependent");
        }
        Ok(Subspace {
            basis,
            bands,
            dim: columns.len(),
            endmember_pixels: Vec::new(),
            pca_fallback: false,
        })
    }
}

/// Draw a standard normal via the Box-Muller transform.
fn randn(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Leading eigenvectors of the (uncentered) pixel scatter matrix,
/// `bands x dim`, eigenvalue-descending.
fn leading_scatter_vectors(cube: &HyperCube, dim: usize) -> DMatrix<f64> {
    let bands = cube.bands();
    let npix = cube.pixels();
    let mut scatter = DMatrix::<f64>::zeros(bands, bands);
    for p in 0..npix {
        for i in 0..bands {
            let vi = cube.data()[i * npix + p] as f64;
            for j in i..bands {
                scatter[(i, j)] += vi * cube.data()[j * npix + p] as f64;
            }
        }
    }
    for i in 0..bands {
        for j in 0..i {
            scatter[(i, j)] = scatter[(j, i)];
        }
    }
    scatter /= npix as f64;
    let eig = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = DMatrix::<f64>::zeros(bands, dim);
    for (col, &idx) in order.iter().take(dim).enumerate() {
        u.set_column(col, &eig.eigenvectors.column(idx));
    }
    u
}

/// Identify a `dim`-dimensional spectral subspace from the cube's pixel
/// spectra. Deterministic for a fixed seed.
pub fn vca(cube: &HyperCube, dim: usize, seed: u64) -> Result<Subspace> {
    let bands = cube.bands();
    let npix = cube.pixels();
    if dim == 0 || dim > bands || dim > npix {
        return invalid(format!(
            "subspace dimension {dim} must be in 1..=min(bands {bands}, pixels {npix})"
        ));
    }
    let u = leading_scatter_vectors(cube, dim);

    // Project every spectrum onto the leading components: dim x npix.
    let mut proj = DMatrix::<f64>::zeros(dim, npix);
    for p in 0..npix {
        for c in 0..dim {
            let mut acc = 0.0;
            for k in 0..bands {
                acc += u[(k, c)] * cube.data()[k * npix + p] as f64;
            }
            proj[(c, p)] = acc;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = DMatrix::<f64>::zeros(dim, dim);
    picked[(dim - 1, 0)] = 1.0;
    let mut indices: Vec<usize> = Vec::with_capacity(dim);
    let mut degenerate = false;
    for i in 0..dim {
        // Direction orthogonal to the span of the picks so far.
        let pinv = picked.clone().pseudo_inverse(1e-12).map_err(|e| {
            crate::Error::Numerical(format!("projector pseudo-inverse failed: {e}"))
        })?;
        let ortho = DMatrix::<f64>::identity(dim, dim) - &picked * pinv;
        let w = DMatrix::<f64>::from_fn(dim, 1, |_, _| randn(&mut rng));
        let mut f = &ortho * &w;
        if f.norm() < 1e-12 * w.norm() {
            f = w;
        }
        let f = f.normalize();
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for p in 0..npix {
            let mut v = 0.0;
            for c in 0..dim {
                v += f[(c, 0)] * proj[(c, p)];
            }
            let v = v.abs();
            if v > best_val {
                best_val = v;
                best = p;
            }
        }
        if indices.contains(&best) {
            degenerate = true;
            break;
        }
        picked.set_column(i, &proj.column(best));
        indices.push(best);
    }

    if !degenerate {
        let cols: Vec<Vec<f64>> = indices
            .iter()
            .map(|&p| {
                (0..bands)
                    .map(|k| cube.data()[k * npix + p] as f64)
                    .collect()
            })
            .collect();
        if let Ok(mut sub) = Subspace::from_columns(bands, &cols) {
            sub.endmember_pixels = indices
                .iter()
                .map(|&p| (p / cube.cols(), p % cube.cols()))
                .collect();
            return Ok(sub);
        }
        degenerate = true;
    }

    if degenerate {
        // Orthonormal principal components always span a usable subspace.
        let mut basis = Vec::with_capacity(bands * dim);
        for c in 0..dim {
            basis.extend(u.column(c).iter());
        }
        let norm: f64 = basis.iter().map(|v| v * v).sum();
        if !norm.is_finite() || norm == 0.0 {
            return numerical("scatter eigenvectors degenerate; no usable subspace");
        }
        return Ok(Subspace {
            basis,
            bands,
            dim,
            endmember_pixels: Vec::new(),
            pca_fallback: true,
        });
    }
    unreachable!()
}
