//! Fixed-size tiling of large rasters.
//!
//! Scenes too large to fuse in one piece are cut into `tile_size`-square
//! tiles (sized at the high-resolution grid), padded at the ragged edges,
//! processed independently, and merged back by discarding the padding. The
//! tile size must be a multiple of the decimation ratio so low-resolution and
//! high-resolution tiles stay aligned: a grid planned at the panchromatic
//! scale extracts `tile_size / ratio` tiles from the hyperspectral cube.

use serde::Deserialize;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::raster::{HyperCube, PanImage};

/// How out-of-raster samples are filled at the ragged edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    /// Half-sample symmetric reflection (the edge sample repeats), folded in
    /// global source coordinates so interior tiles are unaffected.
    #[default]
    Reflect,
}

impl FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PadMode::Zero),
            "reflect" => Ok(PadMode::Reflect),
            other => invalid(format!(
                "unknown pad mode `{other}` (expected zero|reflect)"
            )),
        }
    }
}

impl fmt::Display for PadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PadMode::Zero => "zero",
            PadMode::Reflect => "reflect",
        })
    }
}

/// One planned tile. Origins and valid extents are in high-resolution source
/// pixels; the padded tile is always `tile_size` square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileInfo {
    pub grid_row: usize,
    pub grid_col: usize,
    pub origin_row: usize,
    pub origin_col: usize,
    pub valid_rows: usize,
    pub valid_cols: usize,
}

/// A tiling plan over one source raster shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub ratio: usize,
    pub source_rows: usize,
    pub source_cols: usize,
    pub pad_mode: PadMode,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub tiles: Vec<TileInfo>,
}

/// Plan a ceil-division tile grid over a `rows x cols` high-resolution
/// raster. `tile_size` must be a positive multiple of `ratio`.
pub fn plan_tiles(
    rows: usize,
    cols: usize,
    tile_size: usize,
    ratio: usize,
    pad_mode: PadMode,
) -> Result<TileGrid> {
    if rows == 0 || cols == 0 {
        return invalid("cannot tile an empty raster");
    }
    if ratio == 0 {
        return invalid("decimation ratio must be positive");
    }
    if tile_size == 0 || tile_size % ratio != 0 {
        return invalid(format!(
            "tile size {tile_size} must be a positive multiple of the ratio {ratio}"
        ));
    }
    let grid_rows = rows.div_ceil(tile_size);
    let grid_cols = cols.div_ceil(tile_size);
    let mut tiles = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let origin_row = gr * tile_size;
            let origin_col = gc * tile_size;
            tiles.push(TileInfo {
                grid_row: gr,
                grid_col: gc,
                origin_row,
                origin_col,
                valid_rows: tile_size.min(rows - origin_row),
                valid_cols: tile_size.min(cols - origin_col),
            });
        }
    }
    Ok(TileGrid {
        tile_size,
        ratio,
        source_rows: rows,
        source_cols: cols,
        pad_mode,
        grid_rows,
        grid_cols,
        tiles,
    })
}

/// Fold an index into `[0, len)` by half-sample symmetric reflection.
fn reflect_fold(n: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let mut m = n.rem_euclid(period);
    if m >= len as isize {
        m = period - 1 - m;
    }
    m as usize
}

fn pad_lookup(plane: &[f32], rows: usize, cols: usize, r: isize, c: isize, pad: PadMode) -> f32 {
    if r >= 0 && (r as usize) < rows && c >= 0 && (c as usize) < cols {
        return plane[r as usize * cols + c as usize];
    }
    match pad {
        PadMode::Zero => 0.0,
        PadMode::Reflect => {
            let rr = reflect_fold(r, rows);
            let cc = reflect_fold(c, cols);
            plane[rr * cols + cc]
        }
    }
}

fn extract_plane(
    plane: &[f32],
    rows: usize,
    cols: usize,
    origin_row: usize,
    origin_col: usize,
    side: usize,
    pad: PadMode,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        let sr = (origin_row + r) as isize;
        for c in 0..side {
            let sc = (origin_col + c) as isize;
            out.push(pad_lookup(plane, rows, cols, sr, sc, pad));
        }
    }
    out
}

/// Scale of a raster relative to the grid's source shape: 1 for the
/// high-resolution grid, `ratio` for the decimated grid.
fn infer_scale(grid: &TileGrid, rows: usize, cols: usize) -> Result<usize> {
    if rows == grid.source_rows && cols == grid.source_cols {
        return Ok(1);
    }
    if grid.ratio > 1
        && grid.source_rows % grid.ratio == 0
        && grid.source_cols % grid.ratio == 0
        && rows == grid.source_rows / grid.ratio
        && cols == grid.source_cols / grid.ratio
    {
        return Ok(grid.ratio);
    }
    invalid(format!(
        "raster shape {rows} x {cols} matches neither the planned {} x {} source nor its 1/{} decimation",
        grid.source_rows, grid.source_cols, grid.ratio
    ))
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    fn tile(&self, index: usize) -> Result<&TileInfo> {
        self.tiles.get(index).ok_or_else(|| {
            Error::InvalidInput(format!(
                "tile index {index} out of range for {}-tile grid",
                self.tiles.len()
            ))
        })
    }

    /// Extract one padded tile from a cube at either grid scale.
    pub fn extract_tile(&self, cube: &HyperCube, index: usize) -> Result<HyperCube> {
        let info = *self.tile(index)?;
        let scale = infer_scale(self, cube.rows(), cube.cols())?;
        let side = self.tile_size / scale;
        let mut data = Vec::with_capacity(cube.bands() * side * side);
        for b in 0..cube.bands() {
            data.extend(extract_plane(
                cube.band(b),
                cube.rows(),
                cube.cols(),
                info.origin_row / scale,
                info.origin_col / scale,
                side,
                self.pad_mode,
            ));
        }
        Ok(HyperCube::from_data(cube.bands(), side, side, data)?.metadata_like(cube))
    }

    /// Extract one padded tile from a panchromatic image at either grid scale.
    pub fn extract_pan_tile(&self, pan: &PanImage, index: usize) -> Result<PanImage> {
        let info = *self.tile(index)?;
        let scale = infer_scale(self, pan.rows(), pan.cols())?;
        let side = self.tile_size / scale;
        let data = extract_plane(
            pan.data(),
            pan.rows(),
            pan.cols(),
            info.origin_row / scale,
            info.origin_col / scale,
            side,
            self.pad_mode,
        );
        PanImage::from_data(side, side, data)?.with_gsd(pan.gsd_m)
    }

    /// Merge tiles back into a full raster, discarding padding. Tiles must
    /// arrive in plan order (row-major over the grid).
    pub fn merge_tiles(&self, tiles: &[HyperCube]) -> Result<HyperCube> {
        if tiles.len() != self.tiles.len() {
            return invalid(format!(
                "merge got {} tiles, plan has {}",
                tiles.len(),
                self.tiles.len()
            ));
        }
        let first = &tiles[0];
        let scale = self.merge_scale(first.rows(), first.cols())?;
        let (rows, cols) = (self.source_rows / scale, self.source_cols / scale);
        let bands = first.bands();
        let mut out = HyperCube::zeros(bands, rows, cols)?;
        for (tile, info) in tiles.iter().zip(self.tiles.iter()) {
            if tile.bands() != bands || tile.rows() != first.rows() || tile.cols() != first.cols() {
                return invalid(format!(
                    "tile ({}, {}) shape {:?} disagrees with first tile {:?}",
                    info.grid_row,
                    info.grid_col,
                    tile.shape(),
                    first.shape()
                ));
            }
            for b in 0..bands {
                let src = tile.band(b);
                let side = tile.cols();
                for r in 0..info.valid_rows / scale {
                    let dst_row = info.origin_row / scale + r;
                    let dst_col = info.origin_col / scale;
                    let n = info.valid_cols / scale;
                    let dst = out.band_mut(b);
                    dst[dst_row * cols + dst_col..dst_row * cols + dst_col + n]
                        .copy_from_slice(&src[r * side..r * side + n]);
                }
            }
        }
        Ok(out.metadata_like(first))
    }

    /// Merge panchromatic tiles (same contract as [`TileGrid::merge_tiles`]).
    pub fn merge_pan_tiles(&self, tiles: &[PanImage]) -> Result<PanImage> {
        if tiles.len() != self.tiles.len() {
            return invalid(format!(
                "merge got {} tiles, plan has {}",
                tiles.len(),
                self.tiles.len()
            ));
        }
        let first = &tiles[0];
        let scale = self.merge_scale(first.rows(), first.cols())?;
        let (rows, cols) = (self.source_rows / scale, self.source_cols / scale);
        let mut out = PanImage::zeros(rows, cols)?.with_gsd(first.gsd_m)?;
        for (tile, info) in tiles.iter().zip(self.tiles.iter()) {
            if tile.rows() != first.rows() || tile.cols() != first.cols() {
                return invalid(format!(
                    "pan tile ({}, {}) shape disagrees with first tile",
                    info.grid_row, info.grid_col
                ));
            }
            let side = tile.cols();
            for r in 0..info.valid_rows / scale {
                let dst_row = info.origin_row / scale + r;
                let dst_col = info.origin_col / scale;
                let n = info.valid_cols / scale;
                let dst = out.data_mut();
                dst[dst_row * cols + dst_col..dst_row * cols + dst_col + n]
                    .copy_from_slice(&tile.data()[r * side..r * side + n]);
            }
        }
        Ok(out)
    }

    /// Scale implied by a tile's side length.
    fn merge_scale(&self, rows: usize, cols: usize) -> Result<usize> {
        if rows == self.tile_size && cols == self.tile_size {
            Ok(1)
        } else if self.ratio > 1
            && rows == self.tile_size / self.ratio
            && cols == self.tile_size / self.ratio
            && self.source_rows % self.ratio == 0
            && self.source_cols % self.ratio == 0
        {
            Ok(self.ratio)
        } else {
            invalid(format!(
                "tile side {rows} x {cols} matches neither tile size {} nor its 1/{} decimation",
                self.tile_size, self.ratio
            ))
        }
    }
}
