//! ENVI-style raster I/O.
//!
//! A raster is a pair of files: a text header (`key = value` lines, brace
//! lists for per-band vectors) and a flat binary payload of 32-bit
//! little-endian reals. Headers written here always use band-sequential
//! (`bsq`) order; readers accept `bsq`, `bil`, and `bip` and normalize to
//! band-major in memory. Single-band payloads read back as panchromatic
//! images unless the header carries a wavelength list.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{format_err, invalid, Error, Result};
use crate::raster::{HyperCube, PanImage};

/// A raster loaded from disk: multiband cube or single-band pan image.
#[derive(Debug, Clone)]
pub enum Raster {
    Cube(HyperCube),
    Pan(PanImage),
}

impl Raster {
    pub fn rows(&self) -> usize {
        match self {
            Raster::Cube(c) => c.rows(),
            Raster::Pan(p) => p.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Raster::Cube(c) => c.cols(),
            Raster::Pan(p) => p.cols(),
        }
    }

    pub fn bands(&self) -> usize {
        match self {
            Raster::Cube(c) => c.bands(),
            Raster::Pan(_) => 1,
        }
    }

    pub fn into_cube(self) -> Result<HyperCube> {
        match self {
            Raster::Cube(c) => Ok(c),
            Raster::Pan(_) => invalid("expected a multiband cube, found a single-band pan image"),
        }
    }

    pub fn into_pan(self) -> Result<PanImage> {
        match self {
            Raster::Pan(p) => Ok(p),
            Raster::Cube(c) => invalid(format!(
                "expected a single-band pan image, found a {}-band cube",
                c.bands()
            )),
        }
    }
}

/// Header/payload paths for a raster referred to by any of its file names.
fn file_pair(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("hdr"), path.with_extension("bin"))
}

fn parse_header(text: &str) -> Result<HashMap<String, String>> {
    let mut fields = HashMap::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("envi") {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return format_err(format!("header line without `=`: `{line}`"));
        };
        let key = key.trim().to_ascii_lowercase();
        let mut value = value.trim().to_string();
        // Brace lists may wrap across lines; keep consuming until the close.
        if value.starts_with('{') && !value.contains('}') {
            for cont in lines.by_ref() {
                value.push(' ');
                value.push_str(cont.trim());
                if cont.contains('}') {
                    break;
                }
            }
            if !value.contains('}') {
                return format_err(format!("unterminated brace list for `{key}`"));
            }
        }
        fields.insert(key, value);
    }
    Ok(fields)
}

fn required_usize(fields: &HashMap<String, String>, key: &str) -> Result<usize> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::Format(format!("header missing `{key}`")))?;
    raw.trim()
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("header field `{key}` is not an integer: `{raw}`")))
}

fn brace_list(raw: &str, key: &str) -> Result<Vec<String>> {
    let inner = raw
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("field `{key}` is not a brace list: `{raw}`")))?;
    Ok(inner
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

/// Read a raster given its header, payload, or extension-less stem path.
pub fn read_raster(path: &Path) -> Result<Raster> {
    let (hdr_path, bin_path) = file_pair(path);
    let header = fs::read_to_string(&hdr_path)
        .map_err(|e| Error::Format(format!("cannot read header {}: {e}", hdr_path.display())))?;
    let fields = parse_header(&header)?;

    let samples = required_usize(&fields, "samples")?;
    let lines = required_usize(&fields, "lines")?;
    let bands = required_usize(&fields, "bands")?;
    let data_type = required_usize(&fields, "data type")?;
    if data_type != 4 {
        return format_err(format!(
            "unsupported data type code {data_type} (only 4 = 32-bit real)"
        ));
    }
    let byte_order = required_usize(&fields, "byte order")?;
    if byte_order != 0 {
        return format_err(format!(
            "unsupported byte order {byte_order} (only 0 = little-endian)"
        ));
    }
    let interleave = fields
        .get("interleave")
        .map(|s| s.trim().to_ascii_lowercase())
        .ok_or_else(|| Error::Format("header missing `interleave`".into()))?;

    let bytes = fs::read(&bin_path)
        .map_err(|e| Error::Format(format!("cannot read payload {}: {e}", bin_path.display())))?;
    let expected = bands * lines * samples * 4;
    if bytes.len() != expected {
        return format_err(format!(
            "payload holds {} bytes, header implies {expected}",
            bytes.len()
        ));
    }
    let raw: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    // Normalize to band-major.
    let plane = lines * samples;
    let data = match interleave.as_str() {
        "bsq" => raw,
        "bil" => {
            let mut out = vec![0.0f32; raw.len()];
            for l in 0..lines {
                for b in 0..bands {
                    for s in 0..samples {
                        out[b * plane + l * samples + s] = raw[(l * bands + b) * samples + s];
                    }
                }
            }
            out
        }
        "bip" => {
            let mut out = vec![0.0f32; raw.len()];
            for l in 0..lines {
                for s in 0..samples {
                    for b in 0..bands {
                        out[b * plane + l * samples + s] = raw[(l * samples + s) * bands + b];
                    }
                }
            }
            out
        }
        other => return format_err(format!("unsupported interleave `{other}`")),
    };

    let gsd = match fields.get("gsd_m") {
        Some(raw) => raw
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad gsd_m value `{raw}`")))?,
        None => 1.0,
    };

    let wavelengths = match fields.get("wavelength") {
        Some(raw) => {
            let items = brace_list(raw, "wavelength")?;
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                out.push(
                    item.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad wavelength entry `{item}`")))?,
                );
            }
            Some(out)
        }
        None => None,
    };

    if bands == 1 && wavelengths.is_none() {
        let pan = PanImage::from_data(lines, samples, data)
            .and_then(|p| p.with_gsd(gsd))
            .map_err(|e| Error::Format(e.to_string()))?;
        return Ok(Raster::Pan(pan));
    }

    let mut cube = HyperCube::from_data(bands, lines, samples, data)
        .and_then(|c| c.with_gsd(gsd))
        .map_err(|e| Error::Format(e.to_string()))?;
    if let Some(w) = wavelengths {
        cube = cube
            .with_wavelengths(w)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    if let Some(raw) = fields.get("band names") {
        let names = brace_list(raw, "band names")?;
        if names.len() != bands {
            return format_err(format!(
                "band names list holds {} entries for {bands} bands",
                names.len()
            ));
        }
        cube.band_names = Some(names);
    }
    Ok(cube.into())
}

impl From<HyperCube> for Raster {
    fn from(c: HyperCube) -> Self {
        Raster::Cube(c)
    }
}

impl From<PanImage> for Raster {
    fn from(p: PanImage) -> Self {
        Raster::Pan(p)
    }
}

/// Everything the writer puts in a header besides the fixed format fields.
struct HeaderFields<'a> {
    samples: usize,
    lines: usize,
    bands: usize,
    gsd: f64,
    wavelengths: Option<&'a [f64]>,
    band_names: Option<&'a [String]>,
}

fn write_files(path: &Path, fields: &HeaderFields, data: &[f32]) -> Result<()> {
    let (hdr_path, bin_path) = file_pair(path);
    let mut header = String::from("ENVI\n");
    header.push_str(&format!("samples = {}\n", fields.samples));
    header.push_str(&format!("lines = {}\n", fields.lines));
    header.push_str(&format!("bands = {}\n", fields.bands));
    header.push_str("data type = 4\n");
    header.push_str("interleave = bsq\n");
    header.push_str("byte order = 0\n");
    header.push_str(&format!("gsd_m = {}\n", fields.gsd));
    if let Some(w) = fields.wavelengths {
        let list: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
        header.push_str(&format!("wavelength = {{ {} }}\n", list.join(", ")));
    }
    if let Some(names) = fields.band_names {
        header.push_str(&format!("band names = {{ {} }}\n", names.join(", ")));
    }
    fs::write(&hdr_path, header)?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes)?;
    Ok(())
}

/// Write a cube as a header/payload pair next to `path`.
pub fn write_cube(path: &Path, cube: &HyperCube) -> Result<()> {
    write_files(
        path,
        &HeaderFields {
            samples: cube.cols(),
            lines: cube.rows(),
            bands: cube.bands(),
            gsd: cube.gsd_m,
            wavelengths: cube.wavelengths_nm.as_deref(),
            band_names: cube.band_names.as_deref(),
        },
        cube.data(),
    )
}

/// Write a panchromatic image as a header/payload pair next to `path`.
pub fn write_pan(path: &Path, pan: &PanImage) -> Result<()> {
    write_files(
        path,
        &HeaderFields {
            samples: pan.cols(),
            lines: pan.rows(),
            bands: 1,
            gsd: pan.gsd_m,
            wavelengths: None,
            band_names: None,
        },
        pan.data(),
    )
}

pub fn write_raster(path: &Path, raster: &Raster) -> Result<()> {
    match raster {
        Raster::Cube(c) => write_cube(path, c),
        Raster::Pan(p) => write_pan(path, p),
    }
}
