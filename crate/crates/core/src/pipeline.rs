//! End-to-end orchestration: load a registered pair, screen bands, build or
//! estimate the sensor model, fuse tile by tile across a worker pool,
//! evaluate, and write rasters plus a deterministic text report.
//!
//! Determinism contract: identical inputs and configuration produce
//! byte-identical outputs regardless of worker count. Tile work is pure,
//! results are merged in plan order, per-tile solver seeds derive only from
//! the run seed and the tile index, and report text never mentions wall
//! time or thread counts.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, SensorMode};
use crate::envi;
use crate::error::{invalid, Error, Result};
use crate::eval::{self, Method, MethodOptions, WaldRun};
use crate::gsa::gsa_sharpen;
use crate::hysure::{hysure_sharpen, SolveTrace};
use crate::metrics::QualityReport;
use crate::mtfglp::mtfglp_sharpen;
use crate::pca::{pca_composite, pca_fit};
use crate::preprocess::{self, BandReason, SensorModel};
use crate::raster::{HyperCube, PanImage};
use crate::report::{fmt_sig, full_table, reduced_table, section};
use crate::sensor_estimate::{estimate_sensor, SensorEstimateOptions};
use crate::tiling::{plan_tiles, TileGrid};

/// Stride mixing the tile index into the run seed (odd, so distinct tiles
/// never collide).
pub const TILE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Deterministic per-tile solver seed.
pub fn tile_seed(run_seed: u64, tile_index: usize) -> u64 {
    run_seed ^ (tile_index as u64).wrapping_mul(TILE_SEED_STRIDE)
}

/// Largest low-resolution window used when estimating the sensor from data;
/// larger scenes are center-cropped to bound the normal-equation assembly.
const ESTIMATION_MAX_LOW_SIDE: usize = 64;

/// Everything produced for one fusion method.
#[derive(Debug)]
pub struct MethodOutcome {
    pub method: Method,
    pub fused: HyperCube,
    /// Reduced-resolution evaluation, when the `wald` protocol is enabled.
    pub wald: Option<WaldRun>,
    /// Full-resolution evaluation, when the `full` protocol is enabled.
    pub full: Option<QualityReport>,
    /// Per-tile solver traces (variational method only), in tile order.
    pub traces: Vec<SolveTrace>,
}

/// Result of a complete pipeline run.
#[derive(Debug)]
pub struct RunSummary {
    pub outcomes: Vec<MethodOutcome>,
    pub report_text: String,
    /// Files written, in write order; the report is last.
    pub written: Vec<PathBuf>,
}

/// Worker count actually used: `threads` when positive, otherwise the
/// machine's available parallelism (at least 1).
pub fn resolve_threads(threads: usize) -> usize {
    if threads > 0 {
        threads
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
}

/// Resolution ratio between a registered cube/pan pair: the configured value
/// when given (checked against the grids), otherwise inferred from the shapes.
pub fn resolve_ratio(hs: &HyperCube, pan: &PanImage, configured: Option<usize>) -> Result<usize> {
    let (hr, hc) = (hs.rows(), hs.cols());
    let (pr, pc) = (pan.rows(), pan.cols());
    let ratio = match configured {
        Some(r) => r,
        None => {
            if hr == 0 || pr % hr != 0 || pc % hc != 0 || pr / hr != pc / hc {
                return invalid(format!(
                    "cannot infer a resolution ratio from pan {pr} x {pc} over cube {hr} x {hc}; \
                     set sensor.ratio explicitly"
                ));
            }
            pr / hr
        }
    };
    if ratio < 2 {
        return invalid(format!("resolution ratio must be at least 2, got {ratio}"));
    }
    if pr != hr * ratio || pc != hc * ratio {
        return invalid(format!(
            "pan {pr} x {pc} is not exactly {ratio}x the cube grid {hr} x {hc}; \
             register and crop the pair first"
        ));
    }
    Ok(ratio)
}

/// Tile side actually used: the configured size, shrunk to the smallest
/// ratio multiple covering the raster so small scenes are not padded out to
/// a mostly-synthetic tile.
pub fn effective_tile_size(
    tile_size: usize,
    rows: usize,
    cols: usize,
    ratio: usize,
) -> Result<usize> {
    if tile_size == 0 || tile_size % ratio != 0 {
        return invalid(format!(
            "tile size {tile_size} must be a positive multiple of the resolution ratio {ratio}"
        ));
    }
    let cover = rows.max(cols).div_ceil(ratio) * ratio;
    Ok(tile_size.min(cover))
}

fn crop_cube(
    cube: &HyperCube,
    r0: usize,
    c0: usize,
    rows: usize,
    cols: usize,
) -> Result<HyperCube> {
    let mut data = Vec::with_capacity(cube.bands() * rows * cols);
    for b in 0..cube.bands() {
        let plane = cube.band(b);
        for r in r0..r0 + rows {
            data.extend_from_slice(&plane[r * cube.cols() + c0..r * cube.cols() + c0 + cols]);
        }
    }
    Ok(HyperCube::from_data(cube.bands(), rows, cols, data)?.metadata_like(cube))
}

fn crop_pan(pan: &PanImage, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<PanImage> {
    let mut data = Vec::with_capacity(rows * cols);
    for r in r0..r0 + rows {
        data.extend_from_slice(&pan.data()[r * pan.cols() + c0..r * pan.cols() + c0 + cols]);
    }
    PanImage::from_data(rows, cols, data)?.with_gsd(pan.gsd_m)
}

/// Largest top-left sub-extent whose cube grid is divisible by the ratio,
/// as required by the degrade-then-fuse protocol.
pub fn wald_pair<'a>(
    hs: &'a HyperCube,
    pan: &'a PanImage,
    ratio: usize,
) -> Result<(Cow<'a, HyperCube>, Cow<'a, PanImage>)> {
    let wr = (hs.rows() / ratio) * ratio;
    let wc = (hs.cols() / ratio) * ratio;
    if wr == 0 || wc == 0 {
        return invalid(format!(
            "cube {} x {} is too small for reduced-resolution evaluation at ratio {ratio}",
            hs.rows(),
            hs.cols()
        ));
    }
    if wr == hs.rows() && wc == hs.cols() {
        return Ok((Cow::Borrowed(hs), Cow::Borrowed(pan)));
    }
    Ok((
        Cow::Owned(crop_cube(hs, 0, 0, wr, wc)?),
        Cow::Owned(crop_pan(pan, 0, 0, wr * ratio, wc * ratio)?),
    ))
}

/// Centered crop bounding the least-squares problem when estimating the
/// sensor from a large scene.
fn estimation_pair<'a>(
    hs: &'a HyperCube,
    pan: &'a PanImage,
    ratio: usize,
) -> Result<(Cow<'a, HyperCube>, Cow<'a, PanImage>)> {
    let lr = hs.rows().min(ESTIMATION_MAX_LOW_SIDE);
    let lc = hs.cols().min(ESTIMATION_MAX_LOW_SIDE);
    if lr == hs.rows() && lc == hs.cols() {
        return Ok((Cow::Borrowed(hs), Cow::Borrowed(pan)));
    }
    let r0 = (hs.rows() - lr) / 2;
    let c0 = (hs.cols() - lc) / 2;
    Ok((
        Cow::Owned(crop_cube(hs, r0, c0, lr, lc)?),
        Cow::Owned(crop_pan(
            pan,
            r0 * ratio,
            c0 * ratio,
            lr * ratio,
            lc * ratio,
        )?),
    ))
}

fn screen_stage(hs: HyperCube, config: &RunConfig) -> Result<(HyperCube, Vec<String>)> {
    if !config.screen.enabled {
        return Ok((hs, vec!["band screening disabled".to_string()]));
    }
    let mut lines = Vec::new();
    let intervals: &[(f64, f64)] = if hs.wavelengths_nm.is_some() {
        &config.screen.absorption_nm
    } else {
        lines.push("no wavelength table; absorption intervals skipped".to_string());
        &[]
    };
    let mask = preprocess::screen_bands(&hs, intervals, config.screen.snr_threshold)?;
    lines.insert(
        0,
        format!(
            "kept {} of {} bands ({} atmospheric, {} low snr at threshold {})",
            mask.kept(),
            hs.bands(),
            mask.dropped(BandReason::Atmospheric),
            mask.dropped(BandReason::LowSnr),
            fmt_sig(config.screen.snr_threshold),
        ),
    );
    let screened = preprocess::apply_band_mask(&hs, &mask)?;
    Ok((screened, lines))
}

/// Gaussian MTF sensor model with a uniform spectral response; `psf_size` 0
/// picks the automatic kernel support for the gain/ratio pair.
pub fn gaussian_model(
    bands: usize,
    ratio: usize,
    gain: f64,
    psf_size: usize,
) -> Result<SensorModel> {
    if psf_size == 0 {
        SensorModel::gaussian(bands, ratio, gain)
    } else {
        if bands == 0 {
            return invalid("model needs at least one band");
        }
        let kernel = preprocess::mtf_kernel(gain, ratio, psf_size)?;
        SensorModel::new(
            vec![1.0 / bands as f64; bands],
            kernel,
            psf_size,
            ratio,
            vec![gain; bands],
        )
    }
}

/// Sensor model estimated from a registered pair; large scenes are reduced to
/// a centered crop before the least-squares fit. Returns the model and the
/// low-resolution window actually used.
pub fn estimate_model(
    hs: &HyperCube,
    pan: &PanImage,
    ratio: usize,
    opts: &SensorEstimateOptions,
) -> Result<(SensorModel, (usize, usize))> {
    let (hs_e, pan_e) = estimation_pair(hs, pan, ratio)?;
    let model = estimate_sensor(&hs_e, &pan_e, ratio, opts)
        .map_err(|e| e.with_context("sensor estimation"))?;
    Ok((model, (hs_e.rows(), hs_e.cols())))
}

fn build_model(
    hs: &HyperCube,
    pan: &PanImage,
    ratio: usize,
    config: &RunConfig,
) -> Result<(SensorModel, Vec<String>)> {
    match config.sensor.mode {
        SensorMode::Gaussian => {
            let gain = config.sensor.mtf_gain;
            let model = gaussian_model(hs.bands(), ratio, gain, config.sensor.psf_size)?;
            let lines = vec![format!(
                "gaussian psf ({0} x {0} taps), mtf gain at nyquist {1}, uniform spectral response",
                model.psf_size(),
                fmt_sig(gain),
            )];
            Ok((model, lines))
        }
        SensorMode::Estimate => {
            let opts = SensorEstimateOptions {
                psf_size: config.sensor.psf_size,
                smooth_response: config.sensor.smooth_response,
                smooth_psf: config.sensor.smooth_psf,
                ..SensorEstimateOptions::default()
            };
            let (model, (win_r, win_c)) = estimate_model(hs, pan, ratio, &opts)?;
            let lines = vec![
                format!(
                    "estimated from data: psf {0} x {0} taps, mtf gain at nyquist {1}",
                    model.psf_size(),
                    fmt_sig(model.mtf_gain_nyquist()[0]),
                ),
                format!("estimation window: {win_r} x {win_c} low-resolution pixels"),
            ];
            Ok((model, lines))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fuse_tile(
    grid: &TileGrid,
    index: usize,
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    method: Method,
    opts: &MethodOptions,
    run_seed: u64,
) -> Result<(HyperCube, Option<SolveTrace>)> {
    let hs_tile = grid.extract_tile(hs, index)?;
    let pan_tile = grid.extract_pan_tile(pan, index)?;
    match method {
        Method::Gsa => gsa_sharpen(&hs_tile, &pan_tile, model).map(|(c, _)| (c, None)),
        Method::MtfGlp => {
            mtfglp_sharpen(&hs_tile, &pan_tile, model, opts.gain_mode).map(|(c, _)| (c, None))
        }
        Method::Hysure => {
            let mut params = opts.hysure.clone();
            params.seed = tile_seed(run_seed, index);
            hysure_sharpen(&hs_tile, &pan_tile, model, &params).map(|(c, t)| (c, Some(t)))
        }
    }
}

/// What one worker brings back: (tile index, fusion outcome) per tile.
type TileOutcomes = Vec<(usize, Result<(HyperCube, Option<SolveTrace>)>)>;

/// Fuse every tile of a registered pair across `workers` threads and merge.
///
/// Tiles are distributed round-robin, but each tile's result depends only on
/// the inputs and its index, so the merged cube and the returned traces are
/// identical for any worker count. The first failing tile (by index) aborts
/// the run with its tile and method named.
#[allow(clippy::too_many_arguments)]
pub fn run_tiled(
    hs: &HyperCube,
    pan: &PanImage,
    model: &SensorModel,
    method: Method,
    opts: &MethodOptions,
    grid: &TileGrid,
    run_seed: u64,
    workers: usize,
) -> Result<(HyperCube, Vec<SolveTrace>)> {
    let n = grid.len();
    let workers = workers.max(1).min(n);
    let gathered: Vec<TileOutcomes> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    let mut index = w;
                    while index < n {
                        out.push((
                            index,
                            fuse_tile(grid, index, hs, pan, model, method, opts, run_seed),
                        ));
                        index += workers;
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("tile worker panicked"))
            .collect()
    });

    let mut slots: Vec<Option<(HyperCube, Option<SolveTrace>)>> = (0..n).map(|_| None).collect();
    let mut first_err: Option<(usize, Error)> = None;
    for (index, res) in gathered.into_iter().flatten() {
        match res {
            Ok(v) => slots[index] = Some(v),
            Err(e) => {
                if first_err.as_ref().is_none_or(|(j, _)| index < *j) {
                    first_err = Some((index, e));
                }
            }
        }
    }
    if let Some((index, e)) = first_err {
        return Err(e.with_context(&format!("{method} on tile {index}")));
    }
    let mut tiles = Vec::with_capacity(n);
    let mut traces = Vec::new();
    for slot in slots {
        let (cube, trace) = slot.expect("every tile accounted for");
        tiles.push(cube);
        if let Some(t) = trace {
            traces.push(t);
        }
    }
    let fused = grid.merge_tiles(&tiles)?;
    Ok((fused, traces))
}

/// Run one configured pipeline end to end, writing outputs under
/// `config.output.dir`. `threads` of 0 uses the available parallelism.
pub fn run_pipeline(config: &RunConfig, threads: usize) -> Result<RunSummary> {
    let methods = config.methods()?;
    let gain_mode = config.gain_mode()?;
    let workers = resolve_threads(threads);
    let do_wald = config.eval.protocols.iter().any(|p| p == "wald");
    let do_full = config.eval.protocols.iter().any(|p| p == "full");

    let hs_raw = envi::read_raster(Path::new(&config.inputs.hs))?
        .into_cube()
        .map_err(|e| e.with_context(&config.inputs.hs))?;
    let pan = envi::read_raster(Path::new(&config.inputs.pan))?
        .into_pan()
        .map_err(|e| e.with_context(&config.inputs.pan))?;
    let input_shape = hs_raw.shape();
    let input_gsd = (hs_raw.gsd_m, pan.gsd_m);

    let ratio = resolve_ratio(&hs_raw, &pan, config.sensor.ratio)?;
    let (hs, screen_lines) = screen_stage(hs_raw, config)?;
    let (model, sensor_lines) = build_model(&hs, &pan, ratio, config)?;

    let tile = effective_tile_size(config.tiling.tile_size, pan.rows(), pan.cols(), ratio)?;
    let grid = plan_tiles(pan.rows(), pan.cols(), tile, ratio, config.tiling.pad)?;

    let wald_inputs = if do_wald {
        Some(wald_pair(&hs, &pan, ratio)?)
    } else {
        None
    };

    let mut outcomes = Vec::with_capacity(methods.len());
    for &method in &methods {
        let opts = MethodOptions {
            gain_mode,
            hysure: config.hysure.to_params(config.seed),
        };
        let (fused, traces) = run_tiled(
            &hs,
            &pan,
            &model,
            method,
            &opts,
            &grid,
            config.seed,
            workers,
        )?;

        let full = if do_full {
            let window = config.eval.window.min(hs.rows()).min(hs.cols());
            Some(
                eval::full_resolution_eval(&fused, &hs, &pan, &model, window)
                    .map_err(|e| e.with_context(&format!("full-resolution scores, {method}")))?,
            )
        } else {
            None
        };

        let wald = match &wald_inputs {
            Some((hs_w, pan_w)) => {
                let window = config.eval.window.min(hs_w.rows()).min(hs_w.cols());
                let run = eval::wald_protocol_with(
                    hs_w,
                    pan_w,
                    &model,
                    window,
                    &method.to_string(),
                    |h, p, m| {
                        let tile_w = effective_tile_size(
                            config.tiling.tile_size,
                            p.rows(),
                            p.cols(),
                            ratio,
                        )?;
                        let grid_w =
                            plan_tiles(p.rows(), p.cols(), tile_w, ratio, config.tiling.pad)?;
                        run_tiled(h, p, m, method, &opts, &grid_w, config.seed, workers)
                            .map(|(cube, _)| cube)
                    },
                )
                .map_err(|e| e.with_context(&format!("reduced-resolution protocol, {method}")))?;
                Some(run)
            }
            None => None,
        };

        outcomes.push(MethodOutcome {
            method,
            fused,
            wald,
            full,
            traces,
        });
    }

    // Write rasters and composites, then the report.
    let out_dir = PathBuf::from(&config.output.dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Io(e).with_context(&out_dir.display().to_string()))?;
    let mut written = Vec::new();
    let mut output_names = Vec::new();
    for outcome in &outcomes {
        let stem = format!("fused_{}", outcome.method);
        envi::write_cube(&out_dir.join(&stem), &outcome.fused)?;
        for ext in ["hdr", "bin"] {
            written.push(out_dir.join(format!("{stem}.{ext}")));
            output_names.push(format!("{stem}.{ext}"));
        }
        if config.pca.enabled {
            let fit = pca_fit(&outcome.fused, config.pca.band_range_nm)
                .map_err(|e| e.with_context(&format!("component analysis, {}", outcome.method)))?;
            let composite = pca_composite(
                &outcome.fused,
                &fit,
                config.pca.components,
                config.pca.stretch,
            )?;
            let name = format!("composite_{}.png", outcome.method);
            composite.write_png(&out_dir.join(&name))?;
            written.push(out_dir.join(&name));
            output_names.push(name);
        }
    }
    output_names.push("report.txt".to_string());

    let report_text = render_report(
        config,
        input_shape,
        input_gsd,
        ratio,
        &screen_lines,
        &sensor_lines,
        &grid,
        &outcomes,
        &output_names,
    );
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, &report_text)
        .map_err(|e| Error::Io(e).with_context(&report_path.display().to_string()))?;
    written.push(report_path);

    Ok(RunSummary {
        outcomes,
        report_text,
        written,
    })
}

#[allow(clippy::too_many_arguments)]
fn render_report(
    config: &RunConfig,
    input_shape: (usize, usize, usize),
    input_gsd: (f64, f64),
    ratio: usize,
    screen_lines: &[String],
    sensor_lines: &[String],
    grid: &TileGrid,
    outcomes: &[MethodOutcome],
    output_names: &[String],
) -> String {
    let mut text = String::from("hypersharp run report\n\n");

    text.push_str(&section("inputs"));
    let (bands, rows, cols) = input_shape;
    text.push_str(&format!(
        "hs: {} ({bands} bands, {rows} x {cols}, gsd {} m)\n",
        config.inputs.hs,
        fmt_sig(input_gsd.0)
    ));
    text.push_str(&format!(
        "pan: {} ({} x {}, gsd {} m)\n",
        config.inputs.pan,
        grid.source_rows,
        grid.source_cols,
        fmt_sig(input_gsd.1)
    ));
    text.push_str(&format!("resolution ratio: {ratio}\n\n"));

    text.push_str(&section("band screening"));
    for line in screen_lines {
        text.push_str(line);
        text.push('\n');
    }
    text.push('\n');

    text.push_str(&section("sensor model"));
    for line in sensor_lines {
        text.push_str(line);
        text.push('\n');
    }
    text.push('\n');

    text.push_str(&section("tiling"));
    text.push_str(&format!(
        "tile size {}, grid {} x {} ({} tiles), padding {}\n\n",
        grid.tile_size,
        grid.grid_rows,
        grid.grid_cols,
        grid.len(),
        grid.pad_mode
    ));

    text.push_str(&section("methods"));
    let names: Vec<String> = outcomes.iter().map(|o| o.method.to_string()).collect();
    text.push_str(&format!("selected: {}\n", names.join(", ")));
    if outcomes.iter().any(|o| o.method == Method::MtfGlp) {
        text.push_str(&format!("mtfglp gain mode: {}\n", config.mtfglp.gain_mode));
    }
    if outcomes.iter().any(|o| o.method == Method::Hysure) {
        let h = &config.hysure;
        text.push_str(&format!(
            "hysure: subspace {}, lambda_m {}, lambda_phi {}, mu {}, max {} iterations, \
             tolerance {}, seed {}\n",
            h.subspace_dim,
            fmt_sig(h.lambda_m),
            fmt_sig(h.lambda_phi),
            fmt_sig(h.mu),
            h.max_iter,
            fmt_sig(h.rel_tol),
            config.seed
        ));
    }
    text.push('\n');

    let reduced: Vec<(String, QualityReport)> = outcomes
        .iter()
        .filter_map(|o| o.wald.as_ref().map(|w| (w.label.clone(), w.report.clone())))
        .collect();
    if !reduced.is_empty() {
        text.push_str(&section("reduced-resolution scores"));
        if let Some(first) = outcomes.iter().find_map(|o| o.wald.as_ref()) {
            text.push_str(&format!(
                "window {}, degraded-input checksum {}\n",
                first.report.window, first.input_checksum
            ));
        }
        text.push_str(&reduced_table(&reduced));
        text.push('\n');
    }

    let full: Vec<(String, QualityReport)> = outcomes
        .iter()
        .filter_map(|o| o.full.as_ref().map(|r| (o.method.to_string(), r.clone())))
        .collect();
    if !full.is_empty() {
        text.push_str(&section("full-resolution scores"));
        if let Some((_, first)) = full.first() {
            text.push_str(&format!("window {}\n", first.window));
        }
        text.push_str(&full_table(&full));
        text.push('\n');
    }

    for outcome in outcomes {
        if outcome.traces.is_empty() {
            continue;
        }
        text.push_str(&section("hysure solve summary"));
        for (i, t) in outcome.traces.iter().enumerate() {
            let status = if t.converged {
                "converged"
            } else {
                "hit max iterations"
            };
            let objective = t.objective.last().copied().unwrap_or(f64::NAN);
            text.push_str(&format!(
                "tile {i}: {} iterations, {status}, final objective {}\n",
                t.iterations,
                fmt_sig(objective)
            ));
        }
        text.push('\n');
    }

    text.push_str(&section("outputs"));
    for name in output_names {
        text.push_str(name);
        text.push('\n');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::scene::make_scene;

    /// Write a small synthetic pair (96 x 96 pan over a 24 x 24 cube,
    /// ratio 4) to `dir` and return a config for it.
    fn scene_config(dir: &Path) -> RunConfig {
        let scene = make_scene(96, 96, 4, 3, 4, 0.0, 11).unwrap();
        envi::write_cube(&dir.join("scene_hs"), &scene.hs).unwrap();
        envi::write_pan(&dir.join("scene_pan"), &scene.pan).unwrap();
        let text = format!(
            r#"
            seed = 7

            [inputs]
            hs = "{hs}"
            pan = "{pan}"

            [output]
            dir = "{out}"

            [screen]
            enabled = false

            [tiling]
            tile_size = 48

            [eval]
            window = 8

            [hysure]
            max_iter = 20
            "#,
            hs = dir.join("scene_hs").display(),
            pan = dir.join("scene_pan").display(),
            out = dir.join("out").display(),
        );
        RunConfig::parse(&text).unwrap()
    }

    #[test]
    fn end_to_end_run_writes_rasters_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let config = scene_config(dir.path());
        let summary = run_pipeline(&config, 2).unwrap();

        assert_eq!(summary.outcomes.len(), 3);
        for outcome in &summary.outcomes {
            assert_eq!(outcome.fused.shape(), (4, 96, 96));
            let wald = outcome.wald.as_ref().unwrap();
            assert!(wald.report.uiqi.unwrap().is_finite());
            assert!(wald.report.ergas.unwrap().is_finite());
            let full = outcome.full.as_ref().unwrap();
            assert!(full.q_star.unwrap().is_finite());
        }
        // The variational method traces each tile.
        let hysure = summary
            .outcomes
            .iter()
            .find(|o| o.method == Method::Hysure)
            .unwrap();
        assert_eq!(hysure.traces.len(), 4); // 96/48 = 2 tiles per side

        for path in &summary.written {
            assert!(path.exists(), "missing output {}", path.display());
        }
        let report = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
        assert_eq!(report, summary.report_text);
        for needle in [
            "== inputs ==",
            "== sensor model ==",
            "== reduced-resolution scores ==",
            "== full-resolution scores ==",
            "== hysure solve summary ==",
            "fused_gsa.bin",
            "resolution ratio: 4",
        ] {
            assert!(
                report.contains(needle),
                "report missing `{needle}`:\n{report}"
            );
        }
    }

    #[test]
    fn outputs_do_not_depend_on_worker_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = scene_config(dir.path());
        let out_a = dir.path().join("out_a");
        let out_b = dir.path().join("out_b");

        config.output.dir = out_a.display().to_string();
        run_pipeline(&config, 1).unwrap();
        config.output.dir = out_b.display().to_string();
        run_pipeline(&config, 4).unwrap();

        for name in [
            "fused_gsa.bin",
            "fused_mtfglp.bin",
            "fused_hysure.bin",
            "report.txt",
        ] {
            let a = std::fs::read(out_a.join(name)).unwrap();
            let b = std::fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between worker counts");
        }
    }

    #[test]
    fn protocols_can_be_disabled() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = scene_config(dir.path());
        config.eval.protocols = vec!["full".to_string()];
        config.methods = vec!["gsa".to_string()];
        let summary = run_pipeline(&config, 1).unwrap();
        assert_eq!(summary.outcomes.len(), 1);
        assert!(summary.outcomes[0].wald.is_none());
        assert!(summary.outcomes[0].full.is_some());
        assert!(!summary.report_text.contains("reduced-resolution scores"));
        assert!(summary.report_text.contains("full-resolution scores"));
    }

    #[test]
    fn per_tile_seeds_are_distinct_and_stable() {
        assert_eq!(tile_seed(7, 0), 7);
        let s1 = tile_seed(7, 1);
        let s2 = tile_seed(7, 2);
        assert_ne!(s1, s2);
        assert_ne!(s1, 7);
        assert_eq!(s1, tile_seed(7, 1));
    }

    #[test]
    fn missing_inputs_surface_as_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"
            [inputs]
            hs = "{missing}"
            pan = "{missing}"

            [output]
            dir = "{out}"
            "#,
            missing = dir.path().join("nope").display(),
            out = dir.path().join("out").display(),
        );
        let config = RunConfig::parse(&text).unwrap();
        match run_pipeline(&config, 1) {
            Err(Error::Format(m)) => assert!(m.contains("nope"), "{m}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn ratio_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = scene_config(dir.path());
        config.sensor.ratio = Some(6); // pair was built at ratio 4
        match run_pipeline(&config, 1) {
            Err(Error::InvalidInput(m)) => assert!(m.contains("register"), "{m}"),
            other => panic!("expected invalid input, got {other:?}"),
        }
    }
}
