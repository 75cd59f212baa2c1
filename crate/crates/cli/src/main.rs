//! Command-line front end for the hypersharp toolkit.
//!
//! Every subcommand is a thin wrapper over `hypersharp_core`: it parses
//! flags, loads rasters, calls one library entry point, and prints results
//! with the same 5-significant-digit formatting the run reports use.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 file or format
//! problems, 3 numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use hypersharp_core::config::{RunConfig, DEFAULT_ABSORPTION_INTERVALS_NM, DEFAULT_SNR_THRESHOLD};
use hypersharp_core::envi;
use hypersharp_core::eval::{self, Method, MethodOptions};
use hypersharp_core::hysure::HysureParams;
use hypersharp_core::mtfglp::GainMode;
use hypersharp_core::pca;
use hypersharp_core::pipeline;
use hypersharp_core::preprocess::{self, BandReason, DEFAULT_HS_MTF_GAIN};
use hypersharp_core::report::{fmt_opt, fmt_sig};
use hypersharp_core::scene;
use hypersharp_core::sensor_estimate::SensorEstimateOptions;
use hypersharp_core::tiling::{self, PadMode};
use hypersharp_core::{Error, HyperCube, PanImage, Result, SensorModel};

#[derive(Parser)]
#[command(
    name = "hypersharp",
    version,
    about = "Pansharpening for registered hyperspectral / panchromatic pairs",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen noisy and atmospheric bands out of a cube
    Preprocess(PreprocessArgs),
    /// Fuse a cube with its pan image using one method
    Sharpen(SharpenArgs),
    /// Score a method at reduced resolution (degrade, fuse, compare)
    EvalWald(EvalWaldArgs),
    /// Score an already fused cube at full resolution
    EvalFull(EvalFullArgs),
    /// Render a false-colour principal-component PNG from a cube
    Composite(CompositeArgs),
    /// Generate a synthetic registered pair with known ground truth
    MakeScene(MakeSceneArgs),
    /// Run the full pipeline described by a TOML config
    Run(RunArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input cube header (.hdr with a .bin payload alongside)
    #[arg(long)]
    hs: PathBuf,
    /// Output path for the screened cube
    #[arg(long)]
    out: PathBuf,
    /// Blocks-based SNR threshold below which a band is dropped
    #[arg(long, default_value_t = DEFAULT_SNR_THRESHOLD)]
    snr_threshold: f64,
    /// Keep bands inside the water-absorption windows
    #[arg(long)]
    keep_absorption: bool,
}

/// Flags shared by every command that needs a sensor model.
#[derive(Args)]
struct SensorArgs {
    /// Sensor model source: gaussian or estimate
    #[arg(long, default_value = "gaussian")]
    sensor: String,
    /// MTF gain at Nyquist for the gaussian model
    #[arg(long, default_value_t = DEFAULT_HS_MTF_GAIN)]
    mtf_gain: f64,
    /// Odd PSF side in pan pixels; 0 picks an automatic size
    #[arg(long, default_value_t = 0)]
    psf_size: usize,
}

impl SensorArgs {
    fn build(&self, hs: &HyperCube, pan: &PanImage, ratio: usize) -> Result<SensorModel> {
        match self.sensor.trim().to_ascii_lowercase().as_str() {
            "gaussian" => pipeline::gaussian_model(hs.bands(), ratio, self.mtf_gain, self.psf_size),
            "estimate" => {
                let opts = SensorEstimateOptions {
                    psf_size: self.psf_size,
                    ..SensorEstimateOptions::default()
                };
                pipeline::estimate_model(hs, pan, ratio, &opts).map(|(model, _)| model)
            }
            other => Err(Error::InvalidInput(format!(
                "unknown sensor mode `{other}` (expected gaussian or estimate)"
            ))),
        }
    }
}

#[derive(Args)]
struct SharpenArgs {
    /// Input cube header
    #[arg(long)]
    hs: PathBuf,
    /// Input pan header
    #[arg(long)]
    pan: PathBuf,
    /// Output path for the fused cube
    #[arg(long)]
    out: PathBuf,
    /// Fusion method: gsa, mtfglp, or hysure
    #[arg(long)]
    method: String,
    /// Resolution ratio; inferred from the raster shapes when omitted
    #[arg(long)]
    ratio: Option<usize>,
    /// Tile side in pan pixels (shrunk automatically for small scenes)
    #[arg(long, default_value_t = 360)]
    tile_size: usize,
    /// Tile padding: reflect or zero
    #[arg(long, default_value = "reflect")]
    pad: String,
    /// Detail gain mode for mtfglp: unit, regression, or hpm
    #[arg(long, default_value = "regression")]
    gain_mode: String,
    /// Seed for the per-tile subspace draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses the available parallelism
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    sensor: SensorArgs,
}

#[derive(Args)]
struct EvalWaldArgs {
    /// Input cube header
    #[arg(long)]
    hs: PathBuf,
    /// Input pan header
    #[arg(long)]
    pan: PathBuf,
    /// Method under test: gsa, mtfglp, hysure, upsample, or identity
    #[arg(long)]
    method: String,
    /// Resolution ratio; inferred from the raster shapes when omitted
    #[arg(long)]
    ratio: Option<usize>,
    /// Side of the sliding comparison window
    #[arg(long, default_value_t = 32)]
    window: usize,
    /// Detail gain mode for mtfglp: unit, regression, or hpm
    #[arg(long, default_value = "regression")]
    gain_mode: String,
    /// Seed for the subspace draw when the method needs one
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sensor: SensorArgs,
}

#[derive(Args)]
struct EvalFullArgs {
    /// Fused cube header
    #[arg(long)]
    fused: PathBuf,
    /// Original cube header
    #[arg(long)]
    hs: PathBuf,
    /// Original pan header
    #[arg(long)]
    pan: PathBuf,
    /// Resolution ratio; inferred from the raster shapes when omitted
    #[arg(long)]
    ratio: Option<usize>,
    /// Side of the sliding comparison window
    #[arg(long, default_value_t = 32)]
    window: usize,
    #[command(flatten)]
    sensor: SensorArgs,
}

#[derive(Args)]
struct CompositeArgs {
    /// Input cube header
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PNG path
    #[arg(long)]
    out: PathBuf,
    /// Principal components mapped to R,G,B
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0usize, 1, 2])]
    components: Vec<usize>,
    /// Percentile stretch applied to each channel
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [2.0f64, 98.0])]
    stretch: Vec<f64>,
    /// Restrict the analysis to bands inside this wavelength range (nm)
    #[arg(long, value_delimiter = ',', num_args = 2)]
    band_range: Option<Vec<f64>>,
}

#[derive(Args)]
struct MakeSceneArgs {
    /// Output prefix; writes <prefix>_truth, <prefix>_hs, <prefix>_pan
    #[arg(long)]
    out: PathBuf,
    /// Scene rows at pan resolution
    #[arg(long, default_value_t = 96)]
    rows: usize,
    /// Scene columns at pan resolution
    #[arg(long, default_value_t = 96)]
    cols: usize,
    /// Number of spectral bands
    #[arg(long, default_value_t = 8)]
    bands: usize,
    /// Number of planted endmember materials
    #[arg(long, default_value_t = 4)]
    endmembers: usize,
    /// Resolution ratio between pan and cube grids
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    /// Gaussian noise added to the degraded pair
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Seed for the scene generator
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; 0 uses the available parallelism
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) => 1,
        Error::Format(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Sharpen(a) => cmd_sharpen(a),
        Command::EvalWald(a) => cmd_eval_wald(a),
        Command::EvalFull(a) => cmd_eval_full(a),
        Command::Composite(a) => cmd_composite(a),
        Command::MakeScene(a) => cmd_make_scene(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn load_cube(path: &Path) -> Result<HyperCube> {
    envi::read_raster(path)?
        .into_cube()
        .map_err(|e| e.with_context(&path.display().to_string()))
}

fn load_pan(path: &Path) -> Result<PanImage> {
    envi::read_raster(path)?
        .into_pan()
        .map_err(|e| e.with_context(&path.display().to_string()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Io(e).with_context(&parent.display().to_string()))?;
        }
    }
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let hs = load_cube(&a.hs)?;
    let intervals: &[(f64, f64)] = if a.keep_absorption {
        &[]
    } else if hs.wavelengths_nm.is_some() {
        &DEFAULT_ABSORPTION_INTERVALS_NM
    } else {
        println!("no wavelength table; absorption intervals skipped");
        &[]
    };
    let mask = preprocess::screen_bands(&hs, intervals, a.snr_threshold)?;
    println!(
        "kept {} of {} bands ({} atmospheric, {} low snr at threshold {})",
        mask.kept(),
        hs.bands(),
        mask.dropped(BandReason::Atmospheric),
        mask.dropped(BandReason::LowSnr),
        fmt_sig(a.snr_threshold),
    );
    let screened = preprocess::apply_band_mask(&hs, &mask)?;
    ensure_parent(&a.out)?;
    envi::write_cube(&a.out, &screened)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn method_options(gain_mode: &str, seed: u64) -> Result<MethodOptions> {
    Ok(MethodOptions {
        gain_mode: GainMode::from_str(gain_mode)?,
        hysure: HysureParams {
            seed,
            ..HysureParams::default()
        },
    })
}

fn cmd_sharpen(a: SharpenArgs) -> Result<()> {
    let method = Method::from_str(&a.method)?;
    let pad = PadMode::from_str(&a.pad)?;
    let opts = method_options(&a.gain_mode, a.seed)?;
    let hs = load_cube(&a.hs)?;
    let pan = load_pan(&a.pan)?;
    let ratio = pipeline::resolve_ratio(&hs, &pan, a.ratio)?;
    let model = a.sensor.build(&hs, &pan, ratio)?;
    let tile = pipeline::effective_tile_size(a.tile_size, pan.rows(), pan.cols(), ratio)?;
    let grid = tiling::plan_tiles(pan.rows(), pan.cols(), tile, ratio, pad)?;
    let workers = pipeline::resolve_threads(a.threads);
    println!(
        "{method}: ratio {ratio}, {} tiles of {tile} x {tile}, {workers} workers",
        grid.len()
    );
    let (fused, _traces) =
        pipeline::run_tiled(&hs, &pan, &model, method, &opts, &grid, a.seed, workers)?;
    ensure_parent(&a.out)?;
    envi::write_cube(&a.out, &fused)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval_wald(a: EvalWaldArgs) -> Result<()> {
    let hs_full = load_cube(&a.hs)?;
    let pan_full = load_pan(&a.pan)?;
    let ratio = pipeline::resolve_ratio(&hs_full, &pan_full, a.ratio)?;
    let (hs, pan) = pipeline::wald_pair(&hs_full, &pan_full, ratio)?;
    let model = a.sensor.build(&hs, &pan, ratio)?;
    let window = a.window.min(hs.rows()).min(hs.cols());
    let run = match a.method.trim().to_ascii_lowercase().as_str() {
        "upsample" => {
            eval::wald_protocol_with(&hs, &pan, &model, window, "upsample", |h, _p, m| {
                eval::upsample_baseline(h, m.ratio())
            })?
        }
        "identity" => {
            eval::wald_protocol_with(&hs, &pan, &model, window, "identity", |_h, _p, _m| {
                Ok(hs.as_ref().clone())
            })?
        }
        other => {
            let method = Method::from_str(other).map_err(|_| {
                Error::InvalidInput(format!(
                    "unknown method `{other}` (expected gsa, mtfglp, hysure, upsample, or identity)"
                ))
            })?;
            let opts = method_options(&a.gain_mode, a.seed)?;
            eval::wald_protocol(&hs, &pan, &model, method, &opts, window)?
        }
    };
    println!(
        "reduced-resolution protocol: ratio {ratio}, window {}",
        run.report.window
    );
    println!("method: {}", run.label);
    println!("degraded-input checksum: {}", run.input_checksum);
    println!("UIQI {}", fmt_opt(run.report.uiqi));
    println!("SAM {}", fmt_opt(run.report.sam_deg));
    println!("ERGAS {}", fmt_opt(run.report.ergas));
    Ok(())
}

fn cmd_eval_full(a: EvalFullArgs) -> Result<()> {
    let fused = load_cube(&a.fused)?;
    let hs = load_cube(&a.hs)?;
    let pan = load_pan(&a.pan)?;
    let ratio = pipeline::resolve_ratio(&hs, &pan, a.ratio)?;
    let model = a.sensor.build(&hs, &pan, ratio)?;
    let window = a.window.min(hs.rows()).min(hs.cols());
    let report = eval::full_resolution_eval(&fused, &hs, &pan, &model, window)?;
    println!("full-resolution protocol: ratio {ratio}, window {window}");
    println!("D_lambda {}", fmt_opt(report.d_lambda_k));
    println!("D_s {}", fmt_opt(report.d_s_star));
    println!("Q* {}", fmt_opt(report.q_star));
    Ok(())
}

fn cmd_composite(a: CompositeArgs) -> Result<()> {
    let cube = load_cube(&a.input)?;
    let band_range = a.band_range.as_ref().map(|r| (r[0], r[1]));
    let components = [a.components[0], a.components[1], a.components[2]];
    let stretch = (a.stretch[0], a.stretch[1]);
    let fit = pca::pca_fit(&cube, band_range)?;
    let composite = pca::pca_composite(&cube, &fit, components, stretch)?;
    for channel in &composite.channels {
        let note = if channel.degenerate {
            " (degenerate, rendered flat)"
        } else {
            ""
        };
        println!(
            "{}: display range [{}, {}]{note}",
            channel.label,
            fmt_sig(channel.value_lo),
            fmt_sig(channel.value_hi),
        );
    }
    ensure_parent(&a.out)?;
    composite.write_png(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn cmd_make_scene(a: MakeSceneArgs) -> Result<()> {
    let scene = scene::make_scene(
        a.rows,
        a.cols,
        a.bands,
        a.endmembers,
        a.ratio,
        a.noise_std,
        a.seed,
    )?;
    ensure_parent(&a.out)?;
    let truth = suffixed(&a.out, "_truth.hdr");
    let hs = suffixed(&a.out, "_hs.hdr");
    let pan = suffixed(&a.out, "_pan.hdr");
    envi::write_cube(&truth, &scene.truth)?;
    envi::write_cube(&hs, &scene.hs)?;
    envi::write_pan(&pan, &scene.pan)?;
    println!(
        "scene: {} x {} pan, {} x {} cube, {} bands, ratio {}, noise {}, seed {}",
        a.rows,
        a.cols,
        scene.hs.rows(),
        scene.hs.cols(),
        a.bands,
        a.ratio,
        fmt_sig(a.noise_std),
        a.seed,
    );
    for (i, (r, c)) in scene.pure_patches.iter().enumerate() {
        println!("pure patch {i}: pan pixel ({r}, {c})");
    }
    for path in [&truth, &hs, &pan] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let config = RunConfig::load(&a.config)?;
    config.validate()?;
    let summary = pipeline::run_pipeline(&config, a.threads)?;
    print!("{}", summary.report_text);
    Ok(())
}
