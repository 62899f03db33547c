//! The `sldf` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 physics
//! validation failure (not a dark-field geometry), 4 processing failure.

pub mod manifest;
pub mod raster;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{
    edge_fwhm, effective_cutoff, fwhm_in_range, gen_bars, gen_ring, gen_two_plane, michelson_contrast, profile,
    BarGroup, BarOrientation, BarTargetSpec, FwhmMode, RingTargetSpec, SampleSpec, DEFAULT_NOISE_FLOOR,
};
use crate::imagecore::{Grid, Image};
use crate::optics::{simulate_stack, validate_darkfield, Boundary, Mode, OpticsConfig};
use crate::patterns::{make_pattern_set, PatternSpec, PROTOCOL_FREQ_DMD};
use crate::recon::{reconstruct_detailed, wiener_conventional, Apodization, ParameterSource, Provenance, ReconParams};
use crate::sectioning::{section_stack, CombineMode};
use manifest::{load_sample, load_stack, write_echo, write_sample, write_stack, ProcessingRecord};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PHYSICS: i32 = 3;
pub const EXIT_PROCESSING: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sldf", version, about = "Structured-light dark-field simulation and reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sample (bars, ring or two-plane) into a sample directory.
    GenerateTarget(GenerateTargetArgs),
    /// Simulate the fringe-modulated acquisition of a sample.
    Simulate(SimulateArgs),
    /// Reconstruct the resolution-enhanced image from a stack.
    Reconstruct(ReconstructArgs),
    /// Compute the optically sectioned image of a stack.
    Section(SectionArgs),
    /// Measure images: effective cutoff, line profiles, contrast, FWHM.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetKind {
    Bars,
    Ring,
    TwoPlane,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Pixel pitch in micrometers.
    #[arg(long, default_value_t = 0.1)]
    pub pitch_um: f64,
}

#[derive(Debug, Args)]
pub struct GenerateTargetArgs {
    pub kind: TargetKind,
    /// Output sample directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Bar group frequencies, cycles/um.
    #[arg(long, value_delimiter = ',')]
    pub freqs: Vec<f64>,
    /// Three-bar elements per group.
    #[arg(long, default_value_t = 1)]
    pub elements: usize,
    #[arg(long, value_enum, default_value_t = BarOrientationArg::Both)]
    pub orientation: BarOrientationArg,
    #[arg(long)]
    pub radius_um: Option<f64>,
    #[arg(long)]
    pub thickness_um: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Two-plane: defocus of the second plane, um.
    #[arg(long)]
    pub dz_um: Option<f64>,
    /// Two-plane: disk radius of the out-of-focus plane, um.
    #[arg(long)]
    pub disk_radius_um: Option<f64>,
    /// Two-plane: disk center of the out-of-focus plane, um.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub disk_center_um: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub disk_amplitude: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BarOrientationArg {
    Horizontal,
    Vertical,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Transmission,
    Reflectance,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sample directory written by generate-target.
    #[arg(long)]
    pub sample: PathBuf,
    /// Output stack directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with optional `pattern` and `optics` tables; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub orientations: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub phases: Option<Vec<f64>>,
    /// Fringe frequency on the DMD, cycles/mm.
    #[arg(long)]
    pub freq_dmd: Option<f64>,
    #[arg(long)]
    pub magnification: Option<f64>,
    /// Sample-plane fringe frequency, cycles/um; sets the magnification.
    #[arg(long, conflicts_with = "magnification")]
    pub fringe_freq: Option<f64>,
    #[arg(long)]
    pub modulation: Option<f64>,
    #[arg(long)]
    pub mean_level: Option<f64>,
    #[arg(long)]
    pub na_detection: Option<f64>,
    #[arg(long)]
    pub na_inner: Option<f64>,
    #[arg(long)]
    pub na_outer: Option<f64>,
    #[arg(long)]
    pub wavelength_um: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub read_noise: Option<f64>,
    #[arg(long)]
    pub photon_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Zero guard band in pixels (at least 16).
    #[arg(long)]
    pub guard_px: Option<usize>,
    /// Treat the field as periodic instead of zero-padding it.
    #[arg(long)]
    pub periodic: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ParamSourceArg {
    Manifest,
    Estimate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApodizationArg {
    Triangle,
    RaisedCosine,
    None,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub stack: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Default: manifest for simulated stacks, estimate for ingested ones.
    #[arg(long, value_enum)]
    pub params: Option<ParamSourceArg>,
    #[arg(long, default_value_t = 0.05)]
    pub wiener: f64,
    #[arg(long, value_enum, default_value_t = ApodizationArg::Triangle)]
    pub apodization: ApodizationArg,
    #[arg(long, default_value_t = 2)]
    pub upsample: usize,
    /// Search the whole correlation map instead of around the manifest fringe vector.
    #[arg(long)]
    pub global_search: bool,
    /// Also write the Wiener-deconvolved conventional image.
    #[arg(long)]
    pub wiener_conventional: bool,
    /// Also export 16-bit PGM previews.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CombineArg {
    Single,
    Mean,
    Max,
}

#[derive(Debug, Args)]
pub struct SectionArgs {
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = CombineArg::Mean)]
    pub combine: CombineArg,
    /// Orientation index for `--combine single`.
    #[arg(long)]
    pub orientation: Option<usize>,
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FwhmArg {
    Peak,
    Edge,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Image raster files.
    pub images: Vec<PathBuf>,
    /// Two images to compare; metrics for both plus ratios (second / first).
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub cutoff: bool,
    #[arg(long, default_value_t = DEFAULT_NOISE_FLOOR)]
    pub noise_floor: f64,
    /// Line endpoints x0,y0,x1,y1 in um from the image center.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub profile: Option<Vec<f64>>,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    /// Print the profile samples.
    #[arg(long)]
    pub table: bool,
    #[arg(long, value_enum)]
    pub fwhm: Option<FwhmArg>,
    /// Restrict the FWHM search to positions from,to (um along the profile).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub range: Option<Vec<f64>>,
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

fn usage(error: Error) -> CliError {
    let code = match error.root() {
        Error::NotDarkfield(_) => EXIT_PHYSICS,
        _ => EXIT_USAGE,
    };
    CliError { code, error }
}

fn processing(error: Error) -> CliError {
    let code = match error.root() {
        Error::NotDarkfield(_) => EXIT_PHYSICS,
        Error::Io(_) => EXIT_USAGE,
        _ => EXIT_PROCESSING,
    };
    CliError { code, error }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let mut out = String::new();
    match run(&cli, &mut out) {
        Ok(()) => {
            print!("{out}");
            0
        }
        Err(e) => {
            print!("{out}");
            eprintln!("error: {}", e.error);
            e.code
        }
    }
}

pub fn run(cli: &Cli, out: &mut String) -> CliResult<()> {
    match &cli.command {
        Command::GenerateTarget(a) => cmd_generate_target(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Reconstruct(a) => cmd_reconstruct(a, out),
        Command::Section(a) => cmd_section(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
    }
}

fn expect_len(values: &[f64], n: usize, flag: &str) -> Result<()> {
    if values.len() == n {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "--{flag} takes {n} comma-separated values, got {}",
            values.len()
        )))
    }
}

fn table_of<T: serde::Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::Format(format!("parameter echo: {e}")))
}

pub fn cmd_generate_target(a: &GenerateTargetArgs, out: &mut String) -> CliResult<()> {
    let grid = Grid::new(a.grid.width, a.grid.height, a.grid.pitch_um).map_err(usage)?;
    let require = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| usage(Error::InvalidConfig(format!("--{flag} is required for this target"))))
    };
    let ring_spec = || -> CliResult<RingTargetSpec> {
        Ok(RingTargetSpec {
            radius: require(a.radius_um, "radius-um")?,
            thickness: require(a.thickness_um, "thickness-um")?,
            amplitude: a.amplitude,
        })
    };
    let (sample, target, params) = match a.kind {
        TargetKind::Bars => {
            if a.freqs.is_empty() {
                return Err(usage(Error::InvalidConfig("--freqs is required for bars".into())));
            }
            let orientation = match a.orientation {
                BarOrientationArg::Horizontal => BarOrientation::Horizontal,
                BarOrientationArg::Vertical => BarOrientation::Vertical,
                BarOrientationArg::Both => BarOrientation::Both,
            };
            let mut spec = BarTargetSpec::new(
                a.freqs
                    .iter()
                    .map(|&frequency| BarGroup {
                        frequency,
                        elements: a.elements,
                    })
                    .collect(),
                orientation,
            );
            spec.amplitude = a.amplitude;
            let t = gen_bars(&spec, grid).map_err(usage)?;
            let mut params = table_of(&spec).map_err(usage)?;
            params.insert(
                "layout".into(),
                toml::Value::try_from(&t.layout).map_err(|e| usage(Error::Format(e.to_string())))?,
            );
            (t.sample, "bars", params)
        }
        TargetKind::Ring => {
            let spec = ring_spec()?;
            (gen_ring(&spec, grid).map_err(usage)?, "ring", table_of(&spec).map_err(usage)?)
        }
        TargetKind::TwoPlane => {
            let ring = ring_spec()?;
            let dz = require(a.dz_um, "dz-um")?;
            let radius = require(a.disk_radius_um, "disk-radius-um")?;
            let center = a.disk_center_um.clone().unwrap_or_else(|| vec![0.0, 0.0]);
            expect_len(&center, 2, "disk-center-um").map_err(usage)?;
            let disk = SampleSpec::Disk {
                center: [center[0], center[1]],
                radius,
                amplitude: a.disk_amplitude,
            };
            let t = gen_two_plane(&SampleSpec::Ring(ring), &disk, dz, grid).map_err(usage)?;
            let mut params = table_of(&ring).map_err(usage)?;
            params.insert("dz_um".into(), dz.into());
            params.insert("disk_radius_um".into(), radius.into());
            params.insert(
                "disk_center_um".into(),
                toml::Value::Array(vec![center[0].into(), center[1].into()]),
            );
            params.insert("disk_amplitude".into(), a.disk_amplitude.into());
            (t.sample, "two_plane", params)
        }
    };
    write_sample(&a.out, &sample, target, params).map_err(usage)?;
    let _ = writeln!(out, "target = {target}");
    let _ = writeln!(out, "planes = {}", sample.planes().len());
    let _ = writeln!(out, "sample_dir = {}", a.out.display());
    Ok(())
}

#[derive(Debug, Default, serde::Deserialize)]
struct SimulateConfig {
    pattern: Option<PatternSpec>,
    optics: Option<OpticsConfig>,
}

fn build_simulation_config(a: &SimulateArgs) -> Result<(PatternSpec, OpticsConfig)> {
    let file: SimulateConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => SimulateConfig::default(),
    };
    let mut spec = file.pattern.unwrap_or_else(|| PatternSpec::protocol(f64::NAN));
    if let Some(v) = &a.orientations {
        spec.orientations_deg = v.clone();
    }
    if let Some(v) = &a.phases {
        spec.phases_deg = v.clone();
    }
    if let Some(v) = a.freq_dmd {
        spec.freq_dmd_per_mm = v;
    }
    if let Some(v) = a.magnification {
        spec.magnification = v;
    }
    if let Some(p) = a.fringe_freq {
        if !(p > 0.0) {
            return Err(Error::InvalidConfig(format!("--fringe-freq {p} must be > 0")));
        }
        spec.magnification = spec.freq_dmd_per_mm / (1000.0 * p);
    }
    if spec.magnification.is_nan() {
        return Err(Error::InvalidConfig(format!(
            "no magnification: pass --magnification or --fringe-freq (DMD frequency {} cycles/mm)",
            if a.freq_dmd.is_some() { spec.freq_dmd_per_mm } else { PROTOCOL_FREQ_DMD }
        )));
    }
    if let Some(v) = a.modulation {
        spec.modulation = v;
    }
    if let Some(v) = a.mean_level {
        spec.mean_level = v;
    }
    let mut optics = file.optics.unwrap_or_default();
    if let Some(v) = a.na_detection {
        optics.na_detection = v;
    }
    if let Some(v) = a.na_inner {
        optics.na_illumination_inner = v;
    }
    if let Some(v) = a.na_outer {
        optics.na_illumination_outer = v;
    }
    if let Some(v) = a.wavelength_um {
        optics.wavelength = v;
    }
    if let Some(m) = a.mode {
        optics.mode = match m {
            ModeArg::Transmission => Mode::Transmission,
            ModeArg::Reflectance => Mode::Reflectance,
        };
    }
    let noise = &mut optics.noise;
    if let Some(v) = a.read_noise {
        noise.read_noise_sigma = v;
    }
    if let Some(v) = a.photon_scale {
        noise.photon_scale = v;
    }
    if let Some(v) = a.seed {
        noise.seed = v;
    }
    if a.periodic {
        optics.boundary = Boundary::Periodic;
    } else if let Some(px) = a.guard_px {
        optics.boundary = Boundary::ZeroGuard { pixels: px };
    }
    Ok((spec, optics))
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut String) -> CliResult<()> {
    let (spec, optics) = build_simulation_config(a).map_err(usage)?;
    let report = validate_darkfield(&optics).map_err(usage)?;
    spec.validate_against(&report).map_err(usage)?;
    let (sample, _) = load_sample(&a.sample).map_err(usage)?;
    let set = make_pattern_set(&spec, sample.grid()).map_err(usage)?;
    let stack = simulate_stack(&sample, &set, &optics).map_err(processing)?;
    write_stack(&a.out, &stack).map_err(usage)?;
    let _ = writeln!(out, "darkfield = {}", report.message);
    let _ = writeln!(out, "p_max_cyc_per_um = {:.6}", report.p_max);
    let _ = writeln!(out, "fringe_freq_cyc_per_um = {:.6}", spec.sample_frequency().map_err(usage)?);
    let _ = writeln!(out, "frames = {}", stack.frames().len());
    let _ = writeln!(out, "stack_dir = {}", a.out.display());
    Ok(())
}

fn export_pgm(path: &Path, img: &Image, key: &str, out: &mut String) -> Result<()> {
    let (lo, hi) = raster::write_pgm(path, img)?;
    let _ = writeln!(out, "{key}_pgm = {}", path.display());
    let _ = writeln!(out, "{key}_pgm_min = {lo:.9e}");
    let _ = writeln!(out, "{key}_pgm_max = {hi:.9e}");
    Ok(())
}

pub fn cmd_reconstruct(a: &ReconstructArgs, out: &mut String) -> CliResult<()> {
    let (stack, input_manifest) = load_stack(&a.stack).map_err(usage)?;
    let source = match a.params {
        Some(ParamSourceArg::Manifest) => ParameterSource::Manifest,
        Some(ParamSourceArg::Estimate) => ParameterSource::Estimate,
        None => match stack.manifest.provenance {
            Provenance::Simulated { .. } => ParameterSource::Manifest,
            Provenance::Ingested { .. } => ParameterSource::Estimate,
        },
    };
    let params = ReconParams {
        wiener_w: a.wiener,
        apodization: match a.apodization {
            ApodizationArg::Triangle => Apodization::Triangle,
            ApodizationArg::RaisedCosine => Apodization::RaisedCosine,
            ApodizationArg::None => Apodization::None,
        },
        parameter_source: source,
        upsample_factor: a.upsample,
        use_hint: !a.global_search,
    };
    params.validate().map_err(usage)?;
    let rec = reconstruct_detailed(&stack, &params).map_err(processing)?;
    fs::create_dir_all(&a.out).map_err(|e| usage(e.into()))?;
    let enhanced = a.out.join("enhanced.raw");
    let conventional = a.out.join("conventional.raw");
    raster::write(&enhanced, &rec.image).map_err(usage)?;
    let conv = stack.conventional();
    raster::write(&conventional, &conv).map_err(usage)?;

    let _ = writeln!(out, "parameter_source = {}", if source == ParameterSource::Manifest { "manifest" } else { "estimate" });
    let _ = writeln!(out, "wiener_w = {}", params.wiener_w);
    let _ = writeln!(out, "upsample_factor = {}", params.upsample_factor);
    let _ = writeln!(out, "extended_cutoff_cyc_per_um = {:.6}", rec.extended_cutoff);
    for (o, fp) in rec.params.iter().enumerate() {
        let _ = writeln!(out, "orientation.{o}.p_x_cyc_per_um = {:.6}", fp.p[0]);
        let _ = writeln!(out, "orientation.{o}.p_y_cyc_per_um = {:.6}", fp.p[1]);
        let _ = writeln!(out, "orientation.{o}.phase_deg = {:.4}", fp.phase.to_degrees());
        let _ = writeln!(out, "orientation.{o}.modulation = {:.6}", fp.modulation);
    }
    let _ = writeln!(out, "enhanced = {}", enhanced.display());
    let _ = writeln!(out, "conventional = {}", conventional.display());
    if a.wiener_conventional {
        let wc = wiener_conventional(&stack, &params).map_err(processing)?;
        let path = a.out.join("conventional_wiener.raw");
        raster::write(&path, &wc).map_err(usage)?;
        let _ = writeln!(out, "conventional_wiener = {}", path.display());
    }
    if a.pgm {
        export_pgm(&a.out.join("enhanced.pgm"), &rec.image, "enhanced", out).map_err(usage)?;
        export_pgm(&a.out.join("conventional.pgm"), &conv, "conventional", out).map_err(usage)?;
    }

    let mut record = table_of(&params).map_err(usage)?;
    record.insert(
        "fringe_params".into(),
        toml::Value::try_from(&rec.params).map_err(|e| usage(Error::Format(e.to_string())))?,
    );
    record.insert("source_stack".into(), a.stack.display().to_string().into());
    write_echo(
        &a.out,
        &input_manifest,
        ProcessingRecord {
            command: "reconstruct".into(),
            parameters: record,
        },
    )
    .map_err(usage)?;
    fs::write(a.out.join("report.txt"), out.as_bytes()).map_err(|e| usage(e.into()))?;
    Ok(())
}

pub fn cmd_section(a: &SectionArgs, out: &mut String) -> CliResult<()> {
    let (stack, input_manifest) = load_stack(&a.stack).map_err(usage)?;
    let mode = match a.combine {
        CombineArg::Single => CombineMode::Single,
        CombineArg::Mean => CombineMode::Mean,
        CombineArg::Max => CombineMode::Max,
    };
    let s = section_stack(&stack, mode, a.orientation).map_err(processing)?;
    fs::create_dir_all(&a.out).map_err(|e| usage(e.into()))?;
    let path = a.out.join("sectioned.raw");
    raster::write(&path, &s.data).map_err(usage)?;
    let _ = writeln!(out, "combine_mode = {mode}");
    let list: Vec<String> = s.orientations.iter().map(|o| o.to_string()).collect();
    let _ = writeln!(out, "orientations = {}", list.join(","));
    let _ = writeln!(out, "sectioned = {}", path.display());
    if a.pgm {
        export_pgm(&a.out.join("sectioned.pgm"), &s.data, "sectioned", out).map_err(usage)?;
    }
    let mut record = toml::Table::new();
    record.insert("combine_mode".into(), mode.to_string().into());
    record.insert(
        "orientations".into(),
        toml::Value::Array(s.orientations.iter().map(|&o| (o as i64).into()).collect()),
    );
    record.insert("source_stack".into(), a.stack.display().to_string().into());
    write_echo(
        &a.out,
        &input_manifest,
        ProcessingRecord {
            command: "section".into(),
            parameters: record,
        },
    )
    .map_err(usage)?;
    Ok(())
}

struct ImageMetrics {
    cutoff: Option<f64>,
    contrast: Option<f64>,
    fwhm: Option<f64>,
}

fn measure(img: &Image, key: &str, a: &MetricsArgs, out: &mut String) -> CliResult<ImageMetrics> {
    let mut m = ImageMetrics {
        cutoff: None,
        contrast: None,
        fwhm: None,
    };
    if a.cutoff {
        let c = effective_cutoff(img, a.noise_floor);
        let _ = writeln!(out, "{key}effective_cutoff_cyc_per_um = {c:.6}");
        let _ = writeln!(out, "{key}noise_floor = {}", a.noise_floor);
        m.cutoff = Some(c);
    }
    if let Some(p) = &a.profile {
        expect_len(p, 4, "profile").map_err(usage)?;
        let prof = profile(img, [p[0], p[1]], [p[2], p[3]], a.n).map_err(usage)?;
        let c = michelson_contrast(&prof);
        let _ = writeln!(out, "{key}profile_samples = {}", prof.samples.len());
        let _ = writeln!(out, "{key}michelson_contrast = {c:.6}");
        m.contrast = Some(c);
        if let Some(mode) = a.fwhm {
            let mode = match mode {
                FwhmArg::Peak => FwhmMode::Peak,
                FwhmArg::Edge => FwhmMode::Edge,
            };
            let w = match &a.range {
                Some(r) => expect_len(r, 2, "range")
                    .map_err(usage)
                    .and_then(|()| fwhm_in_range(&prof, mode, r[0], r[1]).map_err(processing))?,
                None => edge_fwhm(&prof, mode).map_err(processing)?,
            };
            let _ = writeln!(out, "{key}fwhm_um = {w:.6}");
            m.fwhm = Some(w);
        }
        if a.table {
            let _ = writeln!(out, "# position_um value");
            for (s, v) in &prof.samples {
                let _ = writeln!(out, "{s:.6} {v:.9e}");
            }
        }
    } else if a.fwhm.is_some() {
        return Err(usage(Error::InvalidConfig("--fwhm needs --profile".into())));
    }
    Ok(m)
}

pub fn cmd_metrics(a: &MetricsArgs, out: &mut String) -> CliResult<()> {
    if let Some(p) = &a.compare {
        let ia = raster::read(&p[0]).map_err(usage)?;
        let ib = raster::read(&p[1]).map_err(usage)?;
        let ma = measure(&ia, "a.", a, out)?;
        let mb = measure(&ib, "b.", a, out)?;
        let ratio = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) if x != 0.0 => Some(y / x),
            _ => None,
        };
        if let Some(r) = ratio(ma.cutoff, mb.cutoff) {
            let _ = writeln!(out, "ratio.effective_cutoff = {r:.6}");
        }
        if let Some(r) = ratio(ma.contrast, mb.contrast) {
            let _ = writeln!(out, "ratio.michelson_contrast = {r:.6}");
        }
        if let Some(r) = ratio(ma.fwhm, mb.fwhm) {
            let _ = writeln!(out, "ratio.fwhm = {r:.6}");
        }
        return Ok(());
    }
    if a.images.is_empty() {
        return Err(usage(Error::InvalidConfig("no input images".into())));
    }
    let many = a.images.len() > 1;
    for (k, path) in a.images.iter().enumerate() {
        let img = raster::read(path).map_err(usage)?;
        let key = if many { format!("image.{k}.") } else { String::new() };
        measure(&img, &key, a, out)?;
    }
    Ok(())
}
