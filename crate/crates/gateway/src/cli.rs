//! `tstkit` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 input error, 4 pipeline error.
//! Failures print an [`ApiError`] JSON object on stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use tstkit_core::chord::CalibrationTable;
use tstkit_core::eval::{self, ScalarFitConfig, SweepConfig};
use tstkit_core::gate::{self, CaptureDecision, GateState, SensorSample};
use tstkit_core::pipeline::{self, PipelineOptions};
use tstkit_core::raster::{self, DepthReading, Point};
use tstkit_core::records::RecordStore;
use tstkit_core::segment::{self, OverlayStyle, Polarity, Roi};

use crate::api::{self, AppState};
use crate::capture::{self, CaptureInput};
use crate::config::{Config, CONFIG_ENV, PORT_ENV, STORE_DIR_ENV};
use crate::error::ApiError;

pub const EXIT_USAGE: i32 = 2;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "tstkit", version, about = "Tuberculin skin test induration toolkit")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Seed for the synthetic experiments.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the primary output to this file instead of stdout.
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure the induration diameter in a capture.
    Measure(MeasureArgs),
    /// Segment a capture and write the mask PNG.
    Segment(SegmentArgs),
    /// Replay a sensor stream through the capture gate.
    GateSim(GateSimArgs),
    /// Synthetic phantom experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP JSON service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolarityArg {
    Darker,
    Lighter,
}

#[derive(Debug, Args)]
pub struct SegmentOpts {
    /// ROI center column; needs --roi-y and --roi-radius.
    #[arg(long, requires_all = ["roi_y", "roi_radius"])]
    pub roi_x: Option<u32>,
    #[arg(long, requires_all = ["roi_x", "roi_radius"])]
    pub roi_y: Option<u32>,
    #[arg(long, requires_all = ["roi_x", "roi_y"])]
    pub roi_radius: Option<u32>,
    /// Which side of the Otsu threshold is induration.
    #[arg(long, value_enum, default_value = "darker")]
    pub polarity: PolarityArg,
    /// Skip denoising and contrast enhancement.
    #[arg(long)]
    pub no_preprocess: bool,
}

impl SegmentOpts {
    fn pipeline_options(&self) -> PipelineOptions {
        let roi = match (self.roi_x, self.roi_y, self.roi_radius) {
            (Some(x), Some(y), Some(radius)) => Some(Roi {
                center: Point::new(x, y),
                radius,
            }),
            _ => None,
        };
        PipelineOptions {
            roi,
            polarity: match self.polarity {
                PolarityArg::Darker => Polarity::Darker,
                PolarityArg::Lighter => Polarity::Lighter,
            },
            preprocess: !self.no_preprocess,
        }
    }
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Capture image (8-bit RGB or RGBA PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// DPTH depth frame aligned with the image.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Externally produced mask PNG; skips the classical segmenter.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Calibration table (TOML with `[[bands]]`), overriding the config.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub segment: SegmentOpts,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Also write the overlay in this style (`semi` or `opaque`) next to the mask.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "semi")]
    pub overlay_style: OverlayArg,
    #[command(flatten)]
    pub segment: SegmentOpts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OverlayArg {
    Semi,
    Opaque,
}

#[derive(Debug, Args)]
pub struct GateSimArgs {
    /// Stream file, one `timestamp_ms,depth_mm,pitch,roll[,cx,cy,radius]` per line.
    pub stream: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean measured diameter of a phantom across camera depths.
    DepthSweep(DepthSweepArgs),
    /// Fit the mm-per-pixel factor at the calibrated depth.
    ScalarFit(ScalarFitArgs),
}

#[derive(Debug, Args)]
pub struct DepthSweepArgs {
    #[arg(long, default_value_t = 10.0)]
    pub true_mm: f64,
    #[arg(long, default_value_t = 175.0)]
    pub start: f64,
    #[arg(long, default_value_t = 400.0)]
    pub end: f64,
    #[arg(long, default_value_t = 5.0)]
    pub step: f64,
    #[arg(long, default_value_t = eval::DEFAULT_TRIALS_PER_DEPTH)]
    pub trials: usize,
    /// Scale at the calibrated depth; defaults to the harness scale.
    #[arg(long)]
    pub px_per_mm: Option<f64>,
    #[arg(long, default_value_t = eval::JITTER_PX)]
    pub jitter: f64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ScalarFitArgs {
    #[arg(long)]
    pub true_mm: f64,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long)]
    pub px_per_mm: Option<f64>,
    #[arg(long, default_value_t = eval::JITTER_PX)]
    pub jitter: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long, env = PORT_ENV)]
    pub port: Option<u16>,
    #[arg(long, env = STORE_DIR_ENV)]
    pub store_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Api(ApiError),
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        CliError::Api(e)
    }
}

macro_rules! api_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Api(e.into())
            }
        }
    )*};
}
api_from!(
    tstkit_core::raster::RasterError,
    tstkit_core::segment::SegmentError,
    tstkit_core::pipeline::PipelineError,
    tstkit_core::eval::EvalError,
    tstkit_core::records::StoreError,
    tstkit_core::gate::GateError
);

/// Parses `args` and runs the command; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Api(e)) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| {
            ApiError::new(500, "unwritable_file", format!("cannot write {}: {e}", p.display()))
        })?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| ApiError::internal(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

fn json_line(v: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let output = cli.output.as_deref();
    match cli.command {
        Command::Measure(a) => measure(&config, &a, output),
        Command::Segment(a) => segment_cmd(&config, &a, output),
        Command::GateSim(a) => gate_sim(&config, &a, output),
        Command::Eval(EvalCommand::DepthSweep(a)) => depth_sweep(&config, &a, seed, output),
        Command::Eval(EvalCommand::ScalarFit(a)) => scalar_fit(&config, &a, seed, output),
        Command::Serve(a) => serve(config, a),
    }
}

fn load_table(path: &Path) -> Result<CalibrationTable, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let (status, code) = if e.kind() == std::io::ErrorKind::NotFound {
            (404, "file_not_found")
        } else {
            (400, "unreadable_file")
        };
        ApiError::new(status, code, format!("cannot read {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| ApiError::new(400, "invalid_calibration_table", e.to_string()).into())
}

fn load_input(image: &Path, depth: Option<&Path>, mask: Option<&Path>) -> Result<CaptureInput, CliError> {
    let image = raster::load_raster(image)?;
    let depth = depth.map(raster::load_depth_frame).transpose()?;
    let mask = mask
        .map(|p| segment::ingest_mask(p, image.width(), image.height()))
        .transpose()?;
    Ok(CaptureInput { image, depth, mask })
}

fn measure(config: &Config, a: &MeasureArgs, output: Option<&Path>) -> Result<(), CliError> {
    let table = match &a.table {
        Some(p) => load_table(p)?,
        None => config.calibration.clone(),
    };
    let input = load_input(&a.image, a.depth.as_deref(), a.mask.as_deref())?;
    let analysis = capture::analyze(
        input,
        config.capture.crop_side,
        &table,
        &a.segment.pipeline_options(),
    )?;
    let m = &analysis.measurement;
    let mut v = serde_json::to_value(m).expect("serializes");
    if let Some(d) = &analysis.depth {
        let mid = Point::new((m.p1.x + m.p2.x) / 2, (m.p1.y + m.p2.y) / 2);
        v["depth_mm"] = match d.get_millimeters_depth(mid)? {
            DepthReading::Millimeters(mm) => mm.into(),
            DepthReading::NoDepth => serde_json::Value::Null,
        };
    }
    write_output(output, &json_line(&v))
}

fn segment_cmd(config: &Config, a: &SegmentArgs, output: Option<&Path>) -> Result<(), CliError> {
    let Some(mask_path) = output else {
        return Err(CliError::Usage("segment needs --output for the mask PNG".into()));
    };
    let input = capture::prepare(load_input(&a.image, None, None)?, config.capture.crop_side)?;
    let mask = pipeline::segment_image(&input.image, &a.segment.pipeline_options())?;
    write_output(Some(mask_path), &mask.to_png())?;
    if let Some(p) = &a.overlay {
        let style = match a.overlay_style {
            OverlayArg::Semi => OverlayStyle::semi_transparent(),
            OverlayArg::Opaque => OverlayStyle::opaque(),
        };
        write_output(Some(p), &capture::overlay_png(&input.image, &mask, style)?)?;
    }
    let summary = serde_json::json!({
        "width": mask.width(),
        "height": mask.height(),
        "pixels": mask.count(),
    });
    write_output(None, &json_line(&summary))
}

/// Parses a gate-sim stream. Blank lines and `#` comments are skipped.
pub fn parse_stream(text: &str) -> Result<Vec<(usize, SensorSample)>, ApiError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| {
            ApiError::new(400, "stream_parse_error", format!("line {line_no}: {msg}"))
                .with_details(serde_json::json!({ "line": line_no }))
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 && fields.len() != 7 {
            return Err(err(format!("expected 4 or 7 fields, found {}", fields.len())));
        }
        fn num<T: std::str::FromStr>(
            fields: &[&str],
            i: usize,
            name: &str,
        ) -> Result<T, String> {
            fields[i]
                .parse()
                .map_err(|_| format!("{name} {:?} is not a valid number", fields[i]))
        }
        let parsed = (|| -> Result<SensorSample, String> {
            let pitch_deg: f64 = num(&fields, 2, "pitch")?;
            let roll_deg: f64 = num(&fields, 3, "roll")?;
            if !pitch_deg.is_finite() || !roll_deg.is_finite() {
                return Err("pitch and roll must be finite".into());
            }
            let (candidate_center, candidate_radius_px) = if fields.len() == 7 {
                let r: f64 = num(&fields, 6, "radius")?;
                (
                    Some(Point::new(num(&fields, 4, "cx")?, num(&fields, 5, "cy")?)),
                    Some(r),
                )
            } else {
                (None, None)
            };
            Ok(SensorSample {
                timestamp_ms: num(&fields, 0, "timestamp_ms")?,
                depth_mm: num(&fields, 1, "depth_mm")?,
                pitch_deg,
                roll_deg,
                candidate_center,
                candidate_radius_px,
            })
        })()
        .map_err(err)?;
        out.push((line_no, parsed));
    }
    Ok(out)
}

/// One trace line per consumed sample, then `Capture` or `NoCapture`.
pub fn simulate(config: &Config, text: &str) -> Result<String, ApiError> {
    config.gate.validate()?;
    let samples = parse_stream(text)?;
    let mut state = GateState::new();
    let mut out = String::new();
    let mut decision = CaptureDecision::NoCapture;
    for (line_no, s) in &samples {
        let (next, status, d) = gate::step(state, &config.gate, s).map_err(|e| {
            let base = ApiError::from(e);
            ApiError::new(base.http_status, base.code, format!("line {line_no}: {}", base.message))
        })?;
        state = next;
        out.push_str(&format!(
            "t={} depth_ok={} orientation_ok={} alignment_ok={} all_ok={} run={}\n",
            s.timestamp_ms,
            status.depth_ok,
            status.orientation_ok,
            status.alignment_ok,
            status.all_ok,
            state.consecutive_passes
        ));
        if d == CaptureDecision::Capture {
            decision = d;
            break;
        }
    }
    out.push_str(match decision {
        CaptureDecision::Capture => "Capture\n",
        CaptureDecision::NoCapture => "NoCapture\n",
    });
    Ok(out)
}

fn gate_sim(config: &Config, a: &GateSimArgs, output: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.stream).map_err(|e| {
        let (status, code) = if e.kind() == std::io::ErrorKind::NotFound {
            (404, "file_not_found")
        } else {
            (400, "unreadable_file")
        };
        ApiError::new(status, code, format!("cannot read {}: {e}", a.stream.display()))
    })?;
    write_output(output, simulate(config, &text)?.as_bytes())
}

fn depth_sweep(config: &Config, a: &DepthSweepArgs, seed: u64, output: Option<&Path>) -> Result<(), CliError> {
    if !(a.step > 0.0 && a.start > 0.0 && a.end >= a.start) {
        return Err(CliError::Usage("depth grid needs 0 < start <= end and step > 0".into()));
    }
    let cfg = SweepConfig {
        trials_per_depth: a.trials,
        px_per_mm: a.px_per_mm,
        jitter_px: a.jitter,
        ..SweepConfig::with_seed(seed)
    };
    let report = eval::run_depth_sweep(
        a.true_mm,
        &eval::depth_grid(a.start, a.end, a.step),
        &config.calibration,
        &cfg,
    )?;
    let bytes = match a.format {
        ReportFormat::Json => json_line(&report),
        ReportFormat::Csv => report.to_csv().into_bytes(),
    };
    write_output(output, &bytes)
}

fn scalar_fit(config: &Config, a: &ScalarFitArgs, seed: u64, output: Option<&Path>) -> Result<(), CliError> {
    let px_per_mm = match a.px_per_mm {
        Some(s) => s,
        None => eval::harness_scale(a.true_mm, &config.calibration)
            .ok_or(eval::EvalError::NoHarnessScale(a.true_mm))?,
    };
    let cfg = ScalarFitConfig {
        seed,
        px_per_mm,
        jitter_px: a.jitter,
    };
    let fit = eval::run_scalar_fit(a.true_mm, a.trials, &cfg)?;
    write_output(output, &json_line(&fit))
}

fn serve(mut config: Config, a: ServeArgs) -> Result<(), CliError> {
    if let Some(b) = a.bind {
        config.server.bind = b;
    }
    if let Some(p) = a.port {
        config.server.port = p;
    }
    if let Some(d) = a.store_dir {
        config.store.dir = d;
    }
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let store = RecordStore::open(&config.store.dir)?;
    let addr = format!("{}:{}", config.server.bind, config.server.port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ApiError::internal(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| ApiError::new(500, "bind_failed", format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| ApiError::internal(e.to_string()))?;
        tracing::info!(%local, store = %config.store.dir.display(), "listening");
        let app = api::router(AppState::new(store, config));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ApiError::internal(format!("server: {e}")))
    })?;
    Ok(())
}
