//! Synthetic phantom experiments.
//!
//! A phantom is a flat-colored induration ellipse on uniform skin. Its pixel
//! size follows a pinhole model: the diameter in pixels is
//! `true_mm * px_per_mm * calibrated_depth / depth`, where `px_per_mm` is the
//! scale at the calibrated depth.
//!
//! The harness scale for a given true size is the reciprocal of the table
//! factor whose band contains the resulting pixel diameter, which is how the
//! published factor table is reproduced without camera intrinsics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chord::{self, CalibrationTable};
use crate::pipeline::{self, PipelineOptions};
use crate::raster::{DepthFrame, Raster, Rgb};
use crate::segment::SegmentationMask;

/// Depth at which the harness cameras are calibrated, in millimeters.
pub const CALIBRATED_DEPTH_MM: f64 = 219.5;
pub const PHANTOM_SIDE: u32 = 450;
pub const SKIN: Rgb = [224, 186, 160];
pub const INDURATION: Rgb = [176, 112, 104];
pub const DEFAULT_TRIALS_PER_DEPTH: usize = 10;
/// Uniform placement jitter of the phantom center, pixels.
pub const JITTER_PX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
    #[error("depth list is empty")]
    NoDepths,
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error("no calibration band fits a {0} mm phantom")]
    NoHarnessScale(f64),
    #[error("trial {trial}: {message}")]
    TrialFailed { trial: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub true_diameter_mm: f64,
    /// Vertical over horizontal diameter; 1 renders a circle.
    pub aspect_ratio: f64,
    pub depth_mm: f64,
    pub calibrated_depth_mm: f64,
    pub px_per_mm_at_calibrated_depth: f64,
    pub background_color: Rgb,
    pub induration_color: Rgb,
    pub side: u32,
    /// Offset of the ellipse center from the image center, pixels.
    pub center_offset: (f64, f64),
}

impl PhantomSpec {
    pub fn new(true_diameter_mm: f64, px_per_mm: f64) -> Self {
        Self {
            true_diameter_mm,
            aspect_ratio: 1.0,
            depth_mm: CALIBRATED_DEPTH_MM,
            calibrated_depth_mm: CALIBRATED_DEPTH_MM,
            px_per_mm_at_calibrated_depth: px_per_mm,
            background_color: SKIN,
            induration_color: INDURATION,
            side: PHANTOM_SIDE,
            center_offset: (0.0, 0.0),
        }
    }

    pub fn at_depth(self, depth_mm: f64) -> Self {
        Self { depth_mm, ..self }
    }

    /// Horizontal ellipse diameter in pixels under pinhole scaling.
    pub fn pixel_diameter(&self) -> f64 {
        self.true_diameter_mm * self.px_per_mm_at_calibrated_depth * self.calibrated_depth_mm
            / self.depth_mm
    }

    pub fn center(&self) -> (f64, f64) {
        let c = (self.side as f64 - 1.0) / 2.0;
        (c + self.center_offset.0, c + self.center_offset.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub raster: Raster,
    pub depth: DepthFrame,
    pub truth: SegmentationMask,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, EvalError> {
    let positive = [
        spec.true_diameter_mm,
        spec.aspect_ratio,
        spec.depth_mm,
        spec.calibrated_depth_mm,
        spec.px_per_mm_at_calibrated_depth,
    ];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || spec.side == 0 {
        return Err(EvalError::InvalidPhantom(
            "sizes, depths and scale must be positive".into(),
        ));
    }
    if spec.depth_mm > u16::MAX as f64 {
        return Err(EvalError::InvalidPhantom(format!(
            "depth {} mm exceeds the depth-frame range",
            spec.depth_mm
        )));
    }
    let a = spec.pixel_diameter() / 2.0;
    let b = a * spec.aspect_ratio;
    let (cx, cy) = spec.center();
    let max = spec.side as f64 - 1.0;
    if cx - a < 0.0 || cy - b < 0.0 || cx + a > max || cy + b > max {
        return Err(EvalError::InvalidPhantom(format!(
            "{:.2}x{:.2} px ellipse does not fit a {} px image",
            2.0 * a,
            2.0 * b,
            spec.side
        )));
    }

    let n = spec.side as usize;
    let mut bits = vec![false; n * n];
    let y0 = (cy - b).floor().max(0.0) as usize;
    let y1 = ((cy + b).ceil() as usize).min(n - 1);
    let x0 = (cx - a).floor().max(0.0) as usize;
    let x1 = ((cx + a).ceil() as usize).min(n - 1);
    for y in y0..=y1 {
        let dy = (y as f64 - cy) / b;
        for x in x0..=x1 {
            let dx = (x as f64 - cx) / a;
            if dx * dx + dy * dy <= 1.0 {
                bits[y * n + x] = true;
            }
        }
    }
    let pixels = bits
        .iter()
        .map(|&on| {
            if on {
                spec.induration_color
            } else {
                spec.background_color
            }
        })
        .collect();
    Ok(Phantom {
        raster: Raster::new(spec.side, spec.side, pixels).expect("square phantom"),
        depth: DepthFrame::constant(spec.side, spec.side, spec.depth_mm.round() as u16)
            .expect("square phantom"),
        truth: SegmentationMask::from_bits(spec.side, spec.side, bits),
    })
}

/// Scale (px/mm at the calibrated depth) under which `true_mm` lands in the
/// band whose factor is `1 / scale`.
pub fn harness_scale(true_mm: f64, table: &CalibrationTable) -> Option<f64> {
    let last = table.bands().len() - 1;
    table.bands().iter().enumerate().find_map(|(i, band)| {
        let px = true_mm / band.factor;
        let inside = px >= band.px_lo && if i == last { px <= band.px_hi } else { px < band.px_hi };
        inside.then(|| 1.0 / band.factor)
    })
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn jittered(spec: PhantomSpec, rng: &mut impl Rng, jitter: f64) -> PhantomSpec {
    if jitter == 0.0 {
        return spec;
    }
    PhantomSpec {
        center_offset: (
            rng.random_range(-jitter..=jitter),
            rng.random_range(-jitter..=jitter),
        ),
        ..spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub seed: u64,
    pub trials_per_depth: usize,
    /// Scale at the calibrated depth; the harness scale when absent.
    pub px_per_mm: Option<f64>,
    pub calibrated_depth_mm: f64,
    pub jitter_px: f64,
}

impl SweepConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            trials_per_depth: DEFAULT_TRIALS_PER_DEPTH,
            px_per_mm: None,
            calibrated_depth_mm: CALIBRATED_DEPTH_MM,
            jitter_px: JITTER_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth_mm: f64,
    pub measured_mm: Option<f64>,
    pub error_mm: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub true_mm: f64,
    pub px_per_mm: f64,
    pub calibrated_depth_mm: f64,
    pub trials_per_depth: usize,
    pub seed: u64,
    /// Sorted by depth.
    pub rows: Vec<SweepRow>,
    /// Depths tied for the smallest absolute error.
    pub best_depths: Vec<f64>,
}

impl SweepReport {
    pub fn best_depth_range(&self) -> Option<(f64, f64)> {
        let lo = self.best_depths.first()?;
        let hi = self.best_depths.last()?;
        Some((*lo, *hi))
    }

    pub fn row(&self, depth_mm: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.depth_mm == depth_mm)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth_mm,measured_mm,error_mm\n");
        for r in &self.rows {
            let f = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{}\n",
                r.depth_mm,
                f(r.measured_mm),
                f(r.error_mm)
            ));
        }
        out
    }
}

fn measure_phantom_mm(spec: &PhantomSpec, table: &CalibrationTable) -> Result<f64, String> {
    let phantom = generate_phantom(spec).map_err(|e| e.to_string())?;
    pipeline::measure_image(&phantom.raster, table, &PipelineOptions::default())
        .map(|o| o.measurement.diameter_mm)
        .map_err(|e| e.to_string())
}

fn measure_phantom_px(spec: &PhantomSpec) -> Result<f64, String> {
    let phantom = generate_phantom(spec).map_err(|e| e.to_string())?;
    let mask = pipeline::segment_image(&phantom.raster, &PipelineOptions::default())
        .map_err(|e| e.to_string())?;
    let chord = chord::max_chord(&chord::extract_boundary(&mask)).map_err(|e| e.to_string())?;
    Ok(chord.d_px)
}

/// Measures a `true_mm` phantom at each depth through the full pipeline and
/// reports the mean measured diameter per depth. Failed trials mark the row
/// and do not abort the sweep.
pub fn run_depth_sweep(
    true_mm: f64,
    depths: &[f64],
    table: &CalibrationTable,
    cfg: &SweepConfig,
) -> Result<SweepReport, EvalError> {
    if depths.is_empty() {
        return Err(EvalError::NoDepths);
    }
    if cfg.trials_per_depth == 0 {
        return Err(EvalError::NoTrials);
    }
    let scale = match cfg.px_per_mm {
        Some(s) => s,
        None => harness_scale(true_mm, table).ok_or(EvalError::NoHarnessScale(true_mm))?,
    };
    let base = PhantomSpec {
        calibrated_depth_mm: cfg.calibrated_depth_mm,
        ..PhantomSpec::new(true_mm, scale)
    };
    let mut sorted = depths.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let jobs: Vec<(usize, usize)> = (0..sorted.len())
        .flat_map(|d| (0..cfg.trials_per_depth).map(move |t| (d, t)))
        .collect();
    let results: Vec<Result<f64, String>> = jobs
        .par_iter()
        .map(|&(d, t)| {
            let mut rng = trial_rng(cfg.seed, (d * cfg.trials_per_depth + t) as u64);
            let spec = jittered(base.at_depth(sorted[d]), &mut rng, cfg.jitter_px);
            measure_phantom_mm(&spec, table)
        })
        .collect();

    let rows: Vec<SweepRow> = sorted
        .iter()
        .enumerate()
        .map(|(d, &depth_mm)| {
            let trials = &results[d * cfg.trials_per_depth..(d + 1) * cfg.trials_per_depth];
            match trials.iter().find_map(|r| r.as_ref().err()) {
                Some(msg) => SweepRow {
                    depth_mm,
                    measured_mm: None,
                    error_mm: None,
                    failure: Some(msg.clone()),
                },
                None => {
                    let mean = trials.iter().map(|r| *r.as_ref().unwrap()).sum::<f64>()
                        / trials.len() as f64;
                    SweepRow {
                        depth_mm,
                        measured_mm: Some(mean),
                        error_mm: Some(mean - true_mm),
                        failure: None,
                    }
                }
            }
        })
        .collect();

    let best_err = rows
        .iter()
        .filter_map(|r| r.error_mm.map(f64::abs))
        .fold(f64::INFINITY, f64::min);
    let best_depths = rows
        .iter()
        .filter(|r| r.error_mm.map(f64::abs) == Some(best_err))
        .map(|r| r.depth_mm)
        .collect();

    Ok(SweepReport {
        true_mm,
        px_per_mm: scale,
        calibrated_depth_mm: cfg.calibrated_depth_mm,
        trials_per_depth: cfg.trials_per_depth,
        seed: cfg.seed,
        rows,
        best_depths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarFitConfig {
    pub seed: u64,
    pub px_per_mm: f64,
    pub jitter_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFit {
    pub true_mm: f64,
    pub px_per_mm: f64,
    pub n_trials: usize,
    /// Mean of `true_mm / measured_px`, mm per pixel.
    pub factor: f64,
    pub mean_measured_px: f64,
    pub measured_px: Vec<f64>,
}

/// Fits the mm-per-pixel factor from `n_trials` jittered phantoms at the
/// calibrated depth.
pub fn run_scalar_fit(
    true_mm: f64,
    n_trials: usize,
    cfg: &ScalarFitConfig,
) -> Result<ScalarFit, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let base = PhantomSpec::new(true_mm, cfg.px_per_mm);
    let measured_px = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(cfg.seed, t as u64);
            let spec = jittered(base, &mut rng, cfg.jitter_px);
            measure_phantom_px(&spec).map_err(|message| EvalError::TrialFailed { trial: t, message })
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    let n = n_trials as f64;
    let factor = measured_px.iter().map(|px| true_mm / px).sum::<f64>() / n;
    let mean_measured_px = measured_px.iter().sum::<f64>() / n;
    Ok(ScalarFit {
        true_mm,
        px_per_mm: cfg.px_per_mm,
        n_trials,
        factor,
        mean_measured_px,
        measured_px,
    })
}

/// Depth grid `start, start + step, ...` up to and including `end`.
pub fn depth_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}
