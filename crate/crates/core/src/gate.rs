//! Auto-capture gate.
//!
//! Each sensor sample is checked against three panels: camera depth at the
//! guide center, device pitch/roll, and induration alignment with the guide
//! circles. The capture latch fires once `required_consecutive` samples in a
//! row pass every panel, and never fires again.

use serde::{Deserialize, Serialize};

use crate::raster::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GateError {
    #[error("invalid gate configuration: {0}")]
    InvalidConfig(String),
    #[error("gate already captured; no further samples accepted")]
    Terminal,
    #[error("timestamp {got} ms precedes previous sample at {previous} ms")]
    NonMonotonic { previous: u64, got: u64 },
}

/// One reading from the device while the user frames the induration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub timestamp_ms: u64,
    /// Depth at the guide center, 0 when unavailable.
    pub depth_mm: u16,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    #[serde(default)]
    pub candidate_center: Option<Point>,
    #[serde(default)]
    pub candidate_radius_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub depth_min_mm: u16,
    pub depth_max_mm: u16,
    pub pitch_tolerance_deg: f64,
    pub roll_tolerance_deg: f64,
    pub required_consecutive: u32,
    pub guide_inner_radius_px: f64,
    pub guide_outer_radius_px: f64,
    pub guide_center: Point,
}

impl Default for GateConfig {
    fn default() -> Self {
        // Guide circles sit at the center of the 450x450 capture crop.
        Self {
            depth_min_mm: 175,
            depth_max_mm: 400,
            pitch_tolerance_deg: 2.0,
            roll_tolerance_deg: 2.0,
            required_consecutive: 5,
            guide_inner_radius_px: 40.0,
            guide_outer_radius_px: 200.0,
            guide_center: Point::new(225, 225),
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateError> {
        let bad = |msg: &str| Err(GateError::InvalidConfig(msg.to_string()));
        if self.depth_min_mm >= self.depth_max_mm {
            return bad("depth_min_mm must be below depth_max_mm");
        }
        if !(self.pitch_tolerance_deg > 0.0 && self.roll_tolerance_deg > 0.0) {
            return bad("orientation tolerances must be positive");
        }
        if !(self.guide_inner_radius_px > 0.0
            && self.guide_inner_radius_px < self.guide_outer_radius_px)
        {
            return bad("guide radii must satisfy 0 < inner < outer");
        }
        if self.required_consecutive == 0 {
            return bad("required_consecutive must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePanelStatus {
    pub depth_ok: bool,
    pub orientation_ok: bool,
    pub alignment_ok: bool,
    pub all_ok: bool,
}

impl GatePanelStatus {
    fn new(depth_ok: bool, orientation_ok: bool, alignment_ok: bool) -> Self {
        Self {
            depth_ok,
            orientation_ok,
            alignment_ok,
            all_ok: depth_ok && orientation_ok && alignment_ok,
        }
    }
}

pub fn evaluate_sample(cfg: &GateConfig, s: &SensorSample) -> GatePanelStatus {
    let depth_ok = (cfg.depth_min_mm..=cfg.depth_max_mm).contains(&s.depth_mm);
    let orientation_ok =
        s.pitch_deg.abs() <= cfg.pitch_tolerance_deg && s.roll_deg.abs() <= cfg.roll_tolerance_deg;
    let alignment_ok = match (s.candidate_center, s.candidate_radius_px) {
        (Some(c), Some(radius)) => {
            let dx = c.x as f64 - cfg.guide_center.x as f64;
            let dy = c.y as f64 - cfg.guide_center.y as f64;
            radius > 0.0
                && (dx * dx + dy * dy).sqrt() <= cfg.guide_inner_radius_px
                && radius <= cfg.guide_outer_radius_px
        }
        _ => false,
    };
    GatePanelStatus::new(depth_ok, orientation_ok, alignment_ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptureDecision {
    NoCapture,
    Capture,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateState {
    pub consecutive_passes: u32,
    pub captured: bool,
    #[serde(default)]
    pub last_timestamp_ms: Option<u64>,
}

impl GateState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Advances the latch by one sample.
pub fn step(
    state: GateState,
    cfg: &GateConfig,
    s: &SensorSample,
) -> Result<(GateState, GatePanelStatus, CaptureDecision), GateError> {
    if state.captured {
        return Err(GateError::Terminal);
    }
    if let Some(previous) = state.last_timestamp_ms {
        if s.timestamp_ms < previous {
            return Err(GateError::NonMonotonic {
                previous,
                got: s.timestamp_ms,
            });
        }
    }
    let status = evaluate_sample(cfg, s);
    let consecutive_passes = if status.all_ok {
        state.consecutive_passes + 1
    } else {
        0
    };
    let captured = consecutive_passes >= cfg.required_consecutive;
    let next = GateState {
        consecutive_passes,
        captured,
        last_timestamp_ms: Some(s.timestamp_ms),
    };
    let decision = if captured {
        CaptureDecision::Capture
    } else {
        CaptureDecision::NoCapture
    };
    Ok((next, status, decision))
}

/// Per-sample record produced by [`run_stream`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub sample: SensorSample,
    pub status: GatePanelStatus,
    pub consecutive_passes: u32,
    pub decision: CaptureDecision,
}

/// Replays a stream until capture or exhaustion. Samples after the capture
/// are not consumed.
pub fn run_stream<'a>(
    cfg: &GateConfig,
    samples: impl IntoIterator<Item = &'a SensorSample>,
) -> Result<(Vec<TraceEntry>, CaptureDecision), GateError> {
    let mut state = GateState::new();
    let mut trace = Vec::new();
    for s in samples {
        let (next, status, decision) = step(state, cfg, s)?;
        state = next;
        trace.push(TraceEntry {
            sample: *s,
            status,
            consecutive_passes: state.consecutive_passes,
            decision,
        });
        if decision == CaptureDecision::Capture {
            return Ok((trace, decision));
        }
    }
    Ok((trace, CaptureDecision::NoCapture))
}
