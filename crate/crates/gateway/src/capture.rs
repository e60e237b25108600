//! Capture analysis shared by the CLI and the HTTP service: crop, segment or
//! ingest a mask, measure, and re-check the gate on the submitted metadata.

use serde::{Deserialize, Serialize};

use tstkit_core::chord::ChordMeasurement;
use tstkit_core::gate::{self, GateConfig, GatePanelStatus, SensorSample};
use tstkit_core::pipeline::{self, PipelineOptions};
use tstkit_core::raster::{self, DepthReading, Point, Raster};
use tstkit_core::segment::{self, SegmentationMask};
use tstkit_core::{CalibrationTable, DepthFrame};

use crate::error::ApiError;

/// Image, optional depth frame and optional mask as uploaded.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureInput {
    pub image: Raster,
    pub depth: Option<DepthFrame>,
    pub mask: Option<SegmentationMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// Image after cropping; the mask and depth frame share its geometry.
    pub image: Raster,
    pub depth: Option<DepthFrame>,
    pub mask: SegmentationMask,
    pub measurement: ChordMeasurement,
}

/// Offset and side of the square crop applied to a `width x height` upload,
/// or `None` when the upload is used as is.
pub fn crop_window(width: u32, height: u32, side: u32) -> Option<(Point, u32)> {
    if width >= side && height >= side && (width, height) != (side, side) {
        let offset = raster::center_crop_offset(width, height, side).expect("fits");
        Some((offset, side))
    } else {
        None
    }
}

fn crop_depth(d: &DepthFrame, offset: Point, side: u32) -> DepthFrame {
    let mut out = Vec::with_capacity(side as usize * side as usize);
    for y in 0..side {
        let row = (offset.y + y) as usize * d.width() as usize;
        let start = row + offset.x as usize;
        out.extend_from_slice(&d.depths()[start..start + side as usize]);
    }
    DepthFrame::new(side, side, out).expect("square crop")
}

fn crop_mask(m: &SegmentationMask, offset: Point, side: u32) -> SegmentationMask {
    let mut out = SegmentationMask::empty(side, side);
    for y in 0..side {
        for x in 0..side {
            out.set(x, y, m.get(offset.x + x, offset.y + y));
        }
    }
    out
}

/// Checks that the depth frame and mask match the image, then crops all
/// three to the capture square.
pub fn prepare(input: CaptureInput, crop_side: u32) -> Result<CaptureInput, ApiError> {
    let (w, h) = (input.image.width(), input.image.height());
    if let Some(d) = &input.depth {
        if (d.width(), d.height()) != (w, h) {
            return Err(ApiError::new(
                400,
                "depth_dimension_mismatch",
                format!("depth frame is {}x{}, image is {w}x{h}", d.width(), d.height()),
            ));
        }
    }
    if let Some(m) = &input.mask {
        if (m.width(), m.height()) != (w, h) {
            return Err(ApiError::new(
                400,
                "mask_dimension_mismatch",
                format!("mask is {}x{}, image is {w}x{h}", m.width(), m.height()),
            ));
        }
    }
    let Some((offset, side)) = crop_window(w, h, crop_side) else {
        return Ok(input);
    };
    Ok(CaptureInput {
        image: raster::center_crop(&input.image, side)?,
        depth: input.depth.map(|d| crop_depth(&d, offset, side)),
        mask: input.mask.map(|m| crop_mask(&m, offset, side)),
    })
}

/// Measures a prepared capture: the supplied mask (largest component) when
/// present, the classical segmentation otherwise.
pub fn analyze_prepared(
    input: CaptureInput,
    table: &CalibrationTable,
    opts: &PipelineOptions,
) -> Result<Analysis, ApiError> {
    let out = match &input.mask {
        Some(m) => pipeline::measure_mask(m, table)?,
        None => pipeline::measure_image(&input.image, table, opts)?,
    };
    Ok(Analysis {
        image: input.image,
        depth: input.depth,
        mask: out.mask,
        measurement: out.measurement,
    })
}

pub fn analyze(
    input: CaptureInput,
    crop_side: u32,
    table: &CalibrationTable,
    opts: &PipelineOptions,
) -> Result<Analysis, ApiError> {
    analyze_prepared(prepare(input, crop_side)?, table, opts)
}

/// Device state reported with a capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateMetadata {
    #[serde(default)]
    pub timestamp_ms: u64,
    /// Required when no depth frame is uploaded; the frame wins otherwise.
    #[serde(default)]
    pub depth_mm: Option<u16>,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub sample: SensorSample,
    pub status: GatePanelStatus,
}

/// Depth at the guide center of a cropped frame, 0 when unavailable.
fn frame_depth(cfg: &GateConfig, depth: &DepthFrame) -> u16 {
    match depth.get_millimeters_depth(cfg.guide_center) {
        Ok(DepthReading::Millimeters(mm)) => mm,
        _ => 0,
    }
}

/// Sample for the server-side gate check. Alignment uses the measured chord:
/// its midpoint as the candidate center and half its length as the radius.
pub fn gate_sample(
    cfg: &GateConfig,
    meta: &GateMetadata,
    depth: Option<&DepthFrame>,
    measurement: Option<&ChordMeasurement>,
) -> Result<SensorSample, ApiError> {
    let depth_mm = match (depth, meta.depth_mm) {
        (Some(frame), _) => frame_depth(cfg, frame),
        (None, Some(mm)) => mm,
        (None, None) => {
            return Err(ApiError::bad_request(
                "gate metadata needs depth_mm when no depth frame is uploaded",
            ))
        }
    };
    let (candidate_center, candidate_radius_px) = match measurement {
        Some(m) => (
            Some(Point::new((m.p1.x + m.p2.x) / 2, (m.p1.y + m.p2.y) / 2)),
            Some(m.diameter_px / 2.0),
        ),
        None => (None, None),
    };
    Ok(SensorSample {
        timestamp_ms: meta.timestamp_ms,
        depth_mm,
        pitch_deg: meta.pitch_deg,
        roll_deg: meta.roll_deg,
        candidate_center,
        candidate_radius_px,
    })
}

pub fn check_gate(
    cfg: &GateConfig,
    meta: &GateMetadata,
    depth: Option<&DepthFrame>,
    measurement: Option<&ChordMeasurement>,
) -> Result<GateCheck, ApiError> {
    let sample = gate_sample(cfg, meta, depth, measurement)?;
    Ok(GateCheck {
        sample,
        status: gate::evaluate_sample(cfg, &sample),
    })
}

pub fn gate_failed(check: &GateCheck) -> ApiError {
    let s = check.status;
    let mut failed = Vec::new();
    if !s.depth_ok {
        failed.push("depth");
    }
    if !s.orientation_ok {
        failed.push("orientation");
    }
    if !s.alignment_ok {
        failed.push("alignment");
    }
    ApiError::new(
        422,
        "gate_failed",
        format!("capture gate failed: {}", failed.join(", ")),
    )
    .with_details(serde_json::to_value(check).expect("serializes"))
}

/// Overlay in one of the two review styles.
pub fn overlay_png(image: &Raster, mask: &SegmentationMask, style: segment::OverlayStyle) -> Result<Vec<u8>, ApiError> {
    Ok(raster::encode_png(&segment::render_overlay(image, mask, style)?))
}
