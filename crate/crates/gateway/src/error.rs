//! Error envelope shared by the HTTP API and the CLI.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;

use tstkit_core::chord::MeasureError;
use tstkit_core::eval::EvalError;
use tstkit_core::gate::GateError;
use tstkit_core::interpret::InterpretError;
use tstkit_core::pipeline::PipelineError;
use tstkit_core::raster::RasterError;
use tstkit_core::records::StoreError;
use tstkit_core::segment::SegmentError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
    pub http_status: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(http_status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            http_status,
            details: None,
        }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal", message)
    }

    /// CLI exit status: 3 for input problems, 4 when valid input could not
    /// be processed.
    pub fn exit_code(&self) -> i32 {
        match self.http_status {
            422 => 4,
            s if s >= 500 => 4,
            _ => 3,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, axum::Json(self)).into_response()
    }
}

impl From<RasterError> for ApiError {
    fn from(e: RasterError) -> Self {
        let (status, code) = match &e {
            RasterError::Unreadable { source, .. }
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                (404, "file_not_found")
            }
            RasterError::Unreadable { .. } => (400, "unreadable_file"),
            RasterError::Unwritable { .. } => (500, "unwritable_file"),
            RasterError::UnsupportedFormat(_) => (415, "unsupported_format"),
            RasterError::Corrupt(_) => (400, "corrupt_image"),
            RasterError::BadMagic(_) => (400, "bad_depth_magic"),
            RasterError::SizeMismatch { .. } => (400, "depth_size_mismatch"),
            RasterError::InvalidDimensions { .. } => (400, "invalid_dimensions"),
            RasterError::OutOfBounds { .. } => (400, "out_of_bounds"),
            RasterError::CropTooLarge { .. } => (400, "crop_too_large"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<SegmentError> for ApiError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::Io(e) => e.into(),
            SegmentError::RoiOutOfBounds { .. } => Self::new(400, "roi_out_of_bounds", e.to_string()),
            SegmentError::DimensionMismatch { .. } => {
                Self::new(400, "mask_dimension_mismatch", e.to_string())
            }
            SegmentError::InvalidAlpha(_) => Self::new(400, "invalid_alpha", e.to_string()),
        }
    }
}

impl From<MeasureError> for ApiError {
    fn from(e: MeasureError) -> Self {
        let (status, code) = match &e {
            MeasureError::Degenerate(_) => (422, "degenerate_mask"),
            MeasureError::OutOfCalibrationRange { .. } => (422, "out_of_calibration_range"),
            MeasureError::InvalidDiameter(_) => (422, "invalid_diameter"),
            MeasureError::InvalidTable(_) => (400, "invalid_calibration_table"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Segment(e) => e.into(),
            PipelineError::Measure(e) => e.into(),
        }
    }
}

impl From<InterpretError> for ApiError {
    fn from(e: InterpretError) -> Self {
        match &e {
            InterpretError::InvalidDiameter(_) => Self::new(422, "invalid_diameter", e.to_string()),
            InterpretError::InvalidRules(_) => Self::new(400, "invalid_rule_table", e.to_string()),
        }
    }
}

impl From<GateError> for ApiError {
    fn from(e: GateError) -> Self {
        match &e {
            GateError::InvalidConfig(_) => Self::new(400, "invalid_gate_config", e.to_string()),
            GateError::Terminal => Self::new(409, "gate_terminal", e.to_string()),
            GateError::NonMonotonic { .. } => Self::new(400, "non_monotonic_timestamp", e.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::TrialFailed { .. } => Self::new(422, "trial_failed", e.to_string()),
            EvalError::NoHarnessScale(_) => Self::new(422, "no_harness_scale", e.to_string()),
            _ => Self::new(400, "invalid_experiment", e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::Io { .. } => (500, "storage"),
            StoreError::Corrupt { .. } => (500, "storage_corrupt"),
            StoreError::CaseNotFound(_) => (404, "case_not_found"),
            StoreError::CaptureNotFound { .. } => (404, "capture_not_found"),
            StoreError::ReminderNotFound(_) => (404, "reminder_not_found"),
            StoreError::Conflict(_) => (409, "conflict"),
            StoreError::InvalidWindow { .. } => (400, "invalid_read_window"),
            StoreError::Invariant(_) => (500, "invariant_violation"),
        };
        Self::new(status, code, e.to_string())
    }
}
