//! Core library for tuberculin skin test (TST) induration reading.
//!
//! The crate covers the whole desk-scale reading pipeline:
//!
//! - [`raster`]: RGB rasters, millimeter depth frames, PNG/DPTH file I/O and
//!   the preprocessing stages (median denoise, luma histogram equalization,
//!   center crop).
//! - [`gate`]: the auto-capture protocol as a state machine over sensor samples.
//! - [`segment`]: classical reference segmenter, external mask ingestion and
//!   overlay rendering.
//! - [`chord`]: boundary extraction, maximum chord via rotating calipers and
//!   the piecewise pixel-to-millimeter calibration table.
//! - [`interpret`]: questionnaire-driven positivity thresholds.
//! - [`records`]: append-only case store with follow-up reminders.
//! - [`eval`]: synthetic phantoms plus the depth-sweep and scalar-fit experiments.
//! - [`pipeline`]: preprocess, segment and measure in one call.

pub mod chord;
pub mod eval;
pub mod gate;
pub mod interpret;
pub mod pipeline;
pub mod raster;
pub mod records;
pub mod segment;

pub use chord::{CalibrationTable, ChordMeasurement};
pub use gate::{GateConfig, GatePanelStatus, GateState, SensorSample};
pub use interpret::{Assessment, Questionnaire, RuleTable, TstResult};
pub use raster::{DepthFrame, Point, Raster};
pub use segment::SegmentationMask;
