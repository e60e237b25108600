//! Image in, measurement out.

use crate::chord::{self, CalibrationTable, ChordMeasurement, MeasureError};
use crate::raster::{self, Raster};
use crate::segment::{self, Polarity, Roi, SegmentError, SegmentationMask};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub roi: Option<Roi>,
    pub polarity: Polarity,
    pub preprocess: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            roi: None,
            polarity: Polarity::Darker,
            preprocess: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub mask: SegmentationMask,
    pub measurement: ChordMeasurement,
}

/// Median denoise followed by luma equalization.
pub fn preprocess(r: &Raster) -> Raster {
    raster::enhance_contrast(&raster::denoise(r))
}

/// Preprocess and segment with the classical segmenter. The ROI defaults to
/// the largest centered circle.
pub fn segment_image(r: &Raster, opts: &PipelineOptions) -> Result<SegmentationMask, SegmentError> {
    let prepared;
    let img = if opts.preprocess {
        prepared = preprocess(r);
        &prepared
    } else {
        r
    };
    let roi = opts
        .roi
        .unwrap_or_else(|| Roi::centered(r.width(), r.height()));
    segment::segment_classical_with(img, roi, opts.polarity)
}

pub fn measure_image(
    r: &Raster,
    table: &CalibrationTable,
    opts: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let mask = segment_image(r, opts)?;
    let measurement = chord::measure(&mask, table)?;
    Ok(PipelineOutput { mask, measurement })
}

/// Measures an externally produced mask after isolating its largest component.
pub fn measure_mask(
    mask: &SegmentationMask,
    table: &CalibrationTable,
) -> Result<PipelineOutput, PipelineError> {
    let mask = segment::largest_component(mask);
    let measurement = chord::measure(&mask, table)?;
    Ok(PipelineOutput { mask, measurement })
}
