//! Induration masks: classical reference segmenter, ingestion of masks
//! produced by an external model, connected components and overlays.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::raster::{self, Point, Raster, RasterError, Rgb};

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("ROI center ({cx}, {cy}) radius {radius} does not fit inside {width}x{height} image")]
    RoiOutOfBounds {
        cx: u32,
        cy: u32,
        radius: u32,
        width: u32,
        height: u32,
    },
    #[error("mask is {got_w}x{got_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("overlay alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Io(#[from] RasterError),
}

/// Binary per-pixel induration map, row-major. `true` marks induration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl SegmentationMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn from_points(width: u32, height: u32, points: &[Point]) -> Self {
        let mut m = Self::empty(width, height);
        for &p in points {
            m.set(p.x, p.y, true);
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = y as usize * self.width as usize + x as usize;
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Point::new((i % w) as u32, (i / w) as u32))
    }

    /// Mask as 8-bit grayscale samples: 255 induration, 0 background.
    pub fn to_gray(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        raster::encode_gray_png(self.width, self.height, &self.to_gray())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SegmentError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png()).map_err(|source| {
            SegmentError::Io(RasterError::Unwritable {
                path: path.display().to_string(),
                source,
            })
        })
    }
}

/// Circular region of interest for the classical segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub center: Point,
    pub radius: u32,
}

impl Roi {
    /// Largest circle centered on the image center that fits inside the image.
    pub fn centered(width: u32, height: u32) -> Self {
        let (cx, cy) = (width / 2, height / 2);
        let radius = cx.min(cy).min(width - 1 - cx).min(height - 1 - cy);
        Self {
            center: Point::new(cx, cy),
            radius,
        }
    }

    fn check(&self, width: u32, height: u32) -> Result<(), SegmentError> {
        let Point { x: cx, y: cy } = self.center;
        let r = self.radius;
        let fits = cx >= r
            && cy >= r
            && (cx as u64 + r as u64) < width as u64
            && (cy as u64 + r as u64) < height as u64;
        if fits {
            Ok(())
        } else {
            Err(SegmentError::RoiOutOfBounds {
                cx,
                cy,
                radius: r,
                width,
                height,
            })
        }
    }

    #[inline]
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = x as i64 - self.center.x as i64;
        let dy = y as i64 - self.center.y as i64;
        dx * dx + dy * dy <= (self.radius as i64) * (self.radius as i64)
    }
}

/// Which side of the Otsu threshold counts as induration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    Darker,
    Lighter,
}

/// Otsu threshold over a 256-bin histogram. The returned level `t` splits the
/// samples into `<= t` and `> t`; ties keep the lowest level. `None` when the
/// histogram holds fewer than two distinct levels.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total: f64 = hist.iter().sum::<u64>() as f64;
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();

    let mut w_b = 0.0;
    let mut sum_b = 0.0;
    let mut best = (f64::NEG_INFINITY, 0u8);
    for (t, &c) in hist.iter().enumerate() {
        w_b += c as f64;
        sum_b += t as f64 * c as f64;
        let w_f = total - w_b;
        if w_b == 0.0 {
            continue;
        }
        if w_f == 0.0 {
            break;
        }
        let m_b = sum_b / w_b;
        let m_f = (sum_total - sum_b) / w_f;
        let var = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if var > best.0 {
            best = (var, t as u8);
        }
    }
    Some(best.1)
}

pub fn segment_classical(r: &Raster, roi: Roi) -> Result<SegmentationMask, SegmentError> {
    segment_classical_with(r, roi, Polarity::Darker)
}

/// Grayscale, Otsu over ROI pixels, keep the chosen side of the threshold
/// inside the ROI, then the largest 8-connected component.
pub fn segment_classical_with(
    r: &Raster,
    roi: Roi,
    polarity: Polarity,
) -> Result<SegmentationMask, SegmentError> {
    let (w, h) = (r.width(), r.height());
    roi.check(w, h)?;
    let gray = r.to_gray();

    let mut hist = [0u64; 256];
    for y in roi.center.y - roi.radius..=roi.center.y + roi.radius {
        for x in roi.center.x - roi.radius..=roi.center.x + roi.radius {
            if roi.contains(x, y) {
                hist[gray[(y * w + x) as usize] as usize] += 1;
            }
        }
    }
    let Some(t) = otsu_threshold(&hist) else {
        return Ok(SegmentationMask::empty(w, h));
    };

    let mut mask = SegmentationMask::empty(w, h);
    for y in roi.center.y - roi.radius..=roi.center.y + roi.radius {
        for x in roi.center.x - roi.radius..=roi.center.x + roi.radius {
            if !roi.contains(x, y) {
                continue;
            }
            let v = gray[(y * w + x) as usize];
            let hit = match polarity {
                Polarity::Darker => v <= t,
                Polarity::Lighter => v > t,
            };
            if hit {
                mask.set(x, y, true);
            }
        }
    }
    Ok(largest_component(&mask))
}

/// Decodes mask bytes; samples `>= 128` become induration.
pub fn decode_mask(
    bytes: &[u8],
    expected_w: u32,
    expected_h: u32,
) -> Result<SegmentationMask, SegmentError> {
    let (w, h, gray) = raster::decode_gray_png(bytes)?;
    if (w, h) != (expected_w, expected_h) {
        return Err(SegmentError::DimensionMismatch {
            expected_w,
            expected_h,
            got_w: w,
            got_h: h,
        });
    }
    Ok(SegmentationMask::from_bits(
        w,
        h,
        gray.into_iter().map(|v| v >= 128).collect(),
    ))
}

pub fn ingest_mask(
    path: impl AsRef<Path>,
    expected_w: u32,
    expected_h: u32,
) -> Result<SegmentationMask, SegmentError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| RasterError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    decode_mask(&bytes, expected_w, expected_h)
}

/// 8-connected component labels in row-major discovery order.
/// Returns per-pixel labels (0 = background, components numbered from 1) and
/// the size of each component, indexed by `label - 1`.
pub fn label_components(m: &SegmentationMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (m.width as i64, m.height as i64);
    let mut labels = vec![0u32; m.bits.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..m.bits.len() {
        if !m.bits[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if m.bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps only the largest 8-connected component. Equal sizes resolve to the
/// component whose first pixel comes earliest in row-major order.
pub fn largest_component(m: &SegmentationMask) -> SegmentationMask {
    let (labels, sizes) = label_components(m);
    // Labels are assigned in row-major order of each component's first pixel,
    // so the first maximum wins the tie.
    let Some((best, _)) = sizes
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, usize)>, (i, &s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        })
    else {
        return m.clone();
    };
    let keep = best as u32 + 1;
    SegmentationMask::from_bits(
        m.width,
        m.height,
        labels.iter().map(|&l| l == keep).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub alpha: f64,
    pub segment_color: Rgb,
}

impl OverlayStyle {
    pub const DEFAULT_COLOR: Rgb = [0, 255, 0];

    pub fn semi_transparent() -> Self {
        Self {
            alpha: 0.5,
            segment_color: Self::DEFAULT_COLOR,
        }
    }

    pub fn opaque() -> Self {
        Self {
            alpha: 1.0,
            segment_color: Self::DEFAULT_COLOR,
        }
    }
}

pub fn render_overlay(
    r: &Raster,
    m: &SegmentationMask,
    style: OverlayStyle,
) -> Result<Raster, SegmentError> {
    if (r.width(), r.height()) != (m.width, m.height) {
        return Err(SegmentError::DimensionMismatch {
            expected_w: r.width(),
            expected_h: r.height(),
            got_w: m.width,
            got_h: m.height,
        });
    }
    if !(0.0..=1.0).contains(&style.alpha) {
        return Err(SegmentError::InvalidAlpha(style.alpha));
    }
    let a = style.alpha;
    let mut out = r.clone();
    for (px, &on) in out.pixels_mut().iter_mut().zip(m.bits.iter()) {
        if !on {
            continue;
        }
        for (ch, &seg) in px.iter_mut().zip(style.segment_color.iter()) {
            let v = a * seg as f64 + (1.0 - a) * *ch as f64;
            *ch = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}
