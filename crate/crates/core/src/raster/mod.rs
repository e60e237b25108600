//! Image and depth-frame containers plus the preprocessing stages that run
//! before segmentation.

mod io;
mod preprocess;

pub use io::{
    decode_depth_frame, decode_gray_png, decode_png, encode_depth_frame, encode_gray_png,
    encode_png, load_depth_frame, load_raster, save_depth_frame, save_raster, DEPTH_MAGIC,
};
pub use preprocess::{center_crop, center_crop_offset, denoise, enhance_contrast, luma};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image stream: {0}")]
    Corrupt(String),
    #[error("bad depth-frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("depth frame header declares {expected} samples but payload holds {actual} bytes")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("point ({x}, {y}) outside {width}x{height} frame")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("crop side {side} exceeds {width}x{height} source")]
    CropTooLarge { side: u32, width: u32, height: u32 },
}

/// Pixel coordinate. `x` is the column, `y` the row.
///
/// Ordering is lexicographic on `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Squared Euclidean distance, exact in integers.
    pub fn dist2(self, other: Point) -> u64 {
        let dx = self.x.abs_diff(other.x) as u64;
        let dy = self.y.abs_diff(other.y) as u64;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.dist2(other) as f64).sqrt()
    }
}

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(RasterError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, RasterError> {
        Self::new(width, height, vec![color; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let i = self.index(x, y);
        self.pixels[i] = color;
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x < self.width && p.y < self.height
    }

    /// BT.601 luma per pixel, rounded to the nearest gray level.
    pub fn to_gray(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| luma(p)).collect()
    }
}

/// Outcome of a millimeter depth lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthReading {
    Millimeters(u16),
    /// The sensor stored 0 for this pixel.
    NoDepth,
}

impl DepthReading {
    pub fn millimeters(self) -> Option<u16> {
        match self {
            DepthReading::Millimeters(mm) => Some(mm),
            DepthReading::NoDepth => None,
        }
    }
}

/// Per-pixel camera-to-surface distance in integer millimeters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    width: u32,
    height: u32,
    depths: Vec<u16>,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, depths: Vec<u16>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || depths.len() != width as usize * height as usize {
            return Err(RasterError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            depths,
        })
    }

    pub fn constant(width: u32, height: u32, depth_mm: u16) -> Result<Self, RasterError> {
        Self::new(width, height, vec![depth_mm; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depths(&self) -> &[u16] {
        &self.depths
    }

    /// Nearest-pixel depth lookup at `p`. A stored 0 reads as [`DepthReading::NoDepth`].
    pub fn get_millimeters_depth(&self, p: Point) -> Result<DepthReading, RasterError> {
        if p.x >= self.width || p.y >= self.height {
            return Err(RasterError::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            });
        }
        let v = self.depths[p.y as usize * self.width as usize + p.x as usize];
        Ok(if v == 0 {
            DepthReading::NoDepth
        } else {
            DepthReading::Millimeters(v)
        })
    }
}
