//! PNG and DPTH file formats.
//!
//! DPTH layout: ASCII `DPTH`, width as `u32` LE, height as `u32` LE, then
//! `width * height` little-endian `u16` millimeter samples in row-major order.

use std::io::Cursor;
use std::path::Path;

use super::{DepthFrame, Raster, RasterError};

pub const DEPTH_MAGIC: [u8; 4] = *b"DPTH";
const DEPTH_HEADER_LEN: usize = 12;

fn read_file(path: &Path) -> Result<Vec<u8>, RasterError> {
    std::fs::read(path).map_err(|source| RasterError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    std::fs::write(path, bytes).map_err(|source| RasterError::Unwritable {
        path: path.display().to_string(),
        source,
    })
}

struct DecodedPng {
    width: u32,
    height: u32,
    color: png::ColorType,
    data: Vec<u8>,
}

fn decode_png_raw(bytes: &[u8]) -> Result<DecodedPng, RasterError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| RasterError::Corrupt(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::UnsupportedFormat(format!(
            "{:?}-bit samples, expected 8-bit",
            info.bit_depth as u8
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Corrupt("image too large".into()))?;
    let mut data = vec![0u8; size];
    let frame = reader
        .next_frame(&mut data)
        .map_err(|e| RasterError::Corrupt(e.to_string()))?;
    data.truncate(frame.buffer_size());
    Ok(DecodedPng {
        width: frame.width,
        height: frame.height,
        color: frame.color_type,
        data,
    })
}

/// Decodes an 8-bit RGB or RGBA PNG; alpha is discarded.
pub fn decode_png(bytes: &[u8]) -> Result<Raster, RasterError> {
    let png = decode_png_raw(bytes)?;
    let pixels = match png.color {
        png::ColorType::Rgb => png
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
        png::ColorType::Rgba => png
            .data
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
        other => {
            return Err(RasterError::UnsupportedFormat(format!(
                "color type {other:?}, expected RGB or RGBA"
            )))
        }
    };
    Raster::new(png.width, png.height, pixels)
}

/// Decodes an 8-bit grayscale PNG (gray+alpha accepted, alpha dropped).
pub fn decode_gray_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), RasterError> {
    let png = decode_png_raw(bytes)?;
    let gray = match png.color {
        png::ColorType::Grayscale => png.data,
        png::ColorType::GrayscaleAlpha => png.data.chunks_exact(2).map(|c| c[0]).collect(),
        other => {
            return Err(RasterError::UnsupportedFormat(format!(
                "color type {other:?}, expected 8-bit grayscale"
            )))
        }
    };
    Ok((png.width, png.height, gray))
}

fn encode_png_raw(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        // Writing into a Vec only fails on programmer error (length mismatch).
        let mut writer = encoder.write_header().expect("png header");
        writer.write_image_data(data).expect("png payload");
    }
    out
}

pub fn encode_png(raster: &Raster) -> Vec<u8> {
    let data: Vec<u8> = raster.pixels().iter().flatten().copied().collect();
    encode_png_raw(raster.width(), raster.height(), png::ColorType::Rgb, &data)
}

pub fn encode_gray_png(width: u32, height: u32, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width as usize * height as usize);
    encode_png_raw(width, height, png::ColorType::Grayscale, gray)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster, RasterError> {
    decode_png(&read_file(path.as_ref())?)
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    write_file(path.as_ref(), &encode_png(raster))
}

pub fn decode_depth_frame(bytes: &[u8]) -> Result<DepthFrame, RasterError> {
    if bytes.len() < 4 || bytes[..4] != DEPTH_MAGIC {
        let mut magic = [0u8; 4];
        let n = bytes.len().min(4);
        magic[..n].copy_from_slice(&bytes[..n]);
        return Err(RasterError::BadMagic(magic));
    }
    if bytes.len() < DEPTH_HEADER_LEN {
        return Err(RasterError::SizeMismatch {
            expected: 0,
            actual: bytes.len().saturating_sub(4),
        });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let expected = width as usize * height as usize;
    let payload = &bytes[DEPTH_HEADER_LEN..];
    if payload.len() != expected * 2 {
        return Err(RasterError::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let depths = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    DepthFrame::new(width, height, depths)
}

pub fn encode_depth_frame(frame: &DepthFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEPTH_HEADER_LEN + frame.depths().len() * 2);
    out.extend_from_slice(&DEPTH_MAGIC);
    out.extend_from_slice(&frame.width().to_le_bytes());
    out.extend_from_slice(&frame.height().to_le_bytes());
    for d in frame.depths() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn load_depth_frame(path: impl AsRef<Path>) -> Result<DepthFrame, RasterError> {
    decode_depth_frame(&read_file(path.as_ref())?)
}

pub fn save_depth_frame(frame: &DepthFrame, path: impl AsRef<Path>) -> Result<(), RasterError> {
    write_file(path.as_ref(), &encode_depth_frame(frame))
}
