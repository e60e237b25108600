use super::{Point, Raster, RasterError, Rgb};

/// BT.601 luma, rounded half-up. Computed in integers so gray inputs map to
/// themselves exactly.
#[inline]
pub fn luma(p: Rgb) -> u8 {
    ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8
}

/// 3x3 median filter applied independently to each channel. Border pixels
/// replicate the nearest edge sample.
pub fn denoise(r: &Raster) -> Raster {
    let (w, h) = (r.width() as i64, r.height() as i64);
    let src = r.pixels();
    let mut out = Vec::with_capacity(src.len());
    let at = |x: i64, y: i64| -> Rgb {
        let cx = x.clamp(0, w - 1) as usize;
        let cy = y.clamp(0, h - 1) as usize;
        src[cy * w as usize + cx]
    };
    for y in 0..h {
        for x in 0..w {
            let mut window = [[0u8; 9]; 3];
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let p = at(x + dx, y + dy);
                    for c in 0..3 {
                        window[c][k] = p[c];
                    }
                    k += 1;
                }
            }
            let mut px = [0u8; 3];
            for c in 0..3 {
                let (_, m, _) = window[c].select_nth_unstable(4);
                px[c] = *m;
            }
            out.push(px);
        }
    }
    Raster::new(r.width(), r.height(), out).expect("dimensions preserved")
}

/// Global histogram equalization of BT.601 luma. Each pixel's RGB triple is
/// scaled by `new_luma / old_luma` so hue is kept; black pixels become gray at
/// the new luma. Images with a single luma level come back unchanged.
pub fn enhance_contrast(r: &Raster) -> Raster {
    let lumas = r.to_gray();
    let mut hist = [0u64; 256];
    for &y in &lumas {
        hist[y as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() <= 1 {
        return r.clone();
    }

    let total = lumas.len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (v, &c) in hist.iter().enumerate() {
        acc += c;
        cdf[v] = acc;
    }
    let cdf_min = hist
        .iter()
        .zip(cdf.iter())
        .find(|(&c, _)| c > 0)
        .map(|(_, &cdf)| cdf)
        .unwrap();
    let denom = total - cdf_min;
    let mut lut = [0u8; 256];
    for v in 0..256 {
        let num = cdf[v].saturating_sub(cdf_min) * 255;
        lut[v] = ((2 * num + denom) / (2 * denom)) as u8;
    }

    let pixels = r
        .pixels()
        .iter()
        .zip(lumas.iter())
        .map(|(&p, &y)| {
            let target = lut[y as usize] as u32;
            if y == 0 {
                return [target as u8; 3];
            }
            let y = y as u32;
            p.map(|c| ((2 * c as u32 * target + y) / (2 * y)).min(255) as u8)
        })
        .collect();
    Raster::new(r.width(), r.height(), pixels).expect("dimensions preserved")
}

/// Top-left source offset of a centered `side`x`side` crop.
pub fn center_crop_offset(width: u32, height: u32, side: u32) -> Result<Point, RasterError> {
    if side == 0 || side > width || side > height {
        return Err(RasterError::CropTooLarge {
            side,
            width,
            height,
        });
    }
    Ok(Point::new((width - side) / 2, (height - side) / 2))
}

pub fn center_crop(r: &Raster, side: u32) -> Result<Raster, RasterError> {
    let off = center_crop_offset(r.width(), r.height(), side)?;
    let w = r.width() as usize;
    let mut pixels = Vec::with_capacity(side as usize * side as usize);
    for y in 0..side as usize {
        let row = (off.y as usize + y) * w + off.x as usize;
        pixels.extend_from_slice(&r.pixels()[row..row + side as usize]);
    }
    Raster::new(side, side, pixels)
}
