//! Induration diameter measurement.
//!
//! The boundary of the mask is reduced to its convex hull and the longest
//! chord is found with rotating calipers. The pixel length is converted to
//! millimeters with a factor that depends on which pixel-length band the
//! chord falls in.

use serde::{Deserialize, Serialize};

use crate::raster::Point;
use crate::segment::SegmentationMask;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("need at least 2 boundary points, found {0}")]
    Degenerate(usize),
    #[error("diameter {d_px:.3} px outside calibrated range [{lo}, {hi}] px")]
    OutOfCalibrationRange { d_px: f64, lo: f64, hi: f64 },
    #[error("invalid pixel diameter {0}")]
    InvalidDiameter(f64),
    #[error("invalid calibration table: {0}")]
    InvalidTable(String),
}

/// Mask pixels that touch the background through a 4-neighbor, or sit on
/// the image border, in row-major order.
pub fn extract_boundary(m: &SegmentationMask) -> Vec<Point> {
    let (w, h) = (m.width(), m.height());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !m.get(x - 1, y)
                || !m.get(x + 1, y)
                || !m.get(x, y - 1)
                || !m.get(x, y + 1);
            if edge {
                out.push(p(x, y));
            }
        }
    }
    out
}

#[inline]
fn p(x: u32, y: u32) -> Point {
    Point::new(x, y)
}

fn cross(o: Point, a: Point, b: Point) -> i64 {
    let (ox, oy) = (o.x as i64, o.y as i64);
    (a.x as i64 - ox) * (b.y as i64 - oy) - (a.y as i64 - oy) * (b.x as i64 - ox)
}

/// Strict convex hull (no collinear vertices), counter-clockwise in image
/// coordinates, via the monotone chain.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &q in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0 {
            hull.pop();
        }
        hull.push(q);
    }
    let lower = hull.len() + 1;
    for &q in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0 {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    hull
}

/// Longest chord between two points of the set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chord {
    pub p1: Point,
    pub p2: Point,
    pub d_px: f64,
}

#[derive(Clone, Copy)]
struct Best {
    d2: u64,
    pair: (Point, Point),
}

impl Best {
    fn offer(&mut self, a: Point, b: Point) {
        let pair = if a <= b { (a, b) } else { (b, a) };
        let d2 = a.dist2(b);
        if d2 > self.d2 || (d2 == self.d2 && pair < self.pair) {
            *self = Best { d2, pair };
        }
    }
}

/// Farthest pair of points. Among pairs at the maximal distance the
/// lexicographically smallest `(p1, p2)` with `p1 <= p2` is returned.
pub fn max_chord(points: &[Point]) -> Result<Chord, MeasureError> {
    if points.len() < 2 {
        return Err(MeasureError::Degenerate(points.len()));
    }
    let hull = convex_hull(points);
    let mut best = Best {
        d2: 0,
        pair: (hull[0], hull[0]),
    };
    match hull.len() {
        1 => {}
        2 => best.offer(hull[0], hull[1]),
        n => {
            // Every diametral pair is antipodal. Walk each edge (i, i+1) and
            // advance j to the farthest vertex from it; a parallel opposite
            // edge contributes both of its endpoints.
            let mut j = 1;
            for i in 0..n {
                let (a, b) = (hull[i], hull[(i + 1) % n]);
                while cross(a, b, hull[(j + 1) % n]) > cross(a, b, hull[j]) {
                    j = (j + 1) % n;
                }
                best.offer(a, hull[j]);
                best.offer(b, hull[j]);
                let next = hull[(j + 1) % n];
                if cross(a, b, next) == cross(a, b, hull[j]) {
                    best.offer(a, next);
                    best.offer(b, next);
                }
            }
        }
    }
    Ok(Chord {
        p1: best.pair.0,
        p2: best.pair.1,
        d_px: (best.d2 as f64).sqrt(),
    })
}

/// O(n^2) reference for [`max_chord`] with the same tie-break.
pub fn max_chord_brute_force(points: &[Point]) -> Result<Chord, MeasureError> {
    if points.len() < 2 {
        return Err(MeasureError::Degenerate(points.len()));
    }
    let mut best = Best {
        d2: 0,
        pair: (points[0], points[0]),
    };
    for (i, &a) in points.iter().enumerate() {
        for &b in &points[i + 1..] {
            best.offer(a, b);
        }
    }
    Ok(Chord {
        p1: best.pair.0,
        p2: best.pair.1,
        d_px: (best.d2 as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBand {
    /// Inclusive lower bound, pixels.
    pub px_lo: f64,
    /// Exclusive upper bound, pixels; inclusive for the last band.
    pub px_hi: f64,
    /// Millimeters per pixel.
    pub factor: f64,
}

/// Piecewise pixel-to-millimeter conversion keyed on the measured diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableFile")]
pub struct CalibrationTable {
    bands: Vec<CalibrationBand>,
}

#[derive(Deserialize)]
struct TableFile {
    bands: Vec<CalibrationBand>,
}

impl TryFrom<TableFile> for CalibrationTable {
    type Error = MeasureError;

    fn try_from(f: TableFile) -> Result<Self, Self::Error> {
        CalibrationTable::new(f.bands)
    }
}

impl Default for CalibrationTable {
    fn default() -> Self {
        Self {
            bands: vec![
                CalibrationBand {
                    px_lo: 0.0,
                    px_hi: 50.0,
                    factor: 0.1197,
                },
                CalibrationBand {
                    px_lo: 50.0,
                    px_hi: 80.0,
                    factor: 0.1523,
                },
                CalibrationBand {
                    px_lo: 80.0,
                    px_hi: 200.0,
                    factor: 0.1499,
                },
            ],
        }
    }
}

impl CalibrationTable {
    pub fn new(bands: Vec<CalibrationBand>) -> Result<Self, MeasureError> {
        let bad = |m: String| Err(MeasureError::InvalidTable(m));
        if bands.is_empty() {
            return bad("no bands".into());
        }
        for (i, b) in bands.iter().enumerate() {
            if !(b.px_lo.is_finite() && b.px_hi.is_finite() && b.px_lo >= 0.0 && b.px_lo < b.px_hi)
            {
                return bad(format!("band {i} has bounds [{}, {})", b.px_lo, b.px_hi));
            }
            if !(b.factor.is_finite() && b.factor > 0.0) {
                return bad(format!("band {i} factor {} is not positive", b.factor));
            }
            if i > 0 && bands[i - 1].px_hi != b.px_lo {
                return bad(format!("band {i} does not start where band {} ends", i - 1));
            }
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[CalibrationBand] {
        &self.bands
    }

    pub fn lower_bound(&self) -> f64 {
        self.bands[0].px_lo
    }

    pub fn upper_bound(&self) -> f64 {
        self.bands[self.bands.len() - 1].px_hi
    }

    pub fn band_for(&self, d_px: f64) -> Option<&CalibrationBand> {
        let last = self.bands.len() - 1;
        self.bands.iter().enumerate().find_map(|(i, b)| {
            let upper_ok = if i == last { d_px <= b.px_hi } else { d_px < b.px_hi };
            (d_px >= b.px_lo && upper_ok).then_some(b)
        })
    }

    /// Converts a pixel diameter; returns `(millimeters, factor)`.
    pub fn px_to_mm(&self, d_px: f64) -> Result<(f64, f64), MeasureError> {
        if !d_px.is_finite() || d_px < 0.0 {
            return Err(MeasureError::InvalidDiameter(d_px));
        }
        let band = self
            .band_for(d_px)
            .ok_or(MeasureError::OutOfCalibrationRange {
                d_px,
                lo: self.lower_bound(),
                hi: self.upper_bound(),
            })?;
        Ok((d_px * band.factor, band.factor))
    }
}

pub fn px_to_mm(d_px: f64, table: &CalibrationTable) -> Result<(f64, f64), MeasureError> {
    table.px_to_mm(d_px)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChordMeasurement {
    pub p1: Point,
    pub p2: Point,
    pub diameter_px: f64,
    pub diameter_mm: f64,
    #[serde(rename = "factor")]
    pub factor_used: f64,
}

impl ChordMeasurement {
    /// Export form with millimeters rounded to 2 decimals.
    pub fn display_json(&self) -> serde_json::Value {
        serde_json::json!({
            "p1": self.p1,
            "p2": self.p2,
            "diameter_px": self.diameter_px,
            "factor": self.factor_used,
            "diameter_mm": (self.diameter_mm * 100.0).round() / 100.0,
        })
    }
}

/// Boundary, longest chord and calibrated conversion of the mask as given.
/// Callers wanting a single induration run
/// [`largest_component`](crate::segment::largest_component) first.
pub fn measure(
    m: &SegmentationMask,
    table: &CalibrationTable,
) -> Result<ChordMeasurement, MeasureError> {
    let boundary = extract_boundary(m);
    let chord = max_chord(&boundary)?;
    let (diameter_mm, factor_used) = table.px_to_mm(chord.d_px)?;
    Ok(ChordMeasurement {
        p1: chord.p1,
        p2: chord.p2,
        diameter_px: chord.d_px,
        diameter_mm,
        factor_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::largest_component;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn erosion_oracle(m: &SegmentationMask) -> Vec<Point> {
        // Boundary = mask minus its 4-connected erosion, with out-of-image
        // treated as background.
        let (w, h) = (m.width() as i64, m.height() as i64);
        let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as u32, y as u32);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let eroded = on(x, y) && on(x - 1, y) && on(x + 1, y) && on(x, y - 1) && on(x, y + 1);
                if on(x, y) && !eroded {
                    out.push(p(x as u32, y as u32));
                }
            }
        }
        out
    }

    #[test]
    fn boundary_of_solid_square() {
        let mut m = SegmentationMask::empty(5, 5);
        for y in 1..4 {
            for x in 1..4 {
                m.set(x, y, true);
            }
        }
        let b = extract_boundary(&m);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&p(2, 2)));
    }

    #[test]
    fn boundary_trivial_cases() {
        let m = SegmentationMask::from_points(4, 4, &[p(2, 1)]);
        assert_eq!(extract_boundary(&m), vec![p(2, 1)]);
        assert!(extract_boundary(&SegmentationMask::empty(4, 4)).is_empty());
        // Image border counts as off-mask.
        let full = SegmentationMask::from_bits(3, 3, vec![true; 9]);
        assert_eq!(extract_boundary(&full).len(), 8);
    }

    #[test]
    fn chord_examples() {
        let c = max_chord(&[p(0, 0), p(3, 4)]).unwrap();
        assert_eq!(c.d_px, 5.0);
        let c = max_chord(&[p(0, 0), p(10, 0), p(0, 10), p(10, 10)]).unwrap();
        assert!((c.d_px - 200f64.sqrt()).abs() < 1e-12);
        // Both diagonals tie; (0,0)-(10,10) is lexicographically first.
        assert_eq!((c.p1, c.p2), (p(0, 0), p(10, 10)));
        assert_eq!(
            max_chord(&[p(1, 1)]).unwrap_err(),
            MeasureError::Degenerate(1)
        );
    }

    #[test]
    fn chord_collinear_and_duplicates() {
        let pts = [p(5, 5), p(1, 1), p(3, 3), p(1, 1), p(9, 9)];
        let c = max_chord(&pts).unwrap();
        assert_eq!((c.p1, c.p2), (p(1, 1), p(9, 9)));
        let c = max_chord(&[p(2, 2), p(2, 2)]).unwrap();
        assert_eq!(c.d_px, 0.0);
        assert_eq!(c, max_chord_brute_force(&[p(2, 2), p(2, 2)]).unwrap());
    }

    #[test]
    fn hull_is_strict_and_ccw() {
        let pts = [p(0, 0), p(2, 0), p(4, 0), p(4, 4), p(0, 4), p(2, 2)];
        let hull = convex_hull(&pts);
        assert_eq!(hull, vec![p(0, 0), p(4, 0), p(4, 4), p(0, 4)]);
    }

    #[test]
    fn chord_matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (w, h) = (rng.random_range(2..40), rng.random_range(2..40));
            let density = rng.random_range(0.05..0.9);
            let bits = (0..w * h).map(|_| rng.random_bool(density)).collect();
            let m = SegmentationMask::from_bits(w, h, bits);
            let b = extract_boundary(&m);
            if b.len() < 2 {
                continue;
            }
            assert_eq!(max_chord(&b).unwrap(), max_chord_brute_force(&b).unwrap());
        }
    }

    #[test]
    fn calibration_examples() {
        let t = CalibrationTable::default();
        let (mm, f) = t.px_to_mm(65.07).unwrap();
        assert_eq!(f, 0.1523);
        assert!((mm - 9.91).abs() < 0.005);
        assert_eq!(t.px_to_mm(49.999).unwrap().1, 0.1197);
        assert_eq!(t.px_to_mm(50.0).unwrap().1, 0.1523);
        assert_eq!(t.px_to_mm(80.0).unwrap().1, 0.1499);
        assert_eq!(t.px_to_mm(200.0).unwrap().1, 0.1499);
        assert!(matches!(
            t.px_to_mm(250.0),
            Err(MeasureError::OutOfCalibrationRange { .. })
        ));
        assert!(matches!(
            t.px_to_mm(-1.0),
            Err(MeasureError::InvalidDiameter(_))
        ));
    }

    #[test]
    fn table_validation() {
        let band = |lo, hi, factor| CalibrationBand {
            px_lo: lo,
            px_hi: hi,
            factor,
        };
        assert!(CalibrationTable::new(vec![]).is_err());
        assert!(CalibrationTable::new(vec![band(0.0, 50.0, 0.1), band(60.0, 80.0, 0.1)]).is_err());
        assert!(CalibrationTable::new(vec![band(0.0, 50.0, 0.0)]).is_err());
        assert!(CalibrationTable::new(vec![band(10.0, 5.0, 0.1)]).is_err());
        let t = CalibrationTable::new(vec![band(0.0, 50.0, 0.12), band(50.0, 90.0, 0.14)]).unwrap();
        assert_eq!(t.upper_bound(), 90.0);
        let json = r#"{"bands":[{"px_lo":0,"px_hi":50,"factor":0.1},{"px_lo":40,"px_hi":80,"factor":0.1}]}"#;
        assert!(serde_json::from_str::<CalibrationTable>(json).is_err());
    }

    #[test]
    fn two_pixel_mask_measurement() {
        let m = SegmentationMask::from_points(5, 5, &[p(0, 0), p(3, 4)]);
        let r = measure(&m, &CalibrationTable::default()).unwrap();
        assert_eq!(r.diameter_px, 5.0);
        assert_eq!(r.factor_used, 0.1197);
        assert!((r.diameter_mm - 0.5985).abs() < 1e-12);
    }

    #[test]
    fn degenerate_masks() {
        let t = CalibrationTable::default();
        assert_eq!(
            measure(&SegmentationMask::empty(3, 3), &t).unwrap_err(),
            MeasureError::Degenerate(0)
        );
        let one = SegmentationMask::from_points(3, 3, &[p(1, 1)]);
        assert_eq!(measure(&one, &t).unwrap_err(), MeasureError::Degenerate(1));
    }

    #[test]
    fn display_json_rounds_mm() {
        let m = ChordMeasurement {
            p1: p(0, 0),
            p2: p(3, 4),
            diameter_px: 65.07,
            diameter_mm: 9.910161,
            factor_used: 0.1523,
        };
        let v = m.display_json();
        assert_eq!(v["diameter_mm"], 9.91);
        assert_eq!(v["factor"], 0.1523);
    }

    proptest! {
        #[test]
        fn boundary_matches_erosion(seed in any::<u64>(), w in 1u32..24, h in 1u32..24, density in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits = (0..w * h).map(|_| rng.random_bool(density)).collect();
            let m = SegmentationMask::from_bits(w, h, bits);
            prop_assert_eq!(extract_boundary(&m), erosion_oracle(&m));
        }

        #[test]
        fn chord_equals_brute_force(pts in proptest::collection::vec((0u32..30, 0u32..30), 2..60)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| p(x, y)).collect();
            prop_assert_eq!(max_chord(&pts).unwrap(), max_chord_brute_force(&pts).unwrap());
        }

        #[test]
        fn mm_strictly_increasing_within_band(a in 0.0f64..200.0, b in 0.0f64..200.0) {
            let t = CalibrationTable::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (mlo, flo) = t.px_to_mm(lo).unwrap();
            let (mhi, fhi) = t.px_to_mm(hi).unwrap();
            prop_assert_eq!(mlo, lo * flo);
            if flo == fhi && lo < hi {
                prop_assert!(mlo < mhi);
            }
        }

        #[test]
        fn measure_invariant_under_largest_component(cx in 8u32..24, cy in 8u32..24, r in 1u32..7) {
            let mut m = SegmentationMask::empty(32, 32);
            for y in 0..32u32 {
                for x in 0..32u32 {
                    let (dx, dy) = (x as i64 - cx as i64, y as i64 - cy as i64);
                    if dx * dx + dy * dy <= (r * r) as i64 {
                        m.set(x, y, true);
                    }
                }
            }
            let t = CalibrationTable::default();
            let a = measure(&m, &t).unwrap();
            prop_assert_eq!(a, measure(&largest_component(&m), &t).unwrap());
            prop_assert_eq!(a.diameter_px, a.p1.dist(a.p2));
            prop_assert_eq!(a.diameter_mm, a.diameter_px * a.factor_used);
        }
    }
}
