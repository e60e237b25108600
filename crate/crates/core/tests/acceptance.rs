//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each with its wall time, and exits non-zero if any criterion fails
//! or overruns its time budget.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tstkit_core::chord::{self, ChordMeasurement, MeasureError};
use tstkit_core::eval::{self, ScalarFitConfig, SweepConfig};
use tstkit_core::gate::{self, CaptureDecision, GateConfig, SensorSample};
use tstkit_core::interpret::{Questionnaire, RuleTable, TstResult};
use tstkit_core::pipeline::{self, PipelineOptions};
use tstkit_core::raster::{self, DepthFrame, Point, Raster, RasterError};
use tstkit_core::records::{self, CaptureArtifact, RecordStore};
use tstkit_core::segment::{self, OverlayStyle, SegmentationMask};
use tstkit_core::CalibrationTable;

const SEED: u64 = 0x7157_2024;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Calibration fidelity: 65.07 px falls in the 50-80 px band.
const PX_TO_MM_TOL: f64 = 0.005;

fn calibration_fidelity() -> Outcome {
    let (mm, factor) = chord::px_to_mm(65.07, &CalibrationTable::default()).map_err(|e| e.to_string())?;
    ensure((mm - 9.91).abs() <= PX_TO_MM_TOL, || format!("65.07 px -> {mm} mm"))?;
    ensure(factor == 0.1523, || format!("factor {factor}"))?;
    Ok(format!("65.07 px -> {mm:.4} mm (factor {factor})"))
}

fn expected_factor(d: f64) -> Option<f64> {
    if !(0.0..=200.0).contains(&d) {
        None
    } else if d < 50.0 {
        Some(0.1197)
    } else if d < 80.0 {
        Some(0.1523)
    } else {
        Some(0.1499)
    }
}

fn band_selection() -> Outcome {
    let table = CalibrationTable::default();
    let mut checked = 0u64;
    for i in 0..=200_000u32 {
        let d = f64::from(i) / 1000.0;
        let want = expected_factor(d).expect("inside the table");
        let (mm, factor) = table.px_to_mm(d).map_err(|e| format!("{d} px: {e}"))?;
        ensure(factor == want && mm == d * want, || {
            format!("{d} px -> factor {factor}, {mm} mm; expected factor {want}")
        })?;
        checked += 1;
    }
    for d in [200.0 + 1e-9, 200.001, 250.0, 1e9] {
        let r = table.px_to_mm(d);
        ensure(
            matches!(r, Err(MeasureError::OutOfCalibrationRange { .. })),
            || format!("{d} px -> {r:?}, expected out of range"),
        )?;
    }
    for d in [f64::INFINITY, -0.001, f64::NAN] {
        let r = table.px_to_mm(d);
        ensure(r.is_err(), || format!("{d} px -> {r:?}, expected an error"))?;
    }
    Ok(format!("{checked} grid points, out-of-range inputs rejected"))
}

// Depth sweep: the 220 mm grid point must carry the smallest error.
const SWEEP_BEST_DEPTH: f64 = 220.0;
const SWEEP_MEASURED_RANGE: (f64, f64) = (9.8, 10.1);

fn depth_sweep() -> Outcome {
    let depths = eval::depth_grid(175.0, 400.0, 5.0);
    ensure(depths.len() == 46 && depths[45] == 400.0, || format!("grid {depths:?}"))?;
    let report = eval::run_depth_sweep(
        10.0,
        &depths,
        &CalibrationTable::default(),
        &SweepConfig::with_seed(SEED),
    )
    .map_err(|e| e.to_string())?;
    if let Some(r) = report.rows.iter().find(|r| r.failure.is_some()) {
        return Err(format!("{} mm failed: {:?}", r.depth_mm, r.failure));
    }
    ensure(report.best_depths == [SWEEP_BEST_DEPTH], || {
        format!("best depths {:?}", report.best_depths)
    })?;
    let measured = report
        .row(SWEEP_BEST_DEPTH)
        .and_then(|r| r.measured_mm)
        .ok_or("no 220 mm row")?;
    let (lo, hi) = SWEEP_MEASURED_RANGE;
    ensure((lo..=hi).contains(&measured), || {
        format!("measured {measured} mm at 220 mm")
    })?;
    Ok(format!("best depth 220 mm, measured {measured:.3} mm"))
}

// Scalar fit: recovered factors for the 5 and 10 mm phantoms.
const FIT_TOL: f64 = 0.002;
const FIT_CONSISTENCY_TOL: f64 = 0.01;
const FIT_TRIALS: usize = 50;

fn scalar_fit() -> Outcome {
    let table = CalibrationTable::default();
    let mut parts = Vec::new();
    for (mm, target) in [(5.0, Some(0.1197)), (10.0, Some(0.1523)), (15.0, None)] {
        let scale = eval::harness_scale(mm, &table).ok_or(format!("no scale for {mm} mm"))?;
        let cfg = ScalarFitConfig {
            seed: SEED,
            px_per_mm: scale,
            jitter_px: eval::JITTER_PX,
        };
        let fit = eval::run_scalar_fit(mm, FIT_TRIALS, &cfg).map_err(|e| e.to_string())?;
        match target {
            Some(t) => ensure((fit.factor - t).abs() <= FIT_TOL, || {
                format!("{mm} mm: factor {} vs {t}", fit.factor)
            })?,
            None => {
                let back = fit.factor * fit.mean_measured_px;
                ensure((back - mm).abs() <= FIT_CONSISTENCY_TOL * mm, || {
                    format!("{mm} mm: factor x mean px = {back}")
                })?
            }
        }
        parts.push(format!("{mm} mm -> {:.5}", fit.factor));
    }
    Ok(parts.join(", "))
}

// End-to-end accuracy at the calibrated depth.
const E2E_TRIALS: u64 = 5;

fn end_to_end() -> Outcome {
    let table = CalibrationTable::default();
    let mut parts = Vec::new();
    for (mm, tol) in [(5.0, 0.8), (10.0, 0.8), (15.0, 1.0)] {
        let scale = eval::harness_scale(mm, &table).ok_or(format!("no scale for {mm} mm"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut worst = 0.0f64;
        for _ in 0..E2E_TRIALS {
            let spec = eval::PhantomSpec {
                center_offset: (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                ..eval::PhantomSpec::new(mm, scale)
            };
            let phantom = eval::generate_phantom(&spec).map_err(|e| e.to_string())?;
            let prepared = pipeline::preprocess(&phantom.raster);
            let roi = segment::Roi::centered(prepared.width(), prepared.height());
            let mask = segment::segment_classical(&prepared, roi).map_err(|e| e.to_string())?;
            let m: ChordMeasurement = chord::measure(&mask, &table).map_err(|e| e.to_string())?;
            let err = m.diameter_mm - mm;
            ensure(err.abs() <= tol, || format!("{mm} mm measured {} mm", m.diameter_mm))?;
            let via_pipeline =
                pipeline::measure_image(&phantom.raster, &table, &PipelineOptions::default())
                    .map_err(|e| e.to_string())?;
            ensure(via_pipeline.measurement == m, || {
                format!("{mm} mm: measure_image disagrees with the staged pipeline")
            })?;
            worst = worst.max(err.abs());
        }
        parts.push(format!("{mm} mm worst |err| {worst:.3}"));
    }
    Ok(parts.join(", "))
}

fn random_mask(rng: &mut ChaCha8Rng) -> SegmentationMask {
    let w = rng.random_range(1..=40u32);
    let h = rng.random_range(1..=40u32);
    let mut m = SegmentationMask::empty(w, h);
    match rng.random_range(0..3) {
        0 => {
            let p = rng.random_range(0.02..0.6);
            for y in 0..h {
                for x in 0..w {
                    m.set(x, y, rng.random_bool(p));
                }
            }
        }
        1 => {
            for _ in 0..rng.random_range(1..5) {
                let cx = rng.random_range(0.0..w as f64);
                let cy = rng.random_range(0.0..h as f64);
                let r = rng.random_range(0.5..12.0);
                for y in 0..h {
                    for x in 0..w {
                        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                        if dx * dx + dy * dy <= r * r {
                            m.set(x, y, true);
                        }
                    }
                }
            }
        }
        _ => {
            // Axis-aligned rectangles give many equal-length chords.
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            let x1 = rng.random_range(x0..w);
            let y1 = rng.random_range(y0..h);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    m.set(x, y, true);
                }
            }
        }
    }
    m
}

fn chord_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut compared = 0;
    while compared < 200 {
        let m = random_mask(&mut rng);
        let boundary = chord::extract_boundary(&m);
        if boundary.len() < 2 {
            continue;
        }
        let fast = chord::max_chord(&boundary).map_err(|e| e.to_string())?;
        let slow = chord::max_chord_brute_force(&boundary).map_err(|e| e.to_string())?;
        ensure(fast == slow, || format!("mask #{compared}: {fast:?} vs {slow:?}"))?;
        // The longest chord of the whole mask lies on its boundary.
        let all: Vec<Point> = m.points().collect();
        let mut best = 0u64;
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                best = best.max(a.dist2(*b));
            }
        }
        ensure(fast.d_px == (best as f64).sqrt(), || {
            format!("mask #{compared}: {} vs all-pixel {}", fast.d_px, (best as f64).sqrt())
        })?;
        compared += 1;
    }
    Ok(format!("{compared} masks identical"))
}

fn oracle_all_ok(cfg: &GateConfig, s: &SensorSample) -> bool {
    let depth = s.depth_mm >= cfg.depth_min_mm && s.depth_mm <= cfg.depth_max_mm;
    let level = s.pitch_deg.abs() <= cfg.pitch_tolerance_deg && s.roll_deg.abs() <= cfg.roll_tolerance_deg;
    let aligned = match (s.candidate_center, s.candidate_radius_px) {
        (Some(c), Some(r)) => {
            let dx = c.x as f64 - cfg.guide_center.x as f64;
            let dy = c.y as f64 - cfg.guide_center.y as f64;
            r > 0.0 && dx.hypot(dy) <= cfg.guide_inner_radius_px && r <= cfg.guide_outer_radius_px
        }
        _ => false,
    };
    depth && level && aligned
}

fn random_sample(rng: &mut ChaCha8Rng, t: u64, bias: f64) -> SensorSample {
    let good = rng.random_bool(bias);
    let angle = |rng: &mut ChaCha8Rng| -> f64 {
        if good || rng.random_bool(0.5) {
            *[0.0, 1.999, 2.0, -2.0, 0.5].get(rng.random_range(0..5)).unwrap()
        } else {
            *[2.0001, -2.5, 10.0, -45.0].get(rng.random_range(0..4)).unwrap()
        }
    };
    let depth_mm = if good || rng.random_bool(0.5) {
        *[175u16, 219, 300, 400].get(rng.random_range(0..4)).unwrap()
    } else {
        *[0u16, 174, 401, 1200].get(rng.random_range(0..4)).unwrap()
    };
    let (candidate_center, candidate_radius_px) = if !good && rng.random_bool(0.2) {
        (None, None)
    } else {
        let off = if good { 20 } else { 60 };
        let x = 225 + rng.random_range(0..=off) - off / 2;
        let y = 225 + rng.random_range(0..=off) - off / 2;
        let r = if good { 120.0 } else { rng.random_range(-5.0..260.0) };
        (Some(Point::new(x, y)), Some(r))
    };
    SensorSample {
        timestamp_ms: t,
        depth_mm,
        pitch_deg: angle(rng),
        roll_deg: angle(rng),
        candidate_center,
        candidate_radius_px,
    }
}

fn gate_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut captures, mut misses) = (0, 0);
    for n in 0..10_000 {
        let cfg = GateConfig {
            required_consecutive: rng.random_range(1..=6),
            ..GateConfig::default()
        };
        let len = rng.random_range(0..40usize);
        let bias = rng.random_range(0.3..0.98);
        let mut t = 0u64;
        let stream: Vec<SensorSample> = (0..len)
            .map(|_| {
                t += rng.random_range(0..50);
                random_sample(&mut rng, t, bias)
            })
            .collect();
        let ok: Vec<bool> = stream.iter().map(|s| oracle_all_ok(&cfg, s)).collect();
        let k = cfg.required_consecutive as usize;
        let first_end = (k..=ok.len()).find(|&end| ok[end - k..end].iter().all(|&b| b));

        let (trace, decision) = gate::run_stream(&cfg, &stream).map_err(|e| e.to_string())?;
        match first_end {
            Some(end) => {
                ensure(decision == CaptureDecision::Capture && trace.len() == end, || {
                    format!("stream #{n}: expected capture at sample {end}, got {decision:?} after {}", trace.len())
                })?;
                captures += 1;
            }
            None => {
                ensure(decision == CaptureDecision::NoCapture && trace.len() == len, || {
                    format!("stream #{n}: unexpected {decision:?}")
                })?;
                misses += 1;
            }
        }
        for (e, &want) in trace.iter().zip(&ok) {
            ensure(e.status.all_ok == want, || format!("stream #{n}: panel status {:?}", e.status))?;
        }
    }
    ensure(captures > 1000 && misses > 1000, || format!("unbalanced: {captures}/{misses}"))?;
    Ok(format!("10000 streams ({captures} capture, {misses} no capture)"))
}

fn questionnaire(bits: u16) -> Questionnaire {
    let b = |i: u16| bits & (1 << i) != 0;
    Questionnaire {
        hiv_positive: b(0),
        recent_tb_contact: b(1),
        immunosuppressed: b(2),
        organ_transplant: b(3),
        fibrotic_chest_xray: b(4),
        recent_immigrant_high_burden: b(5),
        injection_drug_use: b(6),
        high_risk_congregate_resident: b(7),
        mycobacteriology_lab_worker: b(8),
        child_under_4: b(9),
        lived_low_incidence_area: b(10),
    }
}

fn oracle_threshold(bits: u16) -> f64 {
    if bits & 0b000_0001_1111 != 0 {
        5.0
    } else if bits & 0b111_1110_0000 != 0 {
        10.0
    } else {
        15.0
    }
}

fn interpretation() -> Outcome {
    let rules = RuleTable::default();
    let diameters = [4.97, 5.0, 9.23, 10.0, 14.99, 15.0];
    for bits in 0..(1u16 << 11) {
        let q = questionnaire(bits);
        for d in diameters {
            let a = rules.classify(d, &q).map_err(|e| e.to_string())?;
            let t = oracle_threshold(bits);
            let want = if d >= t { TstResult::Positive } else { TstResult::Negative };
            ensure(a.threshold_mm == t && a.result == want && a.diameter_mm == d, || {
                format!("bits {bits:011b}, {d} mm: {a:?}; expected {t} mm {want:?}")
            })?;
        }
    }
    let fig4 = [
        (15.00, 0u16, 15.0, TstResult::Positive),
        (9.23, 1 << 10, 10.0, TstResult::Negative),
        (4.97, 1 << 0, 5.0, TstResult::Negative),
    ];
    for (d, bits, t, want) in fig4 {
        let a = rules.classify(d, &questionnaire(bits)).map_err(|e| e.to_string())?;
        ensure(a.threshold_mm == t && a.result == want, || format!("{d} mm: {a:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..10_000 {
        let bits = rng.random_range(0..1u16 << 11);
        let more = bits | rng.random_range(0..1u16 << 11);
        let d1 = rng.random_range(0.0..30.0);
        let d2 = d1 + rng.random_range(0.0..5.0);
        let (q, q_more) = (questionnaire(bits), questionnaire(more));
        let a1 = rules.classify(d1, &q).map_err(|e| e.to_string())?;
        let a2 = rules.classify(d2, &q).map_err(|e| e.to_string())?;
        let a3 = rules.classify(d1, &q_more).map_err(|e| e.to_string())?;
        ensure(!(a1.result == TstResult::Positive && a2.result == TstResult::Negative), || {
            format!("{d1} positive but {d2} negative for {bits:011b}")
        })?;
        ensure(a3.threshold_mm <= a1.threshold_mm, || {
            format!("adding risk factors {bits:011b} -> {more:011b} raised the threshold")
        })?;
        ensure(!(a1.result == TstResult::Positive && a3.result == TstResult::Negative), || {
            format!("adding risk factors flipped {d1} mm to negative")
        })?;
    }
    Ok(format!("{} table cells, worked examples, 10000 monotonicity draws", 2048 * diameters.len()))
}

fn random_raster(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Raster {
    let pixels = (0..w * h).map(|_| rng.random::<[u8; 3]>()).collect();
    Raster::new(w, h, pixels).expect("sized")
}

fn plumbing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    // Crop offsets.
    let p = raster::center_crop_offset(1080, 1920, 450).map_err(|e| e.to_string())?;
    ensure(p == Point::new(315, 735), || format!("1080x1920 offset {p:?}"))?;
    for w in 450..=700u32 {
        for h in [450u32, 451, 452, 599, 1000, 1920] {
            let p = raster::center_crop_offset(w, h, 450).map_err(|e| e.to_string())?;
            ensure(p == Point::new((w - 450) / 2, (h - 450) / 2) && p.x + 450 <= w, || {
                format!("{w}x{h} offset {p:?}")
            })?;
        }
    }
    ensure(
        matches!(raster::center_crop_offset(449, 1000, 450), Err(RasterError::CropTooLarge { .. })),
        || "449 px wide image accepted for a 450 crop".into(),
    )?;
    let img = random_raster(&mut rng, 61, 47);
    let crop = raster::center_crop(&img, 21).map_err(|e| e.to_string())?;
    for y in 0..21 {
        for x in 0..21 {
            ensure(crop.get(x, y) == img.get(x + 20, y + 13), || format!("crop pixel ({x},{y})"))?;
        }
    }

    // DPTH round-trip.
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..40u32), rng.random_range(1..40u32));
        let depths = (0..w * h).map(|_| rng.random::<u16>()).collect();
        let f = DepthFrame::new(w, h, depths).map_err(|e| e.to_string())?;
        let bytes = raster::encode_depth_frame(&f);
        ensure(bytes.len() == 12 + 2 * (w * h) as usize && bytes[..4] == *b"DPTH", || "DPTH layout".into())?;
        let back = raster::decode_depth_frame(&bytes).map_err(|e| e.to_string())?;
        ensure(back == f && raster::encode_depth_frame(&back) == bytes, || "DPTH round-trip".into())?;
    }

    // Store round-trip across a reopen.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let administered = Utc.with_ymd_and_hms(2026, 3, 2, 9, 15, 0).unwrap();
    let expected = {
        let store = RecordStore::open(dir.path()).map_err(|e| e.to_string())?;
        let case = store.create_case(administered).map_err(|e| e.to_string())?;
        let image = store.put_artifact(&raster::encode_png(&img), "png").map_err(|e| e.to_string())?;
        let mut cap = CaptureArtifact::new(image, administered + chrono::Duration::hours(50));
        cap.measurement = Some(ChordMeasurement {
            p1: Point::new(3, 4),
            p2: Point::new(70, 41),
            diameter_px: 65.07,
            diameter_mm: 0.1523 * 65.07,
            factor_used: 0.1523,
        });
        let cap_id = cap.capture_id.clone();
        store.add_capture(&case.case_id, cap).map_err(|e| e.to_string())?;
        store
            .decide_capture(&case.case_id, &cap_id, records::CaptureDecision::Accept)
            .map_err(|e| e.to_string())?;
        store
            .schedule_reminder(&case.case_id, records::ReadWindow::default())
            .map_err(|e| e.to_string())?;
        let (case, _) = store
            .update_case(&case.case_id, |c| {
                let q = questionnaire(1 << 10);
                c.assessment = Some(RuleTable::default().classify(9.23, &q).expect("valid"));
                c.questionnaire = Some(q);
                c.refresh_status();
                Ok(())
            })
            .map_err(|e| e.to_string())?;
        case
    };
    let store = RecordStore::open(dir.path()).map_err(|e| e.to_string())?;
    let back = store.load_case(&expected.case_id).map_err(|e| e.to_string())?;
    ensure(back == expected, || format!("store round-trip: {back:?} != {expected:?}"))?;
    let image = store.read_artifact(&back.captures[0].image_path).map_err(|e| e.to_string())?;
    ensure(raster::decode_png(&image).map_err(|e| e.to_string())? == img, || "artifact round-trip".into())?;
    ensure(records::decode_case(&records::encode_case(&back)).map_err(|e| e.to_string())? == back, || {
        "case line round-trip".into()
    })?;

    // Overlay alpha endpoints.
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..30u32), rng.random_range(1..30u32));
        let img = random_raster(&mut rng, w, h);
        let bits = (0..w * h).map(|_| rng.random_bool(0.4)).collect();
        let mask = SegmentationMask::from_bits(w, h, bits);
        let color: [u8; 3] = rng.random();
        let clear = segment::render_overlay(&img, &mask, OverlayStyle { alpha: 0.0, segment_color: color })
            .map_err(|e| e.to_string())?;
        ensure(clear == img, || "alpha 0 changed the image".into())?;
        let solid = segment::render_overlay(&img, &mask, OverlayStyle { alpha: 1.0, segment_color: color })
            .map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let want = if mask.get(x, y) { color } else { img.get(x, y) };
                ensure(solid.get(x, y) == want, || format!("alpha 1 pixel ({x},{y})"))?;
            }
        }
    }
    Ok("crop offsets, DPTH, store, overlay endpoints exact".into())
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("calibration fidelity", Duration::from_millis(100), calibration_fidelity),
        ("band selection", Duration::from_secs(1), band_selection),
        ("depth-sweep reproduction", Duration::from_secs(30), depth_sweep),
        ("scalar-fit reproduction", Duration::from_secs(30), scalar_fit),
        ("end-to-end phantom accuracy", Duration::from_secs(10), end_to_end),
        ("chord oracle equivalence", Duration::from_secs(10), chord_oracle),
        ("gate correctness", Duration::from_secs(10), gate_property),
        ("interpretation table", Duration::from_secs(5), interpretation),
        ("plumbing invariants", Duration::from_secs(5), plumbing),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > budget => Err(format!("{msg}; over the {budget:?} budget")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{:.2}s]", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{:.2}s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
