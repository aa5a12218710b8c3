use std::path::PathBuf;

use proptest::prelude::*;
use provenance_core::detector::{
    describe, detect, extract_features, read_feature_file, select_distributed_detailed, write_feature_file,
    DetectorConfig, InterestPoint,
};
use provenance_core::imaging::GrayImage;
use provenance_core::synth::procedural_image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn photo(name: &str) -> GrayImage {
    GrayImage::open(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/photos").join(name)).unwrap()
}

/// Gaussian blobs of assorted sizes and polarity on a mid-grey field.
fn blobs(side: usize) -> GrayImage {
    let centres = [(30.0, 40.0, 4.0, 1.0), (90.0, 30.0, 6.0, -1.0), (64.0, 64.0, 3.0, 1.0), (40.0, 100.0, 5.0, 1.0), (100.0, 95.0, 4.5, -1.0)];
    GrayImage::from_fn(side, side, |x, y| {
        let v: f64 = centres
            .iter()
            .map(|&(cx, cy, s, sign)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                sign * 100.0 * (-d2 / (2.0 * s * s)).exp()
            })
            .sum();
        (128.0 + v).round().clamp(0.0, 255.0) as u8
    })
}

fn strict() -> DetectorConfig {
    DetectorConfig { hessian_threshold: 50.0, points: 10_000, top: 10_000, ..DetectorConfig::dsurf() }
}

#[test]
fn quarter_turn_moves_points_with_the_image() {
    // 129 = 1 + 128 keeps every octave's sampling grid on itself under the turn
    let img = blobs(129);
    let cfg = strict();
    let a = detect(&img, &cfg);
    let b = detect(&img.rotate90(), &cfg);
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    let w = img.width() as f32;
    for p in &a {
        let (x, y) = (p.y, w - 1.0 - p.x);
        let hit = b.iter().any(|q| (q.x - x).abs() <= 1.0 && (q.y - y).abs() <= 1.0);
        assert!(hit, "no partner for ({}, {})", p.x, p.y);
    }
}

#[test]
fn translated_blob_gives_the_same_descriptor() {
    let img = blobs(160);
    let shifted = GrayImage::from_fn(160, 160, |x, y| if x >= 17 && y >= 9 { img.get(x - 17, y - 9) } else { 128 });
    let p = InterestPoint { x: 64.0, y: 64.0, scale: 2.0, response: 1.0 };
    let q = InterestPoint { x: 81.0, y: 73.0, ..p };
    let (d1, d2) = (describe(&img, &[p])[0], describe(&shifted, &[q])[0]);
    let dist = d1.iter().zip(&d2).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt();
    assert!(dist < 1e-3, "{dist}");
}

#[test]
fn detection_is_deterministic_on_photos() {
    let img = photo("camera.jpg");
    let cfg = DetectorConfig::dsurf();
    let a = extract_features(&img, 1, &cfg);
    let b = extract_features(&img, 1, &cfg);
    assert_eq!(a, b);
    for d in &a.descriptors {
        let n = d.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn presets_cap_the_point_count() {
    let img = photo("grass.jpg");
    let all = detect(&img, &DetectorConfig { points: usize::MAX / 2, top: usize::MAX / 2, ..DetectorConfig::dsurf() });
    for cfg in [DetectorConfig::surf2k(), DetectorConfig::dsurf()] {
        let f = extract_features(&img, 0, &cfg);
        assert_eq!(f.len(), cfg.points.min(all.len()));
    }
}

#[test]
fn feature_files_round_trip() {
    let img = procedural_image(128, 128, &mut ChaCha8Rng::seed_from_u64(5));
    let f = extract_features(&img, 42, &DetectorConfig::dsurf());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("0000042.pvf");
    write_feature_file(&path, &f).unwrap();
    assert_eq!(read_feature_file(&path).unwrap(), f);
}

fn arb_points() -> impl Strategy<Value = Vec<InterestPoint>> {
    prop::collection::vec((0f32..100.0, 0f32..100.0, 1f32..4.0, 0f32..1000.0), 0..80).prop_map(|v| {
        v.into_iter().map(|(x, y, scale, response)| InterestPoint { x, y, scale, response }).collect()
    })
}

proptest! {
    #[test]
    fn distributed_selection_invariants(points in arb_points(), p in 1usize..60, m_frac in 0.0f64..1.0) {
        let top = ((p as f64 * m_frac) as usize).clamp(1, p);
        let cfg = DetectorConfig { points: p, top, ..DetectorConfig::dsurf() };
        let sel = select_distributed_detailed(&points, &cfg);
        prop_assert_eq!(sel.points.len(), p.min(points.len()));

        let mut by_response = points.clone();
        by_response.sort_by(|a, b| b.response.total_cmp(&a.response));
        let mut top_sel: Vec<f32> = sel.top().iter().map(|p| p.response).collect();
        top_sel.sort_by(|a, b| b.total_cmp(a));
        let expected: Vec<f32> = by_response.iter().take(top.min(points.len())).map(|p| p.response).collect();
        prop_assert_eq!(top_sel, expected);

        let spread = sel.spread();
        for (i, a) in spread.iter().enumerate() {
            for b in &spread[i + 1..] {
                let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() as f64;
                prop_assert!(d >= cfg.overlap_factor * (a.scale + b.scale) as f64);
            }
        }
    }
}
