use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatview::io::{self, gen_synthetic, Preset, SyntheticSpec};
use splatview::scene::Map;
use splatview::Error;

/// Straightforward PFM reader: whitespace-split header, little-endian rows
/// stored bottom to top.
fn reference_pfm(bytes: &[u8]) -> (usize, usize, usize, Vec<f32>) {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    pos += 1;
    let channels = if fields[0] == "PF" { 3 } else { 1 };
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    assert!(fields[3].parse::<f64>().unwrap() < 0.0);
    let raw: Vec<f32> = bytes[pos..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(raw.len(), w * h * channels);
    let row = w * channels;
    let mut top_down = Vec::with_capacity(raw.len());
    for r in (0..h).rev() {
        top_down.extend_from_slice(&raw[r * row..(r + 1) * row]);
    }
    (w, h, channels, top_down)
}

fn random_map(w: usize, h: usize, c: usize, seed: u64) -> Map {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * c).map(|_| rng.random_range(-10.0f32..10.0) as f64).collect();
    Map::from_data(w, h, c, data).unwrap()
}

#[test]
fn pfm_matches_reference_reader_both_ways() {
    for (c, seed) in [(1, 1), (3, 2)] {
        let m = random_map(7, 5, c, seed);
        let bytes = io::encode_pfm(&m).unwrap();
        let (w, h, ch, data) = reference_pfm(&bytes);
        assert_eq!((w, h, ch), (7, 5, c));
        assert!(data.iter().zip(&m.data).all(|(a, b)| *a as f64 == *b));

        // Hand-built file with extra header whitespace.
        let magic = if c == 3 { "PF" } else { "Pf" };
        let mut file = format!("{magic}\n 7  5\n-1.000000\n").into_bytes();
        for r in (0..5).rev() {
            for v in &m.data[r * 7 * c..(r + 1) * 7 * c] {
                file.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        assert_eq!(io::decode_pfm(&file).unwrap().data, m.data);
    }
}

#[test]
fn ppm_matches_reference_reader() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (6, 4);
    let data: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let m = Map::from_data(w, h, 3, data).unwrap();
    let bytes = io::encode_ppm(&m).unwrap();
    let header = format!("P6\n{w} {h}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()));
    let body = &bytes[header.len()..];
    for (b, v) in body.iter().zip(&m.data) {
        assert_eq!(*b, (v * 255.0).round() as u8);
    }
    let back = io::decode_ppm(&bytes).unwrap();
    assert!(back.data.iter().zip(&m.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));

    let commented = [b"P6 # made by hand\n6 4\n255\n".as_slice(), body].concat();
    assert_eq!(io::decode_ppm(&commented).unwrap().data, back.data);
}

#[test]
fn format_errors_are_typed() {
    let m = random_map(4, 4, 1, 3);
    let bytes = io::encode_pfm(&m).unwrap();
    assert!(matches!(io::decode_pfm(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
    assert!(matches!(io::decode_pfm(b"PX\n4 4\n-1\n"), Err(Error::Parse { .. })));
    assert!(matches!(io::decode_pfm(b"Pf\n4 4\n1.0\n"), Err(Error::UnsupportedFormat { .. })));
    assert!(matches!(io::decode_ppm(b"P6\n2 2\n65535\n"), Err(Error::UnsupportedFormat { .. })));
    assert!(matches!(io::decode_ppm(b"P6\n2 2\n255\nabc"), Err(Error::Parse { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.pfm");
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    match io::read_pfm(&path) {
        Err(e @ Error::Parse { .. }) => assert!(e.to_string().contains("short.pfm")),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(io::read_pfm(&dir.path().join("missing.pfm")), Err(Error::Io { .. })));
}

#[test]
fn scene_round_trips_through_disk() {
    let mut s = gen_synthetic(&SyntheticSpec {
        preset: Preset::BoxCorner,
        width: 24,
        height: 20,
        views: 2,
        seed: 8,
        ..Default::default()
    })
    .unwrap()
    .scene;
    s.views[1].mu = 1.25;
    s.views[0].uncertainty_logit.data[5] = -0.75;
    s.views[0].feature_logit.data[17] = 2.5;
    let dir = tempfile::tempdir().unwrap();
    io::save_scene(&s, dir.path()).unwrap();
    let t = io::load_scene(dir.path()).unwrap();
    assert_eq!(t.views.len(), 2);
    assert_eq!(t.depth_sigma, s.depth_sigma);
    assert_eq!(t.background, s.background);
    for (a, b) in s.views.iter().zip(&t.views) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.camera, b.camera);
        // Maps are stored as f32.
        let f32_exact = |m: &Map| m.data.iter().map(|v| *v as f32 as f64).collect::<Vec<_>>();
        assert_eq!(f32_exact(&a.color), b.color.data);
        assert_eq!(f32_exact(&a.depth), b.depth.data);
        assert_eq!(f32_exact(&a.normal), b.normal.data);
        assert_eq!(f32_exact(&a.uncertainty_logit), b.uncertainty_logit.data);
        assert_eq!(f32_exact(&a.feature_logit), b.feature_logit.data);
    }
}

#[test]
fn damaged_scene_directories_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(io::load_scene(&dir.path().join("nothing")), Err(Error::Io { .. })));

    let s = gen_synthetic(&SyntheticSpec {
        views: 1,
        width: 16,
        height: 16,
        ..Default::default()
    })
    .unwrap()
    .scene;
    io::save_scene(&s, dir.path()).unwrap();
    let depth = dir.path().join("depth_0.pfm");
    let bytes = std::fs::read(&depth).unwrap();
    std::fs::write(&depth, &bytes[..bytes.len() / 2]).unwrap();
    let err = io::load_scene(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
    assert!(err.is_data_error());

    std::fs::remove_file(&depth).unwrap();
    assert!(matches!(io::load_scene(dir.path()), Err(Error::Io { .. })));

    std::fs::write(dir.path().join("scene.json"), "{ not json").unwrap();
    assert!(io::load_scene(dir.path()).is_err());
}

#[test]
fn two_walls_depth_matches_independent_ray_cast() {
    let spec = SyntheticSpec {
        preset: Preset::TwoWalls,
        width: 80,
        height: 60,
        views: 3,
        seed: 21,
        ..Default::default()
    };
    let s = gen_synthetic(&spec).unwrap().scene;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut front_hits = 0;
    for _ in 0..1000 {
        let v = &s.views[rng.random_range(0..3)];
        let (col, row) = (rng.random_range(0..spec.width), rng.random_range(0..spec.height));
        let cam = &v.camera;
        // World ray through the pixel, scaled so the camera-frame z step is 1.
        let r_t = cam.rotation.transpose();
        let origin = -(r_t * cam.translation);
        let dir = r_t * Vector3::new((col as f64 - cam.cx) / cam.fx, (row as f64 - cam.cy) / cam.fy, 1.0);
        let back = (5.0 - origin.z) / dir.z;
        let front = (3.5 - origin.z) / dir.z;
        let expected = if front > 0.0 && origin.x + front * dir.x < 0.0 {
            front_hits += 1;
            front
        } else {
            back
        };
        let idx = row * spec.width + col;
        let got = v.depth.data[idx];
        assert!((got - expected).abs() <= 1e-6 * expected, "view {} pixel ({col},{row}): {got} vs {expected}", v.id);
        let n = v.normal.vec3(idx);
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
    }
    assert!(front_hits > 100 && front_hits < 900, "front wall hits {front_hits}");
}
