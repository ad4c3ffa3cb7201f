use epir::data::{
    cache_features, class_region, generate_synthetic, load_cached, load_manifest, render_pair, FeatureConfig, SynthSpec,
    Texture,
};
use epir::flow::{farneback_flow, optical_strain, FarnebackParams, GrayImage, Plane};
use epir::nn::rng_from_seed;
use proptest::prelude::*;

fn texture_image(tex: &Texture, w: usize, h: usize, dx: f64, dy: f64) -> GrayImage {
    let px = (0..w * h)
        .map(|i| (128.0 + tex.eval((i % w) as f64 - dx, (i / w) as f64 - dy)).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(w, h, px).unwrap()
}

fn interior_mean(p: &Plane, margin: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for y in margin..p.height - margin {
        for x in margin..p.width - margin {
            s += p.at(x, y);
            n += 1.0;
        }
    }
    s / n
}

#[test]
fn recovers_known_translation() {
    for seed in 0..4 {
        let tex = Texture::random(&mut rng_from_seed(seed), 24, 6.0, 20.0, 60.0);
        let a = texture_image(&tex, 64, 64, 0.0, 0.0);
        let b = texture_image(&tex, 64, 64, 2.0, 1.0);
        let (u, v) = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let (mu, mv) = (interior_mean(&u, 8), interior_mean(&v, 8));
        assert!((mu - 2.0).abs() < 0.25 && (mv - 1.0).abs() < 0.25, "seed {seed}: ({mu}, {mv})");
    }
}

#[test]
fn identical_frames_have_zero_flow() {
    let tex = Texture::random(&mut rng_from_seed(9), 16, 5.0, 15.0, 60.0);
    let a = texture_image(&tex, 40, 36, 0.0, 0.0);
    let (u, v) = farneback_flow(&a, &a, &FarnebackParams::default()).unwrap();
    assert!(u.data.iter().chain(&v.data).all(|x| x.abs() < 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flow_is_shift_equivariant(seed in 0u64..1000, sx in 0usize..4, sy in 0usize..4) {
        let tex = Texture::random(&mut rng_from_seed(seed), 20, 6.0, 18.0, 60.0);
        let (w, h) = (56, 56);
        let a = texture_image(&tex, w, h, 0.0, 0.0);
        let b = texture_image(&tex, w, h, 1.0, -1.0);
        // the same scene viewed through a window moved by (sx, sy)
        let a2 = texture_image(&tex, w, h, -(sx as f64), -(sy as f64));
        let b2 = texture_image(&tex, w, h, 1.0 - sx as f64, -1.0 - sy as f64);
        let p = FarnebackParams::default();
        let (u1, v1) = farneback_flow(&a, &b, &p).unwrap();
        let (u2, v2) = farneback_flow(&a2, &b2, &p).unwrap();
        let m = 12;
        let (mut du, mut dv, mut n) = (0.0, 0.0, 0.0);
        for y in m..h - m - sy {
            for x in m..w - m - sx {
                du += (u1.at(x + sx, y + sy) - u2.at(x, y)).abs();
                dv += (v1.at(x + sx, y + sy) - v2.at(x, y)).abs();
                n += 1.0;
            }
        }
        prop_assert!(du / n < 0.1 && dv / n < 0.1, "mean abs diff ({}, {})", du / n, dv / n);
    }
}

#[test]
fn strain_of_stretch_is_one() {
    let u = Plane::from_fn(16, 16, |x, _| x as f64);
    let s = optical_strain(&u, &Plane::zeros(16, 16)).unwrap();
    assert!((interior_mean(&s, 1) - 1.0).abs() < 1e-3);
}

#[test]
fn synthetic_motion_is_concentrated_in_class_region() {
    let size = 64;
    for class in 0..3 {
        let tex = Texture::random(&mut rng_from_seed(40 + class as u64), 24, 5.0, 16.0, 70.0);
        let region = class_region(class, size);
        let (a, b) = render_pair(&tex, &region, 2.0, size);
        let (u, v) = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0.0, 0.0, 0.0);
        for y in 0..size {
            for x in 0..size {
                let mag = u.at(x, y).hypot(v.at(x, y));
                let r = (x as f64 - region.cx).hypot(y as f64 - region.cy);
                if r <= 2.0 * region.sigma {
                    inside += mag;
                    ni += 1.0;
                } else if r > 4.0 * region.sigma {
                    outside += mag;
                    no += 1.0;
                }
            }
        }
        let (inside, outside) = (inside / ni, outside / no);
        println!("class {class}: region {inside:.3} background {outside:.4}");
        assert!(inside >= 3.0 * outside, "class {class}: {inside} vs {outside}");
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SynthSpec::new(3, 4, 5, 7);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = generate_synthetic(&spec, d1.path()).unwrap();
    generate_synthetic(&spec, d2.path()).unwrap();
    assert_eq!(m1.len(), 20);
    assert_eq!(m1.subjects().len(), 4);
    for r in &m1.records {
        for p in [&r.onset_path, &r.apex_path] {
            let rel = p.strip_prefix(d1.path()).unwrap();
            assert_eq!(std::fs::read(p).unwrap(), std::fs::read(d2.path().join(rel)).unwrap());
        }
    }
    let loaded = load_manifest(d1.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded, m1);
}

#[test]
fn cache_is_idempotent_and_collects_failures() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&SynthSpec::new(2, 2, 3, 1), dir.path().join("data")).unwrap();
    let cfg = FeatureConfig::default();
    let root = dir.path().join("cache");

    let first = cache_features(&m, &cfg, &root).unwrap();
    assert_eq!((first.written, first.skipped), (6, 0));
    assert!(first.failures.is_empty());
    let second = cache_features(&m, &cfg, &root).unwrap();
    assert_eq!((second.written, second.skipped), (0, 6));

    let feats = load_cached(&m, &cfg, &root).unwrap();
    assert_eq!(feats.len(), 6);
    assert!(feats.iter().all(|f| f.width == 28 && f.u.iter().all(|x| (0.0..=1.0).contains(x))));

    std::fs::write(&m.records[2].apex_path, b"P5 64 64 255\n\x00\x01").unwrap();
    let other = FeatureConfig { size: 32, ..cfg };
    let third = cache_features(&m, &other, &root).unwrap();
    assert_eq!(third.written, 5);
    assert_eq!(third.failures.len(), 1);
    assert_eq!(third.failures[0].0, m.records[2].sample_id);
}
