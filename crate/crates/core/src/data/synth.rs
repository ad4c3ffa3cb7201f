//! Synthetic onset/apex pairs: a textured face-like frame warped by a
//! localized displacement bump whose position depends on the class.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::data::{write_manifest, SampleManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::flow::GrayImage;
use crate::nn::{derive_seed, rng_from_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub classes: usize,
    pub subjects: usize,
    pub samples_per_subject: usize,
    pub seed: u64,
    /// Frame side in pixels.
    pub size: usize,
}

impl SynthSpec {
    pub fn new(classes: usize, subjects: usize, samples_per_subject: usize, seed: u64) -> SynthSpec {
        SynthSpec { classes, subjects, samples_per_subject, seed, size: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("synthetic data needs at least 2 classes, got {}", self.classes)));
        }
        if self.subjects < 2 {
            return Err(Error::Config(format!("synthetic data needs at least 2 subjects, got {}", self.subjects)));
        }
        if self.samples_per_subject == 0 {
            return Err(Error::Config("samples_per_subject must be positive".into()));
        }
        if self.size < 32 {
            return Err(Error::Config(format!("synthetic frame size {} is below 32", self.size)));
        }
        Ok(())
    }
}

/// Sum of random plane waves, evaluated at real coordinates so warps are exact.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<[f64; 4]>,
}

impl Texture {
    /// `count` waves with wavelengths in `[min_wl, max_wl]` and total
    /// amplitude about `contrast`.
    pub fn random(rng: &mut Rng, count: usize, min_wl: f64, max_wl: f64, contrast: f64) -> Texture {
        let waves = (0..count)
            .map(|_| {
                let k = TAU / rng.random_range(min_wl..=max_wl);
                let theta = rng.random_range(0.0..TAU);
                let amp = contrast * rng.random_range(0.5..1.0) / (count as f64).sqrt();
                [k * theta.cos(), k * theta.sin(), rng.random_range(0.0..TAU), amp]
            })
            .collect();
        Texture { waves }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.waves.iter().map(|[kx, ky, ph, a]| a * (kx * x + ky * y + ph).sin()).sum()
    }
}

/// Where and in which direction a class moves, in pixels of the frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub dir: (f64, f64),
}

const ZONES: [(&str, f64, f64, f64, f64); 6] = [
    ("brow_left", 0.31, 0.28, 0.0, -1.0),
    ("mouth_corner_right", 0.66, 0.70, 0.7071, -0.7071),
    ("lip_center", 0.50, 0.80, 0.0, 1.0),
    ("brow_right", 0.69, 0.28, 0.0, -1.0),
    ("mouth_corner_left", 0.34, 0.70, -0.7071, -0.7071),
    ("nose", 0.50, 0.53, 0.0, -1.0),
];

pub fn class_name(class: usize) -> String {
    ZONES.get(class).map_or_else(|| format!("zone{class}"), |z| z.0.to_string())
}

/// Region of a class; classes past the named zones are spread on a ring.
pub fn class_region(class: usize, size: usize) -> Region {
    let s = size as f64;
    let (fx, fy, dx, dy) = match ZONES.get(class) {
        Some(&(_, fx, fy, dx, dy)) => (fx, fy, dx, dy),
        None => {
            let a = class as f64 * 2.399;
            (0.5 + 0.3 * a.cos(), 0.5 + 0.3 * a.sin(), -a.sin(), a.cos())
        }
    };
    Region { cx: fx * s, cy: fy * s, sigma: s / 16.0, dir: (dx, dy) }
}

fn face(texture: &Texture, size: usize, x: f64, y: f64) -> f64 {
    let c = size as f64 / 2.0;
    let r = ((x - c) / (0.42 * size as f64)).powi(2) + ((y - c) / (0.5 * size as f64)).powi(2);
    let shade = 90.0 + 60.0 / (1.0 + (8.0 * (r - 1.0)).exp());
    shade + texture.eval(x, y)
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders an onset frame and its apex, where the apex is the onset warped
/// by `amplitude * gaussian * dir` around the region center.
pub fn render_pair(texture: &Texture, region: &Region, amplitude: f64, size: usize) -> (GrayImage, GrayImage) {
    let mut onset = Vec::with_capacity(size * size);
    let mut apex = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let d2 = (xf - region.cx).powi(2) + (yf - region.cy).powi(2);
            let g = amplitude * (-d2 / (2.0 * region.sigma * region.sigma)).exp();
            onset.push(quantize(face(texture, size, xf, yf)));
            apex.push(quantize(face(texture, size, xf - g * region.dir.0, yf - g * region.dir.1)));
        }
    }
    (
        GrayImage::new(size, size, onset).expect("sized buffer"),
        GrayImage::new(size, size, apex).expect("sized buffer"),
    )
}

/// Writes `frames/*.pgm` and `manifest.csv` under `out_dir`. Output is a
/// pure function of the spec.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SampleManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let frames = out_dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;

    let mut records = Vec::new();
    for s in 0..spec.subjects {
        let mut subject_rng = rng_from_seed(derive_seed(spec.seed, &[0, s as u64]));
        let texture = Texture::random(&mut subject_rng, 24, 5.0, 16.0, 70.0);
        for k in 0..spec.samples_per_subject {
            let mut rng = rng_from_seed(derive_seed(spec.seed, &[1, s as u64, k as u64]));
            let label = k % spec.classes;
            let mut region = class_region(label, spec.size);
            region.cx += rng.random_range(-1.5..=1.5);
            region.cy += rng.random_range(-1.5..=1.5);
            let amplitude = rng.random_range(1.0..=3.0);
            let (onset, apex) = render_pair(&texture, &region, amplitude, spec.size);

            let sample_id = format!("s{s:02}_{k:03}");
            let onset_path = frames.join(format!("{sample_id}_onset.pgm"));
            let apex_path = frames.join(format!("{sample_id}_apex.pgm"));
            onset.write_pgm(&onset_path)?;
            apex.write_pgm(&apex_path)?;
            records.push(SampleRecord {
                sample_id,
                subject_id: format!("s{s:02}"),
                label,
                onset_path,
                apex_path,
            });
        }
    }
    let manifest = SampleManifest {
        class_names: (0..spec.classes).map(class_name).collect(),
        records,
        protocol_tag: format!("synthetic-seed{}", spec.seed),
    };
    write_manifest(&manifest, out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
