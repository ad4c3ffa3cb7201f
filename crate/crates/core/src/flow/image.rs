//! 8-bit grayscale frames, binary PNM ingestion, and float planes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<GrayImage> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// Converts interleaved RGB with luma weights 0.299 / 0.587 / 0.114.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|&p| p as f64).collect(),
        }
    }

    /// Reads binary PGM (`P5`) or PPM (`P6`, converted to luma), maxval 255.
    pub fn read_pnm(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pnm(&bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<GrayImage> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::Input(format!("unsupported PNM magic {other:?}"))),
        };
        let width: usize = parse_num(&next_token(bytes, &mut pos)?)?;
        let height: usize = parse_num(&next_token(bytes, &mut pos)?)?;
        let maxval: usize = parse_num(&next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::Input(format!("only 8-bit PNM supported, maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * channels;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Input(format!("raster truncated: need {need} bytes")))?;
        if channels == 1 {
            GrayImage::new(width, height, raster.to_vec())
        } else {
            GrayImage::from_rgb(width, height, raster)
        }
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Input("PNM header truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Input(format!("bad PNM header number {tok:?}")))
}

/// Row-major floating point plane used by the flow code.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Sample-position convention for [`Plane::resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Pixel centers at half-integers; edges clamp.
    HalfPixel,
    /// First and last samples land exactly on the source corners.
    AlignCorners,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Plane {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Plane {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a real position, clamping to the border.
    pub fn sample(&self, fx: f64, fy: f64) -> f64 {
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let top = self.at(x0, y0) * (1.0 - ax) + self.at(x1, y0) * ax;
        let bot = self.at(x0, y1) * (1.0 - ax) + self.at(x1, y1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    pub fn resize(&self, width: usize, height: usize, sampling: Sampling) -> Plane {
        let map = |dst: usize, src_len: usize, dst_len: usize| -> f64 {
            match sampling {
                Sampling::HalfPixel => (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5,
                Sampling::AlignCorners if dst_len == 1 => 0.0,
                Sampling::AlignCorners => dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64,
            }
        };
        Plane::from_fn(width, height, |x, y| {
            self.sample(map(x, self.width, width), map(y, self.height, height))
        })
    }

    /// Separable correlation with a symmetric kernel `k[0..=r]`, replicating borders.
    pub fn blur_symmetric(&self, kernel: &[f64]) -> Plane {
        let r = kernel.len() - 1;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = kernel[0] * self.at(x, y);
                for k in 1..=r {
                    let xl = x.saturating_sub(k);
                    let xr = (x + k).min(w - 1);
                    acc += kernel[k] * (self.at(xl, y) + self.at(xr, y));
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = kernel[0] * tmp[y * w + x];
                for k in 1..=r {
                    let yu = y.saturating_sub(k);
                    let yd = (y + k).min(h - 1);
                    acc += kernel[k] * (tmp[yu * w + x] + tmp[yd * w + x]);
                }
                out[y * w + x] = acc;
            }
        }
        Plane { width: w, height: h, data: out }
    }
}

/// Normalized half-kernel `g[0..=radius]` of a Gaussian.
pub fn gaussian_half_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= s);
    k
}
