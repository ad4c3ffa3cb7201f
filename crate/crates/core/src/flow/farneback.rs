//! Two-frame dense optical flow by polynomial expansion.
//!
//! Each frame is locally approximated by a quadratic polynomial fitted with
//! Gaussian applicability weights. Under a displacement `d` the linear
//! coefficients shift by `-2 A d`, so `d` follows from a 2x2 system per
//! pixel, averaged over a Gaussian window. A coarse-to-fine pyramid handles
//! displacements larger than the expansion support, and each level runs a
//! few refinement passes re-sampling the second frame along the current flow.

use super::image::{gaussian_half_kernel, GrayImage, Plane, Sampling};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FarnebackParams {
    /// Number of pyramid levels including the full-resolution one.
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    /// Side of the Gaussian averaging window (odd).
    pub window_size: usize,
    pub iterations: usize,
    /// Half-width of the polynomial expansion neighbourhood.
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        FarnebackParams {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.2,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return bad(format!("flow window_size must be odd and >= 3, got {}", self.window_size));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad(format!("flow pyramid_scale must be in (0, 1), got {}", self.pyramid_scale));
        }
        if self.poly_n == 0 || self.poly_n % 2 == 0 {
            return bad(format!("flow poly_n must be odd, got {}", self.poly_n));
        }
        if self.pyramid_levels == 0 || self.iterations == 0 {
            return bad("flow pyramid_levels and iterations must be >= 1".into());
        }
        if self.poly_sigma <= 0.0 {
            return bad(format!("flow poly_sigma must be positive, got {}", self.poly_sigma));
        }
        Ok(())
    }

    /// Smallest side an image may have.
    pub fn min_side(&self) -> usize {
        2 * self.poly_n + 1
    }
}

/// Per-pixel displacement from `onset` to `apex`, as `(u, v)` planes in pixels.
///
/// Content at `(x, y)` in `onset` is found near `(x + u, y + v)` in `apex`.
pub fn farneback_flow(onset: &GrayImage, apex: &GrayImage, params: &FarnebackParams) -> Result<(Plane, Plane)> {
    params.validate()?;
    if onset.width() != apex.width() || onset.height() != apex.height() {
        return Err(Error::Input(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            onset.width(),
            onset.height(),
            apex.width(),
            apex.height()
        )));
    }
    let min = params.min_side();
    let (w, h) = (onset.width(), onset.height());
    if w < min || h < min {
        return Err(Error::Resolution { width: w, height: h, min });
    }
    farneback_planes(&onset.to_plane(), &apex.to_plane(), params)
}

pub(crate) fn farneback_planes(i0: &Plane, i1: &Plane, params: &FarnebackParams) -> Result<(Plane, Plane)> {
    let (w, h) = (i0.width, i0.height);
    let min = params.min_side();
    let mut levels = 1;
    let mut scale = 1.0;
    while levels < params.pyramid_levels {
        scale *= params.pyramid_scale;
        if ((w as f64 * scale).round() as usize) < min || ((h as f64 * scale).round() as usize) < min {
            break;
        }
        levels += 1;
    }

    let basis = ExpansionBasis::new(params.poly_n, params.poly_sigma);
    let mut flow: Option<(Plane, Plane)> = None;
    for k in (0..levels).rev() {
        let scale = params.pyramid_scale.powi(k as i32);
        let lw = (w as f64 * scale).round() as usize;
        let lh = (h as f64 * scale).round() as usize;
        let level = |img: &Plane| -> Plane {
            if k == 0 {
                return img.clone();
            }
            let sigma = (1.0 / scale - 1.0) * 0.5;
            let ksize = (((sigma * 5.0).round() as usize) | 1).max(3);
            img.blur_symmetric(&gaussian_half_kernel(ksize / 2, sigma))
                .resize(lw, lh, Sampling::HalfPixel)
        };
        let r0 = basis.expand(&level(i0));
        let r1 = basis.expand(&level(i1));
        let (mut u, mut v) = match flow.take() {
            Some((pu, pv)) => {
                let up = 1.0 / params.pyramid_scale;
                let mut u = pu.resize(lw, lh, Sampling::HalfPixel);
                let mut v = pv.resize(lw, lh, Sampling::HalfPixel);
                u.data.iter_mut().for_each(|x| *x *= up);
                v.data.iter_mut().for_each(|x| *x *= up);
                (u, v)
            }
            None => (Plane::zeros(lw, lh), Plane::zeros(lw, lh)),
        };
        let window = gaussian_half_kernel(params.window_size / 2, (params.window_size / 2) as f64 * 0.3);
        let mut m = update_matrices(&r0, &r1, &u, &v);
        for it in 0..params.iterations {
            let blurred: Vec<Plane> = m.iter().map(|c| c.blur_symmetric(&window)).collect();
            solve_flow(&blurred, &mut u, &mut v);
            if it + 1 < params.iterations {
                m = update_matrices(&r0, &r1, &u, &v);
            }
        }
        flow = Some((u, v));
    }
    Ok(flow.expect("at least one level"))
}

/// Quadratic-fit coefficients per pixel, five planes:
/// `[b_y, b_x, a_yy, a_xx, a_xy]` (the constant term is not needed).
struct Expansion {
    planes: [Plane; 5],
}

struct ExpansionBasis {
    n: usize,
    g: Vec<f64>,
    xg: Vec<f64>,
    xxg: Vec<f64>,
    ig11: f64,
    ig03: f64,
    ig33: f64,
    ig55: f64,
}

impl ExpansionBasis {
    fn new(n: usize, sigma: f64) -> Self {
        let g = {
            let raw: Vec<f64> = (0..=n).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
            let s = raw[0] + 2.0 * raw[1..].iter().sum::<f64>();
            raw.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let xg: Vec<f64> = g.iter().enumerate().map(|(x, v)| x as f64 * v).collect();
        let xxg: Vec<f64> = g.iter().enumerate().map(|(x, v)| (x * x) as f64 * v).collect();

        // Gram matrix of the basis (1, x, y, x^2, y^2, xy) under g(x)g(y).
        let ni = n as i64;
        let gw = |i: i64| g[i.unsigned_abs() as usize];
        let (mut g00, mut g11, mut g33, mut g55) = (0.0, 0.0, 0.0, 0.0);
        for y in -ni..=ni {
            for x in -ni..=ni {
                let wgt = gw(x) * gw(y);
                let (xf, yf) = (x as f64, y as f64);
                g00 += wgt;
                g11 += wgt * xf * xf;
                g33 += wgt * xf.powi(4);
                g55 += wgt * xf * xf * yf * yf;
            }
        }
        // The (1, x^2, y^2) block couples; x, y and xy are decoupled.
        let block = [[g00, g11, g11], [g11, g33, g55], [g11, g55, g33]];
        let inv = invert3(block);
        ExpansionBasis {
            n,
            g,
            xg,
            xxg,
            ig11: 1.0 / g11,
            ig03: inv[0][1],
            ig33: inv[1][1],
            ig55: 1.0 / g55,
        }
    }

    fn expand(&self, src: &Plane) -> Expansion {
        let (w, h, n) = (src.width, src.height, self.n);
        let mut planes: [Plane; 5] = std::array::from_fn(|_| Plane::zeros(w, h));
        // vertical pass: per column, sums of g, y*g, y^2*g weighted intensities
        let mut row = vec![[0.0f64; 3]; w + 2 * n];
        for y in 0..h {
            for x in 0..w {
                let c = src.at(x, y);
                let mut acc = [c * self.g[0], 0.0, c * self.xxg[0]];
                for k in 1..=n {
                    let up = src.at(x, y.saturating_sub(k));
                    let down = src.at(x, (y + k).min(h - 1));
                    acc[0] += self.g[k] * (up + down);
                    acc[1] += self.xg[k] * (down - up);
                    acc[2] += self.xxg[k] * (up + down);
                }
                row[x + n] = acc;
            }
            for k in 0..n {
                row[k] = row[n];
                row[w + n + k] = row[w + n - 1];
            }
            // horizontal pass
            for x in 0..w {
                let c = x + n;
                let mut b1 = row[c][0] * self.g[0];
                let mut b2 = 0.0;
                let mut b3 = row[c][1] * self.g[0];
                let mut b4 = 0.0;
                let mut b5 = row[c][2] * self.g[0];
                let mut b6 = 0.0;
                for k in 1..=n {
                    let (r, l) = (row[c + k], row[c - k]);
                    let tg = r[0] + l[0];
                    b1 += tg * self.g[k];
                    b4 += tg * self.xxg[k];
                    b2 += (r[0] - l[0]) * self.xg[k];
                    b3 += (r[1] + l[1]) * self.g[k];
                    b6 += (r[1] - l[1]) * self.xg[k];
                    b5 += (r[2] + l[2]) * self.g[k];
                }
                let i = y * w + x;
                planes[0].data[i] = b3 * self.ig11;
                planes[1].data[i] = b2 * self.ig11;
                planes[2].data[i] = b1 * self.ig03 + b5 * self.ig33;
                planes[3].data[i] = b1 * self.ig03 + b4 * self.ig33;
                planes[4].data[i] = b6 * self.ig55;
            }
        }
        Expansion { planes }
    }
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

const BORDER: usize = 5;
const BORDER_WEIGHTS: [f64; BORDER] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];

/// Builds the five per-pixel products `[G11, G12, G22, h1, h2]` of the
/// normal equations for the current flow estimate.
fn update_matrices(r0: &Expansion, r1: &Expansion, u: &Plane, v: &Plane) -> [Plane; 5] {
    let (w, h) = (u.width, u.height);
    let mut m: [Plane; 5] = std::array::from_fn(|_| Plane::zeros(w, h));
    let p0 = &r0.planes;
    let p1 = &r1.planes;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (u.data[i], v.data[i]);
            let (fx, fy) = (x as f64 + dx, y as f64 + dy);
            let inside = fx >= 0.0 && fy >= 0.0 && fx <= (w - 1) as f64 && fy <= (h - 1) as f64;
            let (mut r2, mut r3, r4, r5, r6);
            if inside {
                let s: [f64; 5] = std::array::from_fn(|c| p1[c].sample(fx, fy));
                r2 = s[0];
                r3 = s[1];
                r4 = (p0[2].data[i] + s[2]) * 0.5;
                r5 = (p0[3].data[i] + s[3]) * 0.5;
                r6 = (p0[4].data[i] + s[4]) * 0.25;
            } else {
                r2 = 0.0;
                r3 = 0.0;
                r4 = p0[2].data[i];
                r5 = p0[3].data[i];
                r6 = p0[4].data[i] * 0.5;
            }
            r2 = (p0[0].data[i] - r2) * 0.5;
            r3 = (p0[1].data[i] - r3) * 0.5;
            r2 += r4 * dy + r6 * dx;
            r3 += r6 * dy + r5 * dx;

            let mut scale = 1.0;
            if x < BORDER {
                scale *= BORDER_WEIGHTS[x];
            }
            if x + BORDER >= w {
                scale *= BORDER_WEIGHTS[w - x - 1];
            }
            if y < BORDER {
                scale *= BORDER_WEIGHTS[y];
            }
            if y + BORDER >= h {
                scale *= BORDER_WEIGHTS[h - y - 1];
            }
            let (r2, r3, r4, r5, r6) = (r2 * scale, r3 * scale, r4 * scale, r5 * scale, r6 * scale);

            m[0].data[i] = r4 * r4 + r6 * r6;
            m[1].data[i] = (r4 + r5) * r6;
            m[2].data[i] = r5 * r5 + r6 * r6;
            m[3].data[i] = r4 * r2 + r6 * r3;
            m[4].data[i] = r6 * r2 + r5 * r3;
        }
    }
    m
}

fn solve_flow(m: &[Plane], u: &mut Plane, v: &mut Plane) {
    for i in 0..u.data.len() {
        let (g11, g12, g22, h1, h2) = (m[0].data[i], m[1].data[i], m[2].data[i], m[3].data[i], m[4].data[i]);
        let idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
        u.data[i] = (g11 * h2 - g12 * h1) * idet;
        v.data[i] = (g22 * h1 - g12 * h2) * idet;
    }
}
