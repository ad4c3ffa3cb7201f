//! Onset-to-apex optical flow features: dense flow, optical strain, and the
//! normalized three-channel map fed to the tokenizer.

mod farneback;
mod image;

pub use farneback::{farneback_flow, FarnebackParams};
pub use image::{gaussian_half_kernel, GrayImage, Plane, Sampling};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Three-channel flow feature `(u, v, strain)` of a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub strain: Vec<f64>,
}

impl FlowField {
    /// Channel-major `[3, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data: Vec<Real> = self.u.iter().chain(&self.v).chain(&self.strain).map(|&x| x as Real).collect();
        Tensor::new(data, &[3, self.height, self.width]).expect("consistent planes")
    }

    pub fn from_tensor(t: &Tensor) -> Result<FlowField> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Dimension(format!("flow tensor must be [3, H, W], got {s:?}")));
        }
        let n = s[1] * s[2];
        let d: Vec<f64> = t.data().iter().map(|&x| x as f64).collect();
        let field = FlowField {
            width: s[2],
            height: s[1],
            u: d[..n].to_vec(),
            v: d[n..2 * n].to_vec(),
            strain: d[2 * n..].to_vec(),
        };
        if field.strain.iter().any(|&x| x < 0.0) {
            return Err(Error::Input("negative strain in flow tensor".into()));
        }
        Ok(field)
    }
}

/// Channels of a [`FlowField`], used to report degenerate inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowChannel {
    U,
    V,
    Strain,
}

/// `sqrt(ux^2 + vy^2 + (uy + vx)^2 / 2)` with central differences in the
/// interior and one-sided differences on the border.
pub fn optical_strain(u: &Plane, v: &Plane) -> Result<Plane> {
    if u.width != v.width || u.height != v.height {
        return Err(Error::Input(format!(
            "flow planes differ: {}x{} vs {}x{}",
            u.width, u.height, v.width, v.height
        )));
    }
    let (w, h) = (u.width, u.height);
    let dx = |p: &Plane, x: usize, y: usize| -> f64 {
        if w == 1 {
            0.0
        } else if x == 0 {
            p.at(1, y) - p.at(0, y)
        } else if x == w - 1 {
            p.at(w - 1, y) - p.at(w - 2, y)
        } else {
            (p.at(x + 1, y) - p.at(x - 1, y)) * 0.5
        }
    };
    let dy = |p: &Plane, x: usize, y: usize| -> f64 {
        if h == 1 {
            0.0
        } else if y == 0 {
            p.at(x, 1) - p.at(x, 0)
        } else if y == h - 1 {
            p.at(x, h - 1) - p.at(x, h - 2)
        } else {
            (p.at(x, y + 1) - p.at(x, y - 1)) * 0.5
        }
    };
    Ok(Plane::from_fn(w, h, |x, y| {
        let (ux, uy) = (dx(u, x, y), dy(u, x, y));
        let (vx, vy) = (dx(v, x, y), dy(v, x, y));
        (ux * ux + vy * vy + 0.5 * (uy + vx) * (uy + vx)).sqrt()
    }))
}

/// Resizes the three planes to `out_size` square and min-max normalizes each
/// channel to `[0, 1]`. Flat channels become zeros and are reported.
pub fn assemble_flow_feature(u: &Plane, v: &Plane, strain: &Plane, out_size: usize) -> Result<(FlowField, Vec<FlowChannel>)> {
    if out_size == 0 {
        return Err(Error::Config("flow feature size must be positive".into()));
    }
    if [v, strain].iter().any(|p| p.width != u.width || p.height != u.height) {
        return Err(Error::Input("flow planes have inconsistent sizes".into()));
    }
    let mut degenerate = Vec::new();
    let mut channel = |p: &Plane, which: FlowChannel| -> Vec<f64> {
        let r = if p.width == out_size && p.height == out_size {
            p.clone()
        } else {
            p.resize(out_size, out_size, Sampling::AlignCorners)
        };
        let (lo, hi) = r.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if !(hi > lo) {
            log::warn!("flow channel {which:?} is flat; zeroing it");
            degenerate.push(which);
            return vec![0.0; r.data.len()];
        }
        r.data.iter().map(|x| (x - lo) / (hi - lo)).collect()
    };
    let field = FlowField {
        width: out_size,
        height: out_size,
        u: channel(u, FlowChannel::U),
        v: channel(v, FlowChannel::V),
        strain: channel(strain, FlowChannel::Strain),
    };
    Ok((field, degenerate))
}

/// Full per-sample feature path: flow, strain, then assembly.
pub fn extract_flow_feature(
    onset: &GrayImage,
    apex: &GrayImage,
    params: &FarnebackParams,
    out_size: usize,
) -> Result<(FlowField, Vec<FlowChannel>)> {
    let (u, v) = farneback_flow(onset, apex, params)?;
    let strain = optical_strain(&u, &v)?;
    assemble_flow_feature(&u, &v, &strain, out_size)
}
