//! Dual-norm shifted patch tokenization: the flow map and four diagonally
//! shifted copies are cut into patches, projected by LN -> Linear -> LN,
//! then given a class token and learned positions.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::nn::{normal, LayerNorm, Linear, Module, Parameter, Rng};
use crate::tensor::{Real, Tensor};

/// Channels stacked per pixel: the map itself plus four shifted copies.
pub const STACKED_CHANNELS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DnsptConfig {
    pub input_size: usize,
    pub patch_size: usize,
    pub shift_offset: usize,
    pub model_dim: usize,
}

impl Default for DnsptConfig {
    fn default() -> Self {
        DnsptConfig { input_size: 28, patch_size: 7, shift_offset: 3, model_dim: 128 }
    }
}

impl DnsptConfig {
    pub fn validate(&self) -> Result<()> {
        let (s, p) = (self.input_size, self.patch_size);
        if p == 0 || s == 0 || s % p != 0 {
            return Err(Error::Config(format!("patch_size {p} must divide input_size {s}")));
        }
        if self.shift_offset == 0 || self.shift_offset >= p {
            return Err(Error::Config(format!("shift_offset must be in (0, {p}), got {}", self.shift_offset)));
        }
        if self.model_dim == 0 {
            return Err(Error::Config("model_dim must be positive".into()));
        }
        Ok(())
    }

    /// Tokens per sample, class token excluded.
    pub fn num_patches(&self) -> usize {
        (self.input_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        STACKED_CHANNELS * self.patch_size * self.patch_size
    }
}

/// Offsets `(dx, dy)` of the four copies: right-up, left-up, left-down,
/// right-down. Positive `dy` points down.
pub const DIAGONALS: [(isize, isize); 4] = [(1, -1), (-1, -1), (-1, 1), (1, 1)];

/// Translates a `channels x size x size` map by `offset` pixels in each
/// diagonal direction, zero-filling vacated pixels.
pub fn diagonal_shift(map: &[Real], channels: usize, size: usize, offset: usize) -> Result<[Vec<Real>; 4]> {
    if offset >= size {
        return Err(Error::Config(format!("shift offset {offset} must be below map size {size}")));
    }
    if map.len() != channels * size * size {
        return Err(Error::Dimension(format!("{} values for a {channels}x{size}x{size} map", map.len())));
    }
    let o = offset as isize;
    let shift = |(dx, dy): (isize, isize)| -> Vec<Real> {
        let mut out = vec![0.0; map.len()];
        for c in 0..channels {
            for y in 0..size as isize {
                let sy = y - dy * o;
                if sy < 0 || sy >= size as isize {
                    continue;
                }
                for x in 0..size as isize {
                    let sx = x - dx * o;
                    if sx >= 0 && sx < size as isize {
                        out[(c * size + y as usize) * size + x as usize] = map[(c * size + sy as usize) * size + sx as usize];
                    }
                }
            }
        }
        out
    };
    Ok(DIAGONALS.map(shift))
}

/// Stacks the map with its shifted copies and flattens each patch
/// (channel-major within a patch). Returns `num_patches x patch_dim` values.
pub fn patchify(field: &FlowField, cfg: &DnsptConfig) -> Result<Vec<Real>> {
    cfg.validate()?;
    let s = cfg.input_size;
    if field.width != s || field.height != s {
        return Err(Error::Dimension(format!("flow map is {}x{}, tokenizer expects {s}x{s}", field.width, field.height)));
    }
    let base = field.to_tensor().to_vec();
    let shifted = diagonal_shift(&base, 3, s, cfg.shift_offset)?;
    let planes: Vec<&[Real]> = std::iter::once(base.as_slice()).chain(shifted.iter().map(|v| v.as_slice())).collect();
    let (p, grid) = (cfg.patch_size, s / cfg.patch_size);
    let mut out = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
    for gy in 0..grid {
        for gx in 0..grid {
            for plane in &planes {
                for c in 0..3 {
                    for py in 0..p {
                        let row = (c * s + gy * p + py) * s + gx * p;
                        out.extend_from_slice(&plane[row..row + p]);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Dnspt {
    pub cfg: DnsptConfig,
    pub norm_in: LayerNorm,
    pub proj: Linear,
    pub norm_out: LayerNorm,
    pub cls: Parameter,
    pub pos: Parameter,
}

impl Dnspt {
    pub fn new(cfg: DnsptConfig, rng: &mut Rng) -> Result<Dnspt> {
        cfg.validate()?;
        let (n, d) = (cfg.num_patches(), cfg.model_dim);
        Ok(Dnspt {
            cfg,
            norm_in: LayerNorm::new("dnspt.norm_in", cfg.patch_dim()),
            proj: Linear::new("dnspt.proj", rng, cfg.patch_dim(), d, true),
            norm_out: LayerNorm::new("dnspt.norm_out", d),
            cls: Parameter::zeros("dnspt.cls", &[1, d]),
            pos: Parameter::new("dnspt.pos", normal(rng, 0.02, (n + 1) * d), &[n + 1, d])?,
        })
    }

    /// `[batch, num_patches, patch_dim]` patches to `[batch, num_patches, d]` tokens.
    pub fn tokenize(&self, patches: &Tensor) -> Result<Tensor> {
        let want = [self.cfg.num_patches(), self.cfg.patch_dim()];
        if patches.rank() != 3 || patches.shape()[1..] != want {
            return Err(Error::Dimension(format!("patches {:?}, expected [batch, {}, {}]", patches.shape(), want[0], want[1])));
        }
        self.norm_out.forward(&self.proj.forward(&self.norm_in.forward(patches)?)?)
    }

    /// Prepends the class token and adds positions: `[B, N, d] -> [B, N + 1, d]`.
    pub fn add_cls_and_pos(&self, tokens: &Tensor) -> Result<Tensor> {
        add_cls_and_pos(tokens, self.cls.tensor(), self.pos.tensor())
    }

    pub fn forward(&self, patches: &Tensor) -> Result<Tensor> {
        self.add_cls_and_pos(&self.tokenize(patches)?)
    }
}

pub fn add_cls_and_pos(tokens: &Tensor, cls: &Tensor, pos: &Tensor) -> Result<Tensor> {
    if tokens.rank() != 3 {
        return Err(Error::Dimension(format!("tokens must be [batch, n, d], got {:?}", tokens.shape())));
    }
    let (b, n, d) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if cls.shape() != [1, d] {
        return Err(Error::shape("add_cls_and_pos", tokens.shape(), cls.shape()));
    }
    if pos.shape() != [n + 1, d] {
        return Err(Error::Dimension(format!("position table {:?} does not fit {} tokens of width {d}", pos.shape(), n + 1)));
    }
    let cls_b = Tensor::zeros(&[b, 1, d]).add(cls)?;
    Tensor::concat(&[cls_b, tokens.clone()], 1)?.add(pos)
}

impl Module for Dnspt {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.norm_in.parameters();
        p.extend(self.proj.parameters());
        p.extend(self.norm_out.parameters());
        p.extend([&self.cls, &self.pos]);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.norm_in.parameters_mut();
        p.extend(self.proj.parameters_mut());
        p.extend(self.norm_out.parameters_mut());
        p.extend([&mut self.cls, &mut self.pos]);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng_from_seed;

    fn impulse(size: usize, x: usize, y: usize) -> Vec<Real> {
        let mut m = vec![0.0; size * size];
        m[y * size + x] = 1.0;
        m
    }

    #[test]
    fn shift_moves_impulse() {
        let [ru, lu, ld, rd] = diagonal_shift(&impulse(10, 5, 5), 1, 10, 2).unwrap();
        assert_eq!(rd, impulse(10, 7, 7));
        assert_eq!(ru, impulse(10, 7, 3));
        assert_eq!(lu, impulse(10, 3, 3));
        assert_eq!(ld, impulse(10, 3, 7));
    }

    #[test]
    fn shift_edges() {
        let m = impulse(6, 0, 0);
        let out = diagonal_shift(&m, 1, 6, 2).unwrap();
        assert!(out[1].iter().all(|v| *v == 0.0));
        for copy in diagonal_shift(&m, 1, 6, 0).unwrap() {
            assert_eq!(copy, m);
        }
        assert!(matches!(diagonal_shift(&m, 1, 6, 6), Err(Error::Config(_))));
    }

    #[test]
    fn shift_back_restores_interior() {
        let s = 9;
        let m: Vec<Real> = (0..s * s).map(|i| (i as Real * 0.37).sin()).collect();
        let [_, _, _, rd] = diagonal_shift(&m, 1, s, 2).unwrap();
        let [_, lu, _, _] = diagonal_shift(&rd, 1, s, 2).unwrap();
        for y in 2..s - 2 {
            for x in 2..s - 2 {
                assert_eq!(lu[y * s + x], m[y * s + x]);
            }
        }
    }

    #[test]
    fn config_checks() {
        let bad = DnsptConfig { patch_size: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(DnsptConfig::default().num_patches(), 16);
        assert!(DnsptConfig { shift_offset: 7, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn tokens_are_normalized() {
        let cfg = DnsptConfig { input_size: 8, patch_size: 4, shift_offset: 2, model_dim: 6 };
        let t = Dnspt::new(cfg, &mut rng_from_seed(0)).unwrap();
        let field = FlowField {
            width: 8,
            height: 8,
            u: (0..64).map(|i| (i as f64 * 0.1).sin()).collect(),
            v: (0..64).map(|i| (i as f64 * 0.3).cos()).collect(),
            strain: (0..64).map(|i| i as f64 / 64.0).collect(),
        };
        let p = Tensor::new(patchify(&field, &cfg).unwrap(), &[1, 4, cfg.patch_dim()]).unwrap();
        let tok = t.tokenize(&p).unwrap();
        assert_eq!(tok.shape(), &[1, 4, 6]);
        for row in tok.data().chunks(6) {
            let mean = row.iter().sum::<Real>() / 6.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / 6.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3, "{mean} {var}");
        }
        let with_cls = t.forward(&p).unwrap();
        assert_eq!(with_cls.shape(), &[1, 5, 6]);
    }

    #[test]
    fn cls_and_pos_identity() {
        let tokens = Tensor::new((0..12).map(|v| v as Real).collect(), &[2, 2, 3]).unwrap();
        let out = add_cls_and_pos(&tokens, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[3, 3])).unwrap();
        assert_eq!(out.shape(), &[2, 3, 3]);
        assert_eq!(&out.data()[3..9], &tokens.data()[..6]);
        assert_eq!(&out.data()[..3], &[0.0; 3]);
        assert!(add_cls_and_pos(&tokens, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[2, 3])).is_err());
    }
}
