//! Fused neural-network ops with hand-written backward passes.

use super::{axis_extents, flops, Real, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Softmax along `axis`, shifted by the slice maximum.
    ///
    /// `-inf` entries map to exactly zero. A slice made only of `-inf` is an
    /// error rather than a row of NaNs.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x[at(a)]).fold(Real::NEG_INFINITY, Real::max);
                if max == Real::NEG_INFINITY {
                    return Err(Error::DegenerateSlice);
                }
                let mut sum = 0.0;
                for a in 0..len {
                    let e = (x[at(a)] - max).exp();
                    y[at(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    y[at(a)] /= sum;
                }
            }
        }
        flops::add_other(flops::SOFTMAX_PER_ELEM * x.len() as u64);
        Ok(Tensor::from_op(y, self.shape().to_vec(), vec![self.clone()], move |g, y| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let dot: Real = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                    for a in 0..len {
                        gx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// (both shaped like the last axis). Uses the biased variance.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: Real) -> Result<Tensor> {
        let d = *self.shape().last().ok_or(Error::EmptyAxis("layer_norm"))?;
        if d == 0 {
            return Err(Error::EmptyAxis("layer_norm"));
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", self.shape(), gamma.shape()));
        }
        if eps < 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be >= 0, got {eps}")));
        }
        let rows = self.numel() / d;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gm[j] + bt[j];
            }
        }
        flops::add_other(flops::LAYER_NORM_PER_ELEM * x.len() as u64);
        let gamma_c = gamma.clone();
        let parents = vec![self.clone(), gamma.clone(), beta.clone()];
        let need_x = self.requires_grad();
        let (need_g, need_b) = (gamma.requires_grad(), beta.requires_grad());
        Ok(Tensor::from_op(y, self.shape().to_vec(), parents, move |g, _| {
            let gm = gamma_c.data();
            let gx = need_x.then(|| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= d as Real;
                    mean_dh_h /= d as Real;
                    for j in 0..d {
                        gx[r * d + j] = rstd[r] * (gr[j] * gm[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                gx
            });
            let ggamma = need_g.then(|| {
                let mut acc = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
                acc
            });
            let gbeta = need_b.then(|| {
                let mut acc = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += g[r * d + j];
                    }
                }
                acc
            });
            vec![gx, ggamma, gbeta]
        }))
    }

    /// Sets the diagonal of each trailing square matrix to `-inf`.
    /// No gradient flows to masked positions.
    pub fn diag_mask(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 || self.shape()[r - 1] != self.shape()[r - 2] {
            return Err(Error::Dimension(format!(
                "diagonal mask needs square trailing matrices, got {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[r - 1];
        let mut y = self.to_vec();
        for m in y.chunks_mut(n * n) {
            for i in 0..n {
                m[i * n + i] = Real::NEG_INFINITY;
            }
        }
        flops::add_other(self.numel() as u64);
        Ok(Tensor::from_op(y, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut gx = g.to_vec();
            for m in gx.chunks_mut(n * n) {
                for i in 0..n {
                    m[i * n + i] = 0.0;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Rebuilds the token axis of a `[B, N, D]` tensor from index groups.
    ///
    /// `groups[b][r]` lists the source rows whose mean becomes output row `r`
    /// of sample `b`. Every sample must produce the same number of rows.
    /// Indices may repeat across groups (selection with duplicates).
    pub fn gather_groups(&self, groups: &[Vec<Vec<usize>>]) -> Result<Tensor> {
        if self.rank() != 3 || groups.len() != self.shape()[0] {
            return Err(Error::Dimension(format!(
                "gather_groups: {} group lists for shape {:?}",
                groups.len(),
                self.shape()
            )));
        }
        let (n, d) = (self.shape()[1], self.shape()[2]);
        let out_n = groups[0].len();
        for gs in groups {
            if gs.len() != out_n || out_n == 0 {
                return Err(Error::Dimension("gather_groups: ragged output token counts".into()));
            }
            if gs.iter().any(|g| g.is_empty() || g.iter().any(|&i| i >= n)) {
                return Err(Error::Contract(format!("gather_groups: empty group or index >= {n}")));
            }
        }
        let x = self.data();
        let mut y = vec![0.0; groups.len() * out_n * d];
        for (b, gs) in groups.iter().enumerate() {
            for (r, src) in gs.iter().enumerate() {
                let w = 1.0 / src.len() as Real;
                let dst = &mut y[(b * out_n + r) * d..(b * out_n + r + 1) * d];
                for &s in src {
                    let row = &x[(b * n + s) * d..(b * n + s + 1) * d];
                    for (o, v) in dst.iter_mut().zip(row) {
                        *o += w * v;
                    }
                }
            }
        }
        flops::add_other(y.len() as u64);
        let groups = groups.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op(y, vec![groups.len(), out_n, d], vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; total];
            for (b, gs) in groups.iter().enumerate() {
                for (r, src) in gs.iter().enumerate() {
                    let w = 1.0 / src.len() as Real;
                    let gr = &g[(b * out_n + r) * d..(b * out_n + r + 1) * d];
                    for &s in src {
                        let dst = &mut gx[(b * n + s) * d..(b * n + s + 1) * d];
                        for (o, v) in dst.iter_mut().zip(gr) {
                            *o += w * v;
                        }
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Scales every row (last axis) to unit L2 norm. Zero rows are an error.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        let d = *self.shape().last().expect("rank >= 1");
        let rows = self.numel() / d;
        let x = self.data();
        let mut norms = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<Real>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Contract(format!("cannot L2-normalize row {r} with norm {norm}")));
            }
            norms[r] = norm;
            for j in 0..d {
                y[r * d + j] = row[j] / norm;
            }
        }
        flops::add_other(3 * x.len() as u64);
        Ok(Tensor::from_op(y, self.shape().to_vec(), vec![self.clone()], move |g, y| {
            let mut gx = vec![0.0; y.len()];
            for r in 0..rows {
                let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                let dot: Real = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    gx[r * d + j] = (gr[j] - yr[j] * dot) / norms[r];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Mean negative log-likelihood of `labels` under softmax of `[B, C]` logits.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || self.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy: logits {:?} with {} labels",
                self.shape(),
                labels.len()
            )));
        }
        let (b, c) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
        }
        let probs = self.detach().softmax(1)?.to_vec();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(probs[i * c + l].max(Real::MIN_POSITIVE)).ln())
            .sum::<Real>()
            / b as Real;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(vec![loss], vec![1], vec![self.clone()], move |g, _| {
            let mut gx = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                gx[i * c + l] -= 1.0;
            }
            let s = g[0] / b as Real;
            gx.iter_mut().for_each(|v| *v *= s);
            vec![Some(gx)]
        }))
    }
}
