//! Elementwise arithmetic, reductions, shape manipulation and matmul.
//!
//! Binary ops broadcast over leading axes only: the smaller operand's shape
//! must be a suffix of the larger one (or hold a single value).

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{axis_extents, flops, Real, Tensor};
use crate::error::{Error, Result};

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b || nb == 1 || (is_suffix(b, a) && na >= nb) {
        Ok(a.to_vec())
    } else if na == 1 || is_suffix(a, b) {
        Ok(b.to_vec())
    } else {
        Err(Error::shape(op, a, b))
    }
}

// Sums a full-size gradient down onto an operand broadcast by index modulo.
fn reduce_to(g: Vec<Real>, n: usize) -> Vec<Real> {
    if g.len() == n {
        return g;
    }
    let mut out = vec![0.0; n];
    for (i, v) in g.iter().enumerate() {
        out[i % n] += v;
    }
    out
}

type Partial = fn(Real, Real, Real) -> Real;

impl Tensor {
    fn binary(&self, rhs: &Tensor, op: &'static str, f: fn(Real, Real) -> Real, da: Partial, db: Partial) -> Result<Tensor> {
        let shape = broadcast_shape(op, self.shape(), rhs.shape())?;
        let n: usize = shape.iter().product();
        let (na, nb) = (self.numel(), rhs.numel());
        let (xa, xb) = (self.data(), rhs.data());
        let data: Vec<Real> = (0..n).map(|i| f(xa[i % na], xb[i % nb])).collect();
        flops::add_other(n as u64);
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(data, shape, vec![self.clone(), rhs.clone()], move |g, _| {
            let (xa, xb) = (a.data(), b.data());
            let ga = a.requires_grad().then(|| {
                let full = g.iter().enumerate().map(|(i, &gi)| da(xa[i % na], xb[i % nb], gi)).collect();
                reduce_to(full, na)
            });
            let gb = b.requires_grad().then(|| {
                let full = g.iter().enumerate().map(|(i, &gi)| db(xa[i % na], xb[i % nb], gi)).collect();
                reduce_to(full, nb)
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "add", |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "sub", |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "mul", |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "div", |x, y| x / y, |_, y, g| g / y, |x, y, g| -g * x / (y * y))
    }

    fn unary(&self, f: impl Fn(Real) -> Real, df: impl Fn(Real, Real) -> Real + 'static, cost: u64) -> Tensor {
        let data: Vec<Real> = self.data().iter().map(|&x| f(x)).collect();
        flops::add_other(cost * data.len() as u64);
        let x = self.clone();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, y| {
            let gx = x.data().iter().zip(y).zip(g).map(|((&xi, &yi), &gi)| gi * df(xi, yi)).collect();
            vec![Some(gx)]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0, 1)
    }

    pub fn scale(&self, c: Real) -> Tensor {
        self.unary(move |x| c * x, move |_, _| c, 1)
    }

    pub fn add_scalar(&self, c: Real) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0, 1)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Real::exp, |_, y| y, 1)
    }

    /// Natural log; non-positive inputs give -inf/NaN like the scalar op.
    pub fn ln(&self) -> Tensor {
        self.unary(Real::ln, |x, _| 1.0 / x, 1)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Real::sqrt, |_, y| 0.5 / y, 1)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x, 1)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 }, 1)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, |x, _| sigmoid(x), 4)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&self) -> Tensor {
        self.unary(
            |x| {
                let x = x as f64;
                (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as Real
            },
            |x, _| {
                let x = x as f64;
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                (cdf + x * pdf) as Real
            },
            flops::GELU_PER_ELEM,
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s: Real = self.data().iter().sum();
        flops::add_other(self.numel() as u64);
        let n = self.numel();
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], move |g, _| vec![Some(vec![g[0]; n])])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as Real)
    }

    /// Sums out `axis`, dropping it (a rank-1 input yields shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        flops::add_other(self.numel() as u64);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(out, shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    gx[(o * len + a) * inner..(o * len + a + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub(crate) fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::Dimension(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |g, _| vec![Some(g.to_vec())]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::Dimension(format!("transpose needs rank >= 2, got {:?}", self.shape())));
        }
        let (m, n) = (self.shape()[r - 2], self.shape()[r - 1]);
        let batch = self.numel() / (m * n);
        let swap = move |src: &[Real], rows: usize, cols: usize| {
            let mut dst = vec![0.0; src.len()];
            for b in 0..batch {
                let (s, d) = (&src[b * rows * cols..], &mut dst[b * rows * cols..(b + 1) * rows * cols]);
                for i in 0..rows {
                    for j in 0..cols {
                        d[j * rows + i] = s[i * cols + j];
                    }
                }
            }
            dst
        };
        let mut shape = self.shape().to_vec();
        shape.swap(r - 2, r - 1);
        Ok(Tensor::from_op(swap(self.data(), m, n), shape, vec![self.clone()], move |g, _| {
            vec![Some(swap(g, n, m))]
        }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        first.check_axis(axis)?;
        for t in &tensors[1..] {
            let ok = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), t.shape()));
            }
        }
        let (outer, _, inner) = axis_extents(first.shape(), axis);
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &len) in tensors.iter().zip(&lens) {
                data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let parents = tensors.to_vec();
        Ok(Tensor::from_op(data, shape, parents, move |g, _| {
            let mut grads: Vec<Vec<Real>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gt, &len) in grads.iter_mut().zip(&lens) {
                    gt.extend_from_slice(&g[off..off + len * inner]);
                    off += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, full, inner) = axis_extents(self.shape(), axis);
        if len == 0 || start + len > full {
            return Err(Error::Dimension(format!(
                "narrow [{start}, {}) outside axis {axis} of {:?}",
                start + len,
                self.shape()
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Matrix product over the last two axes.
    ///
    /// A rank-2 right operand is shared across all leading axes of `self`;
    /// otherwise leading axes must match exactly.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ar, br) = (self.rank(), rhs.rank());
        if ar < 2 || br < 2 {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let (m, k) = (self.shape()[ar - 2], self.shape()[ar - 1]);
        let (k2, n) = (rhs.shape()[br - 2], rhs.shape()[br - 1]);
        let shared = br == 2;
        if k != k2 || (!shared && self.shape()[..ar - 2] != rhs.shape()[..br - 2]) {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let batch: usize = self.shape()[..ar - 2].iter().product();
        // a shared right operand lets all rows go through one GEMM
        let (blocks, rows) = if shared { (1, batch * m) } else { (batch, m) };
        let mut out = vec![0.0; batch * m * n];
        for b in 0..blocks {
            let a = &self.data()[b * rows * k..(b + 1) * rows * k];
            let w = if shared { rhs.data() } else { &rhs.data()[b * k * n..(b + 1) * k * n] };
            gemm_nn(a, w, &mut out[b * rows * n..(b + 1) * rows * n], rows, k, n);
        }
        flops::add_matmul(2 * (batch * m * k * n) as u64);
        let mut shape = self.shape()[..ar - 2].to_vec();
        shape.extend([m, n]);
        let (a, w) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(out, shape, vec![self.clone(), rhs.clone()], move |g, _| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![0.0; a.numel()];
                for b in 0..blocks {
                    let wb = if shared { w.data() } else { &w.data()[b * k * n..(b + 1) * k * n] };
                    gemm_nt(&g[b * rows * n..(b + 1) * rows * n], wb, &mut ga[b * rows * k..(b + 1) * rows * k], rows, n, k);
                }
                ga
            });
            let gw = w.requires_grad().then(|| {
                let mut gw = vec![0.0; w.numel()];
                for b in 0..blocks {
                    let ab = &a.data()[b * rows * k..(b + 1) * rows * k];
                    let gb = &g[b * rows * n..(b + 1) * rows * n];
                    let dst = if shared { &mut gw[..] } else { &mut gw[b * k * n..(b + 1) * k * n] };
                    gemm_tn(ab, gb, dst, rows, k, n);
                }
                gw
            });
            vec![ga, gw]
        }))
    }
}

pub(crate) fn softplus(x: Real) -> Real {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
