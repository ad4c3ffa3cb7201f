//! Dense row-major tensors with dynamic reverse-mode differentiation.
//!
//! Every op that touches a tensor with `requires_grad` records its parents
//! and a backward closure on the result. The graph is rebuilt on every
//! forward pass, so token counts are free to change between blocks.
//! [`Tensor::backward`] walks the recorded graph from a scalar and leaves a
//! populated gradient on every reachable tensor that requires one.

pub mod flops;
mod gradcheck;
mod io;
mod kernels;
mod nn_ops;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use flops::{count_flops, FlopCount};
pub use gradcheck::{grad_check, GradCheckReport};
pub use io::{read_ept1, read_ept1_header, write_ept1, DType, Ept1Header};

/// Scalar type used for all tensor storage.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used for all tensor storage.
#[cfg(feature = "f32")]
pub type Real = f32;

type BackwardFn = Box<dyn Fn(&[Real], &[Real]) -> Vec<Option<Vec<Real>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    // (grad of output, output data) -> grad per parent
    backward: BackwardFn,
}

struct Node {
    data: Vec<Real>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Real>>>,
    grad_fn: Option<GradFn>,
}

/// Reference-counted tensor handle. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl Tensor {
    /// Builds a constant tensor. Fails unless `product(shape) == data.len()`.
    pub fn new(data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        Self::leaf(data, shape, false)
    }

    /// Builds a leaf tensor that collects gradients.
    pub fn variable(data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        Self::leaf(data, shape, true)
    }

    fn leaf(data: Vec<Real>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(Node {
            data,
            shape: shape.to_vec(),
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: None,
        })))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(vec![0.0; n], shape).expect("zeros: valid shape")
    }

    pub fn scalar(value: Real) -> Tensor {
        Tensor::new(vec![value], &[1]).expect("scalar shape")
    }

    /// Result of an op. Parents and the backward closure are kept only when
    /// some parent requires a gradient.
    pub(crate) fn from_op<F>(data: Vec<Real>, shape: Vec<usize>, parents: Vec<Tensor>, backward: F) -> Tensor
    where
        F: Fn(&[Real], &[Real]) -> Vec<Option<Vec<Real>>> + 'static,
    {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            data,
            shape,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<Real> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<Real> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<Real>>> {
        Ref::filter_map(self.0.grad.borrow(), Option::as_ref).ok()
    }

    pub fn grad_vec(&self) -> Option<Vec<Real>> {
        self.0.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.to_vec(), self.shape()).expect("detach keeps shape")
    }

    pub(crate) fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn accumulate_grad(&self, g: &[Real]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from a single-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            let Some(gf) = &t.0.grad_fn else { continue };
            let grad = t.0.grad.borrow();
            let Some(g) = grad.as_ref() else { continue };
            let parent_grads = (gf.backward)(g, &t.0.data);
            debug_assert_eq!(parent_grads.len(), gf.parents.len());
            for (p, pg) in gf.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if p.requires_grad() {
                        p.accumulate_grad(&pg);
                    }
                }
            }
        }
        Ok(())
    }

    // Post-order over the grad-requiring subgraph rooted here.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::new(vec![1.0; 6], &[2, 3]).is_ok());
    }

    #[test]
    fn backward_needs_scalar() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = x * x + x  -> dy/dx = 2x + 1
        let x = Tensor::variable(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap()[0], 7.0);
        assert_eq!(y.item().unwrap(), 12.0);
    }

    #[test]
    fn every_reachable_tensor_gets_grad() {
        let a = Tensor::variable(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::variable(vec![0.5, -1.0], &[2]).unwrap();
        let h = a.add(&b).unwrap().gelu();
        let loss = h.sum();
        loss.backward().unwrap();
        for t in [&a, &b, &h, &loss] {
            let g = t.grad().expect("grad populated");
            assert_eq!(g.len(), t.numel());
        }
    }

    #[test]
    fn constants_do_not_record() {
        let a = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.scale(2.0);
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }
}
