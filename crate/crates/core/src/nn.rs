//! Named parameters, the [`Module`] trait, and the two stock layers.

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Seeded generator used for every random decision in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a path of indices (splitmix64 finalizer per step).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |acc, &i| {
        let mut z = acc ^ i.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// A trainable leaf tensor with a name unique within its model.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, data: Vec<Real>, shape: &[usize]) -> Result<Parameter> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::variable(data, shape)?,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Parameter {
        let n = shape.iter().product();
        Parameter::new(name, vec![0.0; n], shape).expect("valid shape")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[Real] {
        self.tensor.data()
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn grad(&self) -> Option<Vec<Real>> {
        self.tensor.grad_vec()
    }

    /// Replaces the values with a fresh leaf of the same shape.
    pub fn set_data(&mut self, data: Vec<Real>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::Dimension(format!(
                "parameter {} holds {} values, got {}",
                self.name,
                self.numel(),
                data.len()
            )));
        }
        self.tensor = Tensor::variable(data, &self.tensor.shape().to_vec())?;
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.tensor.clear_grad();
    }
}

/// Anything owning parameters.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

/// A flat bag of parameters, handy for checking arbitrary functions.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new(params: Vec<Parameter>) -> ParamSet {
        ParamSet { params }
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name() == name)
    }
}

impl Module for ParamSet {
    fn parameters(&self) -> Vec<&Parameter> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.params.iter_mut().collect()
    }
}

pub fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Vec<Real> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit) as Real)
        .collect()
}

pub fn normal(rng: &mut Rng, std: f64, n: usize) -> Vec<Real> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng) as Real).collect()
}

/// `y = x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Option<Parameter>,
}

impl Linear {
    pub fn new(name: &str, rng: &mut Rng, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let weight = Parameter::new(format!("{name}.weight"), xavier_uniform(rng, fan_in, fan_out), &[fan_in, fan_out])
            .expect("valid shape");
        let bias = bias.then(|| Parameter::zeros(format!("{name}.bias"), &[fan_out]));
        Linear { weight, bias }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(self.weight.tensor())?;
        match &self.bias {
            Some(b) => y.add(b.tensor()),
            None => Ok(y),
        }
    }
}

impl Module for Linear {
    fn parameters(&self) -> Vec<&Parameter> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub eps: Real,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Parameter::new(format!("{name}.gamma"), vec![1.0; dim], &[dim]).expect("valid shape"),
            beta: Parameter::zeros(format!("{name}.beta"), &[dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(self.gamma.tensor(), self.beta.tensor(), self.eps)
    }
}

impl Module for LayerNorm {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_data_keeps_shape() {
        let mut p = Parameter::zeros("w", &[2, 2]);
        assert!(p.set_data(vec![1.0; 3]).is_err());
        p.set_data(vec![1.0; 4]).unwrap();
        assert_eq!(p.shape(), &[2, 2]);
        assert!(p.tensor().requires_grad());
    }

    #[test]
    fn linear_counts_and_shapes() {
        let mut rng = rng_from_seed(1);
        let lin = Linear::new("fc", &mut rng, 4, 3, true);
        assert_eq!(lin.param_count(), 15);
        let x = Tensor::zeros(&[2, 5, 4]);
        assert_eq!(lin.forward(&x).unwrap().shape(), &[2, 5, 3]);
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        assert_eq!(derive_seed(5, &[1, 2]), derive_seed(5, &[1, 2]));
        assert_ne!(derive_seed(5, &[1, 2]), derive_seed(5, &[2, 1]));
        assert_ne!(derive_seed(5, &[0]), derive_seed(6, &[0]));
    }

    #[test]
    fn xavier_is_bounded_and_seeded() {
        let a = xavier_uniform(&mut rng_from_seed(3), 10, 20);
        let b = xavier_uniform(&mut rng_from_seed(3), 10, 20);
        assert_eq!(a, b);
        let limit = (6.0f64 / 30.0).sqrt() as Real;
        assert!(a.iter().all(|v| v.abs() <= limit));
    }
}
