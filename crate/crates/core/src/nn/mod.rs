//! A small neural-network toolkit with hand-written forward and backward
//! passes: enough to train the two-layer transformer encoder used by the
//! classifier. Parameters are named tensors; layers are stateless apart from
//! their parameters, with activations carried in explicit cache structs so
//! gradients can be recomputed deterministically.

pub mod attention;
pub mod encoder;
pub mod layers;

pub use encoder::{pad_batch, ClsHead, Encoder, EncoderConfig, MlmHead};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A named tensor with an accumulated gradient of the same shape.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Gaussian-initialized tensor (mean 0, std 0.02).
    pub fn normal(name: impl Into<String>, shape: &[usize], rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0f32, 0.02).expect("valid normal distribution");
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng));
        Param::new(name, value)
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Param::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Param::new(name, ArrayD::from_elem(IxDyn(shape), 1.0))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Weight decay applies only to matrices; gains, biases, and other
    /// one-dimensional tensors are exempt.
    pub fn decays(&self) -> bool {
        self.value.ndim() >= 2
    }
}

/// Anything that exposes its parameters in a fixed, deterministic order.
/// The order defines the optimizer state keys and the checkpoint layout.
pub trait ParamSet {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
