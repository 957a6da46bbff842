use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::float::Float;
use crate::tensor::Tensor;

/// A trainable tensor with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Float> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("shape product"))
    }

    pub fn constant(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        Self::new(name, Tensor::full(shape, T::of(value)))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Anything that owns parameters. Visit order must be stable: optimizers,
/// checkpoints and gradient reduction all rely on it.
pub trait Module<T: Float> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad.fill(T::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |p| names.push(p.name.clone()));
        names
    }

    /// Adds another instance's gradients (same architecture) into this one.
    fn accumulate_grads_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut grads = Vec::new();
        other.visit(&mut |p| grads.push(p.grad.clone()));
        let mut i = 0;
        self.visit_mut(&mut |p| {
            p.grad.add_assign(&grads[i]);
            i += 1;
        });
    }

    fn scale_grads(&mut self, s: T) {
        self.visit_mut(&mut |p| p.grad.scale(s));
    }

    /// Flattened copy of every parameter value, in visit order.
    fn flat_values(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.extend_from_slice(p.value.data()));
        out
    }

    fn flat_grads(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.extend_from_slice(p.grad.data()));
        out
    }

    fn set_flat_values(&mut self, values: &[T]) {
        let mut off = 0;
        self.visit_mut(&mut |p| {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
    }
}

/// Forward-pass context: carries the dropout RNG while training.
pub struct Ctx {
    rng: Option<ChaCha8Rng>,
    p: f64,
}

impl Ctx {
    pub fn eval() -> Self {
        Self { rng: None, p: 0.0 }
    }

    pub fn train(seed: u64, dropout: f64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            p: dropout,
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some() && self.p > 0.0
    }

    /// Inverted dropout in place. Returns the scaled keep-mask, or `None`
    /// when dropout is inactive.
    pub fn dropout<T: Float>(&mut self, x: &mut Tensor<T>) -> Option<Vec<T>> {
        if !self.training() {
            return None;
        }
        let p = self.p;
        let keep = T::of(1.0 / (1.0 - p));
        let rng = self.rng.as_mut()?;
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }
}

pub fn dropout_backward<T: Float>(mask: &Option<Vec<T>>, dy: &mut Tensor<T>) {
    if let Some(mask) = mask {
        for (d, &m) in dy.data_mut().iter_mut().zip(mask) {
            *d *= m;
        }
    }
}
