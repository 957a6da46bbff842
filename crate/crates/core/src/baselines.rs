//! Direct-regression baselines: insole window in, pose window out, trained
//! with MAE and no diffusion.

use insole_nn::ops::sinusoidal_table;
use insole_nn::{Ctx, EncoderLayer, Float, LayerNorm, Linear, Mlp, Module, NnError, Parameter, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::INSOLE_CHANNELS;
use crate::diffusion::mae_with_grad;
use crate::error::{MotionError, Result};

/// Shared interface of the baselines, over standardized tensors.
pub trait PoseRegressor<T: Float>: Module<T> {
    fn predict(&self, insole: &Tensor<T>) -> Result<Tensor<T>>;

    /// Mean MAE over the batch; parameter gradients of that mean are
    /// accumulated.
    fn batch_loss(&mut self, insoles: &[Tensor<T>], targets: &[Tensor<T>], rng: &mut dyn rand::RngCore) -> Result<f64>;
}

fn check_batch<T: Float>(insoles: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<()> {
    if insoles.is_empty() || insoles.len() != targets.len() {
        return Err(MotionError::Invalid(format!(
            "batch of {} inputs and {} targets",
            insoles.len(),
            targets.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpBaselineConfig {
    pub window: usize,
    pub pose_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpBaselineConfig {
    pub fn new(window: usize, pose_dim: usize) -> Self {
        Self {
            window,
            pose_dim,
            hidden: vec![1024; 4],
        }
    }
}

/// Flattened window through GeLU hidden layers to the flattened pose window.
#[derive(Clone, Debug)]
pub struct MlpBaseline<T> {
    pub config: MlpBaselineConfig,
    pub mlp: Mlp<T>,
}

impl<T: Float> MlpBaseline<T> {
    pub fn new(config: MlpBaselineConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.window == 0 || config.pose_dim == 0 || config.hidden.contains(&0) {
            return Err(MotionError::Invalid("baseline sizes must be positive".into()));
        }
        let mut dims = vec![config.window * INSOLE_CHANNELS];
        dims.extend(&config.hidden);
        dims.push(config.window * config.pose_dim);
        let mlp = Mlp::new("mlp_baseline", &dims, rng);
        Ok(Self { config, mlp })
    }

    fn stack(&self, insoles: &[Tensor<T>]) -> Result<Tensor<T>> {
        let n = self.config.window * INSOLE_CHANNELS;
        let mut data = Vec::with_capacity(n * insoles.len());
        for x in insoles {
            if x.len() != n {
                return Err(MotionError::Channels { expected: n, got: x.len() });
            }
            data.extend_from_slice(x.data());
        }
        Ok(Tensor::from_vec(&[insoles.len(), n], data)?)
    }
}

impl<T: Float> PoseRegressor<T> for MlpBaseline<T> {
    fn predict(&self, insole: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, _) = self.mlp.forward(&self.stack(std::slice::from_ref(insole))?)?;
        Ok(y.reshape(&[self.config.window, self.config.pose_dim])?)
    }

    fn batch_loss(&mut self, insoles: &[Tensor<T>], targets: &[Tensor<T>], _rng: &mut dyn rand::RngCore) -> Result<f64> {
        check_batch(insoles, targets)?;
        let x = self.stack(insoles)?;
        let (y, cache) = self.mlp.forward(&x)?;
        let mut t = Vec::with_capacity(y.len());
        for target in targets {
            t.extend_from_slice(target.data());
        }
        let (loss, grad) = mae_with_grad(&y, &Tensor::from_vec(y.shape(), t)?, 1.0);
        if !loss.is_finite() {
            return Err(MotionError::Numerical("non-finite MLP baseline loss".into()));
        }
        self.mlp.backward(&cache, &grad)?;
        Ok(loss)
    }
}

impl<T: Float> Module<T> for MlpBaseline<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.mlp.visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerBaselineConfig {
    pub pose_dim: usize,
    pub d: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl TransformerBaselineConfig {
    pub fn new(pose_dim: usize) -> Self {
        Self {
            pose_dim,
            d: 256,
            ff_dim: 512,
            layers: 2,
            heads: 8,
            dropout: 0.1,
        }
    }
}

/// Per-frame insole embedding, positional table, standard encoder layers and
/// a per-frame pose head.
#[derive(Clone, Debug)]
pub struct TransformerBaseline<T> {
    pub config: TransformerBaselineConfig,
    pub input: Linear<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub ln_f: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Float> TransformerBaseline<T> {
    pub fn new(config: TransformerBaselineConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = &config;
        if c.d == 0 || !c.d.is_multiple_of(2) || c.heads == 0 || !c.d.is_multiple_of(c.heads) || c.layers == 0 || c.pose_dim == 0 {
            return Err(MotionError::Invalid("invalid transformer baseline sizes".into()));
        }
        let layers = (0..c.layers)
            .map(|l| EncoderLayer::new(&format!("tf_baseline.layer{l}"), c.d, c.ff_dim, c.heads, rng))
            .collect::<std::result::Result<_, NnError>>()?;
        Ok(Self {
            input: Linear::new("tf_baseline.input", INSOLE_CHANNELS, c.d, true, rng),
            ln_f: LayerNorm::new("tf_baseline.ln_f", c.d),
            head: Linear::new("tf_baseline.head", c.d, c.pose_dim, true, rng),
            layers,
            config,
        })
    }

    fn item(&mut self, x: &Tensor<T>, target: &Tensor<T>, weight: f64, ctx: &mut Ctx) -> Result<f64> {
        if x.shape().len() != 2 || x.cols() != INSOLE_CHANNELS {
            return Err(MotionError::Channels {
                expected: INSOLE_CHANNELS,
                got: x.shape().last().copied().unwrap_or(0),
            });
        }
        let mut h = self.input.forward(x)?;
        h.add_assign(&sinusoidal_table::<T>(x.rows(), self.config.d)?);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, ctx)?;
            h = next;
            caches.push(cache);
        }
        let (normed, ln) = self.ln_f.forward(&h);
        let y = self.head.forward(&normed)?;
        let (loss, grad) = mae_with_grad(&y, target, weight);
        if !loss.is_finite() {
            return Err(MotionError::Numerical("non-finite transformer baseline loss".into()));
        }
        let g = self.head.backward(&normed, &grad)?;
        let mut g = self.ln_f.backward(&ln, &g);
        for (layer, cache) in self.layers.iter_mut().zip(&caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        self.input.backward(x, &g)?;
        Ok(loss)
    }
}

impl<T: Float> PoseRegressor<T> for TransformerBaseline<T> {
    fn predict(&self, insole: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.input.forward(insole)?;
        h.add_assign(&sinusoidal_table::<T>(insole.rows(), self.config.d)?);
        for layer in &self.layers {
            h = layer.forward(&h, &mut Ctx::eval())?.0;
        }
        Ok(self.head.forward(&self.ln_f.forward(&h).0)?)
    }

    fn batch_loss(&mut self, insoles: &[Tensor<T>], targets: &[Tensor<T>], rng: &mut dyn rand::RngCore) -> Result<f64> {
        check_batch(insoles, targets)?;
        let w = 1.0 / insoles.len() as f64;
        let mut total = 0.0;
        for (x, t) in insoles.iter().zip(targets) {
            let mut ctx = Ctx::train(rng.next_u64(), self.config.dropout);
            total += self.item(x, t, w, &mut ctx)? * w;
        }
        Ok(total)
    }
}

impl<T: Float> Module<T> for TransformerBaseline<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.input.visit(f);
        self.layers.iter().for_each(|l| l.visit(f));
        self.ln_f.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.input.visit_mut(f);
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        self.ln_f.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use insole_nn::gradcheck::grad_check_at;
    use insole_nn::{Adam, AdamConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_mlp(rng: &mut ChaCha8Rng) -> MlpBaseline<f64> {
        let cfg = MlpBaselineConfig {
            window: 3,
            pose_dim: 6,
            hidden: vec![8, 8],
        };
        MlpBaseline::new(cfg, rng).unwrap()
    }

    fn small_tf(rng: &mut ChaCha8Rng) -> TransformerBaseline<f64> {
        let cfg = TransformerBaselineConfig {
            pose_dim: 6,
            d: 8,
            ff_dim: 12,
            layers: 2,
            heads: 2,
            dropout: 0.0,
        };
        TransformerBaseline::new(cfg, rng).unwrap()
    }

    #[test]
    fn shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand_tensor(&mut rng, &[3, 50]);
        assert_eq!(small_mlp(&mut rng).predict(&x).unwrap().shape(), &[3, 6]);
        assert_eq!(small_tf(&mut rng).predict(&x).unwrap().shape(), &[3, 6]);
        let paper = MlpBaselineConfig::new(100, 63);
        assert_eq!(paper.hidden, vec![1024; 4]);
    }

    #[test]
    fn batch_loss_is_mean_of_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = small_mlp(&mut rng);
        let xs: Vec<_> = (0..3).map(|_| rand_tensor(&mut rng, &[3, 50])).collect();
        let ts: Vec<_> = (0..3).map(|_| rand_tensor(&mut rng, &[3, 6])).collect();
        let mut expect = 0.0;
        for (x, t) in xs.iter().zip(&ts) {
            let y = m.predict(x).unwrap();
            let mae: f64 = y.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 18.0;
            expect += mae / 3.0;
        }
        let got = m.batch_loss(&xs, &ts, &mut rng).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    fn check_grads<M: PoseRegressor<f64> + Clone>(mut m: M, rng: &mut ChaCha8Rng) -> f64 {
        let xs: Vec<_> = (0..2).map(|_| rand_tensor(rng, &[3, 50])).collect();
        let ts: Vec<_> = (0..2).map(|_| rand_tensor(rng, &[3, 6])).collect();
        m.zero_grad();
        m.batch_loss(&xs, &ts, rng).unwrap();
        let theta = m.flat_values();
        let grads = m.flat_grads();
        let mut probe = m.clone();
        let coords: Vec<usize> = (0..theta.len()).step_by(7).collect();
        grad_check_at(
            |v| {
                probe.set_flat_values(v);
                xs.iter()
                    .zip(&ts)
                    .map(|(x, t)| {
                        let y = probe.predict(x).unwrap();
                        y.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 36.0
                    })
                    .sum()
            },
            &theta,
            &grads,
            &coords,
            1e-6,
        )
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = small_mlp(&mut rng);
        assert!(check_grads(m, &mut rng) < 1e-4);
        let t = small_tf(&mut rng);
        assert!(check_grads(t, &mut rng) < 1e-4);
    }

    #[test]
    fn both_fit_a_repeated_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = vec![rand_tensor(&mut rng, &[3, 50])];
        let t = vec![rand_tensor(&mut rng, &[3, 6])];
        let run = |m: &mut dyn PoseRegressor<f64>, rng: &mut ChaCha8Rng| {
            let mut opt = Adam::new(AdamConfig::default()).unwrap();
            let first = m.batch_loss(&x, &t, rng).unwrap();
            let mut last = first;
            for _ in 0..300 {
                m.zero_grad();
                last = m.batch_loss(&x, &t, rng).unwrap();
                step_dyn(&mut opt, m);
            }
            (first, last)
        };
        let (a, b) = run(&mut small_mlp(&mut rng), &mut rng);
        assert!(b < 0.3 * a, "mlp {a} -> {b}");
        let (a, b) = run(&mut small_tf(&mut rng), &mut rng);
        assert!(b < 0.3 * a, "transformer {a} -> {b}");
    }

    fn step_dyn(opt: &mut Adam, m: &mut dyn PoseRegressor<f64>) {
        struct Wrap<'a>(&'a mut dyn PoseRegressor<f64>);
        impl Module<f64> for Wrap<'_> {
            fn visit(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
                self.0.visit(f)
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
                self.0.visit_mut(f)
            }
        }
        opt.step(&mut Wrap(m)).unwrap();
    }
}
