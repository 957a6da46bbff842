//! Root displacement regression from the insole stream.
//!
//! A two-layer GeLU MLP lifts each frame to width `d`, sinusoidal positions
//! are added, two pre-norm encoder layers mix the window, and a linear head
//! emits one 3-vector per frame. Training uses [`disp_loss`], plain MSE plus
//! a penalty on the running sums of the error so that per-frame biases that
//! would accumulate into drift are punished.

use std::fmt;
use std::str::FromStr;

use insole_nn::layers::{EncoderLayerCache, MlpCache};
use insole_nn::ops::{sinusoidal_table, LayerNormCache};
use insole_nn::{Ctx, EncoderLayer, Float, LayerNorm, Linear, Mlp, Module, NnError, Parameter, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{imu_channel_indices, pressure_channel_indices, INSOLE_CHANNELS};
use crate::error::{MotionError, Result};

/// Which insole channels feed the predictor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DispInput {
    #[default]
    #[serde(rename = "imu-only")]
    ImuOnly,
    #[serde(rename = "imu+pressure")]
    ImuPressure,
    #[serde(rename = "pressure-only")]
    PressureOnly,
}

impl DispInput {
    pub const ALL: [DispInput; 3] = [Self::ImuOnly, Self::ImuPressure, Self::PressureOnly];

    /// Column indices into the 50-channel insole vector, ascending.
    pub fn channels(self) -> Vec<usize> {
        match self {
            Self::ImuOnly => imu_channel_indices(),
            Self::ImuPressure => (0..INSOLE_CHANNELS).collect(),
            Self::PressureOnly => pressure_channel_indices(),
        }
    }
}

impl fmt::Display for DispInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ImuOnly => "imu-only",
            Self::ImuPressure => "imu+pressure",
            Self::PressureOnly => "pressure-only",
        })
    }
}

impl FromStr for DispInput {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| MotionError::Invalid(format!("unknown displacement input `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispConfig {
    pub d: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub lambda: f64,
    pub input: DispInput,
    pub window: usize,
    pub dropout: f64,
}

impl Default for DispConfig {
    fn default() -> Self {
        Self {
            d: 256,
            ff_dim: 512,
            layers: 2,
            heads: 8,
            lambda: 0.001,
            input: DispInput::ImuOnly,
            window: 100,
            dropout: 0.1,
        }
    }
}

impl DispConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(2) || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(MotionError::Invalid(format!(
                "width {} must be even and divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.window == 0 {
            return Err(MotionError::Invalid("layers, feed-forward width and window must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(MotionError::Invalid(format!("lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MotionError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input.channels().len()
    }
}

#[derive(Clone, Debug)]
pub struct DisplacementPredictor<T> {
    pub config: DispConfig,
    pub embed: Mlp<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub ln_f: LayerNorm<T>,
    pub head: Linear<T>,
}

pub struct DispCache<T> {
    embed: MlpCache<T>,
    layers: Vec<EncoderLayerCache<T>>,
    ln_f: LayerNormCache<T>,
    normed: Tensor<T>,
}

impl<T: Float> DisplacementPredictor<T> {
    pub fn new(config: DispConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let embed = Mlp::new("disp.embed", &[config.input_dim(), d, d], rng);
        let layers = (0..config.layers)
            .map(|l| EncoderLayer::new(&format!("disp.layer{l}"), d, config.ff_dim, config.heads, rng))
            .collect::<std::result::Result<_, NnError>>()?;
        Ok(Self {
            ln_f: LayerNorm::new("disp.ln_f", d),
            head: Linear::new("disp.head", d, 3, true, rng),
            embed,
            layers,
            config,
        })
    }

    /// Maps a standardized `W x k` window (k = input channels) to `W x 3`.
    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<(Tensor<T>, DispCache<T>)> {
        let k = self.config.input_dim();
        if x.shape().len() != 2 || x.cols() != k || x.rows() == 0 {
            return Err(MotionError::Channels {
                expected: k,
                got: x.shape().last().copied().unwrap_or(0),
            });
        }
        let (mut h, embed) = self.embed.forward(x)?;
        h.add_assign(&sinusoidal_table::<T>(x.rows(), self.config.d)?);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, cache) = layer.forward(&h, ctx)?;
            if !next.all_finite() {
                return Err(MotionError::Kernel(NnError::NonFiniteActivation(format!(
                    "displacement layer {l}"
                ))));
            }
            h = next;
            layers.push(cache);
        }
        let (normed, ln_f) = self.ln_f.forward(&h);
        let out = self.head.forward(&normed)?;
        Ok((out, DispCache { embed, layers, ln_f, normed }))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, &mut Ctx::eval())?.0)
    }

    /// Accumulates parameter gradients; returns `dL/dx`.
    pub fn backward(&mut self, cache: &DispCache<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.head.backward(&cache.normed, dout)?;
        let mut g = self.ln_f.backward(&cache.ln_f, &g);
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            g = layer.backward(c, &g)?;
        }
        Ok(self.embed.backward(&cache.embed, &g)?)
    }
}

impl<T: Float> Module<T> for DisplacementPredictor<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.embed.visit(f);
        self.layers.iter().for_each(|l| l.visit(f));
        self.ln_f.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.embed.visit_mut(f);
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        self.ln_f.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// `MSE(target, pred) + (lambda / W) * sum_k MSE(cumsum_k(target), cumsum_k(pred))`
/// over `W x 3` row-major windows. Every MSE is a mean over coordinates; the
/// first one also over frames.
pub fn disp_loss(target: &[f64], pred: &[f64], lambda: f64) -> Result<f64> {
    Ok(disp_loss_with_grad::<f64>(target, pred, lambda, 1.0)?.0)
}

/// [`disp_loss`] and its gradient with respect to `pred`, scaled by `weight`.
pub fn disp_loss_with_grad<T: Float>(
    target: &[f64],
    pred: &[T],
    lambda: f64,
    weight: f64,
) -> Result<(f64, Vec<T>)> {
    if target.len() != pred.len() || !target.len().is_multiple_of(3) || target.is_empty() {
        return Err(MotionError::Invalid(format!(
            "displacement loss needs equal W x 3 inputs, got {} and {} values",
            target.len(),
            pred.len()
        )));
    }
    let w = target.len() / 3;
    let wf = w as f64;
    let err: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p.as_f64() - t).collect();
    let mse = err.iter().map(|e| e * e).sum::<f64>() / (3.0 * wf);
    // prefix sums S_k of the error, and the cumulative term
    let mut prefix = vec![0.0; err.len()];
    let mut run = [0.0; 3];
    let mut cum = 0.0;
    for f in 0..w {
        for c in 0..3 {
            run[c] += err[3 * f + c];
            prefix[3 * f + c] = run[c];
            cum += run[c] * run[c] / 3.0;
        }
    }
    let loss = mse + lambda / wf * cum;
    // dL/de_f = 2 e_f / 3W + (2 lambda / 3W) * sum_{k >= f} S_k
    let mut suffix = [0.0; 3];
    let mut grad = vec![T::zero(); err.len()];
    for f in (0..w).rev() {
        for c in 0..3 {
            suffix[c] += prefix[3 * f + c];
            let g = 2.0 * err[3 * f + c] / (3.0 * wf) + 2.0 * lambda / (3.0 * wf) * suffix[c];
            grad[3 * f + c] = T::of(weight * g);
        }
    }
    Ok((loss, grad))
}

/// One supervised example: forward with dropout, [`disp_loss`] against the
/// standardized target, backward with gradients scaled by `weight`.
pub fn disp_item_loss<T: Float>(
    model: &mut DisplacementPredictor<T>,
    x: &Tensor<T>,
    target: &[f64],
    weight: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut ctx = Ctx::train(rng.random(), model.config.dropout);
    let (out, cache) = model.forward(x, &mut ctx)?;
    let (loss, grad) = disp_loss_with_grad(target, out.data(), model.config.lambda, weight)?;
    if !loss.is_finite() {
        return Err(MotionError::Numerical("non-finite displacement loss".into()));
    }
    model.backward(&cache, &Tensor::from_vec(out.shape(), grad)?)?;
    Ok(loss)
}

/// Predicts a whole sequence with back-to-back windows; a trailing partial
/// window is aligned to the end and only its unseen frames are kept.
pub fn predict_sequence<T: Float>(model: &DisplacementPredictor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (len, w) = (x.rows(), model.config.window);
    if len < w {
        return Err(MotionError::Invalid(format!("sequence of {len} frames is shorter than the window {w}")));
    }
    let mut out = Tensor::zeros(&[len, 3]);
    let mut done = 0;
    while done < len {
        let start = done.min(len - w);
        let y = model.predict(&x.slice_rows(start, w))?;
        let skip = done - start;
        out.data_mut()[3 * done..3 * (start + w)].copy_from_slice(&y.data()[3 * skip..]);
        done = start + w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use insole_nn::Adam;
    use insole_nn::AdamConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription: two explicit loops, no shared prefix buffer.
    fn loss_oracle(target: &[[f64; 3]], pred: &[[f64; 3]], lambda: f64) -> f64 {
        let w = target.len();
        let mut mse = 0.0;
        for f in 0..w {
            for c in 0..3 {
                mse += (target[f][c] - pred[f][c]).powi(2);
            }
        }
        mse /= 3.0 * w as f64;
        let mut cum = 0.0;
        for k in 0..w {
            let mut inner = 0.0;
            for c in 0..3 {
                let st: f64 = (0..=k).map(|f| target[f][c]).sum();
                let sp: f64 = (0..=k).map(|f| pred[f][c]).sum();
                inner += (st - sp).powi(2);
            }
            cum += inner / 3.0;
        }
        mse + lambda / w as f64 * cum
    }

    fn flat(v: &[[f64; 3]]) -> Vec<f64> {
        v.iter().flatten().copied().collect()
    }

    #[test]
    fn worked_example() {
        let target = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let pred = [[0.0; 3]; 2];
        let expect = 1.0 / 3.0 + (0.001 / 2.0) * (1.0 / 3.0 + 4.0 / 3.0);
        let oracle = loss_oracle(&target, &pred, 0.001);
        assert!((oracle - expect).abs() < 1e-15);
        let got = disp_loss(&flat(&target), &flat(&pred), 0.001).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn zero_lambda_is_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mse = t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 30.0;
        assert_eq!(disp_loss(&t, &p, 0.0).unwrap(), mse);
        assert_eq!(disp_loss(&t, &t, 0.3).unwrap(), 0.0);
        assert!(disp_loss(&t, &p[..27], 0.0).is_err());
    }

    #[test]
    fn constant_error_cumulative_penalty_exceeds_mse_term() {
        for w in 3..12 {
            let t = vec![0.0; 3 * w];
            let p: Vec<f64> = (0..3 * w).map(|i| if i % 3 == 0 { 0.1 } else { 0.0 }).collect();
            let mse = disp_loss(&t, &p, 0.0).unwrap();
            let cum = disp_loss(&t, &p, 1.0).unwrap() - mse;
            assert!(cum > mse, "W={w}");
        }
    }

    proptest! {
        #[test]
        fn loss_matches_oracle_and_gradient(
            w in 1usize..9,
            lambda in 0.0f64..2.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || -> Vec<[f64; 3]> {
                (0..w).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
            };
            let (t, p) = (draw(), draw());
            let (loss, grad) = disp_loss_with_grad::<f64>(&flat(&t), &flat(&p), lambda, 1.0).unwrap();
            prop_assert!((loss - loss_oracle(&t, &p, lambda)).abs() < 1e-12);
            prop_assert!(loss >= 0.0);
            let x = flat(&p);
            let tf = flat(&t);
            let err = insole_nn::gradcheck::grad_check(
                |v| disp_loss(&tf, v, lambda).unwrap(),
                &x,
                &grad,
                1e-5,
            );
            prop_assert!(err < 1e-6, "{}", err);
        }

        #[test]
        fn loss_is_zero_only_at_target(seed in any::<u64>(), lambda in 1e-3f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut p = t.clone();
            prop_assert_eq!(disp_loss(&t, &p, lambda).unwrap(), 0.0);
            let i = rng.random_range(0..15);
            p[i] += 1e-3;
            prop_assert!(disp_loss(&t, &p, lambda).unwrap() > 0.0);
        }
    }

    fn tiny(input: DispInput, rng: &mut ChaCha8Rng) -> DisplacementPredictor<f64> {
        let cfg = DispConfig {
            d: 16,
            ff_dim: 24,
            layers: 2,
            heads: 4,
            lambda: 0.001,
            input,
            window: 4,
            dropout: 0.1,
        };
        DisplacementPredictor::new(cfg, rng).unwrap()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn input_variants_have_expected_widths() {
        assert_eq!(DispInput::ImuOnly.channels().len(), 12);
        assert_eq!(DispInput::ImuPressure.channels().len(), 50);
        assert_eq!(DispInput::PressureOnly.channels().len(), 38);
        for v in DispInput::ALL {
            assert_eq!(v.to_string().parse::<DispInput>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
        }
    }

    #[test]
    fn output_shape_and_zero_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = tiny(DispInput::ImuOnly, &mut rng);
        let x = rand_tensor(&mut rng, &[7, 12]);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[7, 3]);
        assert!(m.predict(&rand_tensor(&mut rng, &[7, 50])).is_err());
        m.head.weight.value.fill(0.0);
        m.head.bias.as_mut().unwrap().value.fill(0.0);
        assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = tiny(DispInput::ImuPressure, &mut rng);
        let x = rand_tensor(&mut rng, &[5, 50]);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn sequence_prediction_tiles_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = tiny(DispInput::ImuOnly, &mut rng);
        let x = rand_tensor(&mut rng, &[10, 12]);
        let y = predict_sequence(&m, &x).unwrap();
        assert_eq!(y.shape(), &[10, 3]);
        assert_eq!(y.slice_rows(0, 4), m.predict(&x.slice_rows(0, 4)).unwrap());
        assert_eq!(y.slice_rows(4, 4), m.predict(&x.slice_rows(4, 4)).unwrap());
        let tail = m.predict(&x.slice_rows(6, 4)).unwrap();
        assert_eq!(y.slice_rows(8, 2), tail.slice_rows(2, 2));
        assert!(predict_sequence(&m, &x.slice_rows(0, 3)).is_err());
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = tiny(DispInput::ImuOnly, &mut rng);
        m.head.weight.value.fill(0.0);
        let b = m.head.bias.as_mut().unwrap();
        b.value = Tensor::from_vec(&[3], vec![0.2, -0.1, 0.0]).unwrap();
        m.config.dropout = 0.0;
        let target: Vec<f64> = (0..4).flat_map(|_| [0.2, -0.1, 0.0]).collect();
        let x = rand_tensor(&mut rng, &[4, 12]);
        let loss = disp_item_loss(&mut m, &x, &target, 1.0, &mut rng).unwrap();
        assert!(loss < 1e-30);
    }

    #[test]
    fn overfits_one_window() {
        for input in DispInput::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut m = tiny(input, &mut rng);
            let x = rand_tensor(&mut rng, &[4, input.channels().len()]);
            let target: Vec<f64> = rand_tensor(&mut rng, &[4, 3]).into_vec();
            let mut opt = Adam::new(AdamConfig::default()).unwrap();
            let mut losses = Vec::new();
            for _ in 0..200 {
                m.zero_grad();
                losses.push(disp_item_loss(&mut m, &x, &target, 1.0, &mut rng).unwrap());
                opt.step(&mut m).unwrap();
            }
            let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
            let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
            assert!(tail < 0.5 * head, "{input}: {head} -> {tail}");
        }
    }
}
