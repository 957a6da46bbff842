//! Variance schedule, forward noising, the pose training objective, reverse
//! sampling and inpainting-based autoregressive sampling of long sequences.
//!
//! Everything here works on standardized `W x P` pose tensors; turning them
//! back into joint positions is the caller's job.

use insole_nn::{Ctx, Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, PoseDenoiser};
use crate::error::{MotionError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    /// `beta[t - 1]` is `beta_t`, for `t = 1..=T`.
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear `beta` from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(MotionError::Invalid(format!("a schedule needs at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(MotionError::Invalid(format!(
                "beta range must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start))
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(MotionError::Invalid(format!("diffusion step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Coefficients `(c0, ct, var)` of `q(m_{t-1} | m_t, m_0)`:
    /// mean `c0 * m_0 + ct * m_t`, variance `var`.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab_t = self.alpha_bar_at(t);
        let ab_prev = self.alpha_bar_at(t - 1);
        let beta = self.beta_at(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let ct = self.alpha[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
        (c0, ct, var)
    }
}

/// `sqrt(alpha_bar_t) m0 + sqrt(1 - alpha_bar_t) noise`. `t = 0` returns
/// `m0`.
pub fn q_sample<T: Float>(
    schedule: &DiffusionSchedule,
    m0: &Tensor<T>,
    t: usize,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    if t != 0 {
        schedule.check(t)?;
    }
    if m0.shape() != noise.shape() {
        return Err(MotionError::Invalid(format!(
            "noise shape {:?} differs from signal shape {:?}",
            noise.shape(),
            m0.shape()
        )));
    }
    let ab = schedule.alpha_bar_at(t);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    let data = m0.data().iter().zip(noise.data()).map(|(&x, &n)| a * x + b * n).collect();
    Ok(Tensor::from_vec(m0.shape(), data)?)
}

/// Forward transition from level `t1` to a later level `t2`:
/// `sqrt(ab2 / ab1) m + sqrt(1 - ab2 / ab1) noise`.
pub fn q_step<T: Float>(
    schedule: &DiffusionSchedule,
    m: &Tensor<T>,
    t1: usize,
    t2: usize,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    schedule.check(t2)?;
    if t1 >= t2 {
        return Err(MotionError::Invalid(format!("cannot step forward from {t1} to {t2}")));
    }
    let r = schedule.alpha_bar_at(t2) / schedule.alpha_bar_at(t1);
    let (a, b) = (T::of(r.sqrt()), T::of((1.0 - r).sqrt()));
    let data = m.data().iter().zip(noise.data()).map(|(&x, &n)| a * x + b * n).collect();
    Ok(Tensor::from_vec(m.shape(), data)?)
}

pub fn gaussian<T: Float>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

/// What the network is trained to output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// The clean window `m_0`; sampling re-noises through the posterior.
    #[default]
    PredictClean,
    /// `m_{t-1}` itself, used directly as the next sampling state.
    PredictPrev,
}

/// Training target for a window noised to `t` with `noise`. In predict-prev
/// mode the target is `m_0` noised to `t - 1` with the same noise draw.
pub fn training_target<T: Float>(
    schedule: &DiffusionSchedule,
    mode: PredictionMode,
    m0: &Tensor<T>,
    t: usize,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    match mode {
        PredictionMode::PredictClean => Ok(m0.clone()),
        PredictionMode::PredictPrev => q_sample(schedule, m0, t - 1, noise),
    }
}

/// Mean absolute error and its gradient w.r.t. `pred`, scaled by `weight`.
pub fn mae_with_grad<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, weight: f64) -> (f64, Tensor<T>) {
    let n = pred.len() as f64;
    let g = T::of(weight / n);
    let mut sum = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &q)| {
            let diff = (p - q).as_f64();
            sum += diff.abs();
            if diff > 0.0 {
                g
            } else if diff < 0.0 {
                -g
            } else {
                T::zero()
            }
        })
        .collect();
    (sum / n, Tensor::from_vec(pred.shape(), grad).expect("same shape"))
}

/// One training example's contribution: draws `t` and noise from `rng`,
/// runs the denoiser with dropout, accumulates gradients scaled by `weight`
/// and returns the unscaled MAE.
pub fn pose_item_loss<T: Float>(
    model: &mut PoseDenoiser<T>,
    schedule: &DiffusionSchedule,
    mode: PredictionMode,
    m0: &Tensor<T>,
    insole: &Tensor<T>,
    weight: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let t = rng.random_range(1..=schedule.steps());
    let noise = gaussian(m0.shape(), rng);
    let m_t = q_sample(schedule, m0, t, &noise)?;
    let target = training_target(schedule, mode, m0, t, &noise)?;
    let mut ctx = Ctx::train(rng.random(), model.config.dropout);
    let (out, cache, cond) = model.forward(&m_t, t, insole, &mut ctx)?;
    let (loss, dout) = mae_with_grad(&out, &target, weight);
    if !loss.is_finite() {
        return Err(MotionError::Numerical(format!("non-finite pose loss at diffusion step {t}")));
    }
    model.backward(&cache, &cond, &dout)?;
    Ok(loss)
}

/// Anything that can drive reverse sampling.
pub trait Denoise<T: Float> {
    type Cond;
    fn prepare(&self, insole: &Tensor<T>) -> Result<Self::Cond>;
    fn predict(&self, m_t: &Tensor<T>, t: usize, cond: &Self::Cond) -> Result<Tensor<T>>;
}

impl<T: Float> Denoise<T> for PoseDenoiser<T> {
    type Cond = Condition<T>;

    fn prepare(&self, insole: &Tensor<T>) -> Result<Condition<T>> {
        self.encode_condition(insole)
    }

    fn predict(&self, m_t: &Tensor<T>, t: usize, cond: &Condition<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with(m_t, t, cond, &mut Ctx::eval())?.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: PredictionMode,
    /// Frames shared by consecutive windows in [`sample_long`].
    pub overlap: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: PredictionMode::PredictClean,
            overlap: 25,
            seed: 0,
        }
    }
}

/// Frames of a window whose values are already known (from an earlier
/// window) and get clamped during sampling.
struct Known<'a, T> {
    rows: usize,
    values: &'a Tensor<T>,
}

fn clamp_rows<T: Float>(m: &mut Tensor<T>, known: &Known<'_, T>, noised: &Tensor<T>) {
    let cols = m.cols();
    m.data_mut()[..known.rows * cols].copy_from_slice(&noised.data()[..known.rows * cols]);
}

fn reverse_diffusion<T: Float, M: Denoise<T>>(
    model: &M,
    schedule: &DiffusionSchedule,
    mode: PredictionMode,
    insole: &Tensor<T>,
    pose_dim: usize,
    known: Option<Known<'_, T>>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let w = insole.rows();
    let cond = model.prepare(insole)?;
    let mut m: Tensor<T> = gaussian(&[w, pose_dim], rng);
    for t in (1..=schedule.steps()).rev() {
        if let Some(k) = &known {
            let noise = gaussian(k.values.shape(), rng);
            let noised = q_sample(schedule, k.values, t, &noise)?;
            clamp_rows(&mut m, k, &noised);
        }
        let pred = model.predict(&m, t, &cond)?;
        if pred.shape() != m.shape() {
            return Err(MotionError::Invalid(format!(
                "denoiser returned {:?} for a {:?} window",
                pred.shape(),
                m.shape()
            )));
        }
        m = match mode {
            PredictionMode::PredictPrev => pred,
            PredictionMode::PredictClean => {
                let (c0, ct, var) = schedule.posterior(t);
                let (c0, ct) = (T::of(c0), T::of(ct));
                let sd = T::of(var.sqrt());
                let data: Vec<T> = if t > 1 {
                    pred.data()
                        .iter()
                        .zip(m.data())
                        .map(|(&p, &x)| c0 * p + ct * x + sd * T::of(rng.sample::<f64, _>(StandardNormal)))
                        .collect()
                } else {
                    pred.data().iter().zip(m.data()).map(|(&p, &x)| c0 * p + ct * x).collect()
                };
                Tensor::from_vec(m.shape(), data)?
            }
        };
        if !m.all_finite() {
            return Err(MotionError::Numerical(format!("non-finite sample at diffusion step {t}")));
        }
    }
    if let Some(k) = &known {
        clamp_rows(&mut m, k, k.values);
    }
    Ok(m)
}

/// Samples one standardized pose window for a standardized `W x 50` insole
/// window. Deterministic given `seed`.
pub fn sample<T: Float, M: Denoise<T>>(
    model: &M,
    schedule: &DiffusionSchedule,
    mode: PredictionMode,
    insole: &Tensor<T>,
    pose_dim: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reverse_diffusion(model, schedule, mode, insole, pose_dim, None, &mut rng)
}

/// Start frames of the windows covering `len` frames with stride
/// `window - overlap`; the last window is aligned to the end.
pub fn window_starts(len: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if overlap >= window {
        return Err(MotionError::Invalid(format!("overlap {overlap} must be below the window {window}")));
    }
    if len < window {
        return Err(MotionError::Invalid(format!("sequence of {len} frames is shorter than the window {window}")));
    }
    let stride = window - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + window <= len).collect();
    if starts.last().is_none_or(|&s| s + window < len) {
        starts.push(len - window);
    }
    Ok(starts)
}

/// Reconstructs an arbitrary-length standardized sequence window by window.
/// Frames already produced by an earlier window are clamped (re-noised to
/// the current level) at every reverse step of the next one, and only the
/// new frames of each window are appended.
pub fn sample_long<T: Float, M: Denoise<T>>(
    model: &M,
    schedule: &DiffusionSchedule,
    insole: &Tensor<T>,
    window: usize,
    pose_dim: usize,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    let len = insole.rows();
    let starts = window_starts(len, window, cfg.overlap)?;
    let mut out = Tensor::zeros(&[len, pose_dim]);
    let mut done = 0;
    for (k, &s) in starts.iter().enumerate() {
        let seed = if k == 0 { cfg.seed } else { window_seed(cfg.seed, k) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let win_insole = insole.slice_rows(s, window);
        let known_rows = done - s;
        let known_values = out.slice_rows(s, known_rows);
        let known = (known_rows > 0).then_some(Known {
            rows: known_rows,
            values: &known_values,
        });
        let m = reverse_diffusion(model, schedule, cfg.mode, &win_insole, pose_dim, known, &mut rng)?;
        let new = m.slice_rows(known_rows, window - known_rows);
        out.data_mut()[done * pose_dim..(s + window) * pose_dim].copy_from_slice(new.data());
        done = s + window;
    }
    Ok(out)
}

fn window_seed(seed: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_1A57);
    rng.set_stream(k as u64);
    rng.random()
}
