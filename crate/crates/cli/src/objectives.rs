//! Training objectives for the pose denoiser, the displacement predictor and
//! the direct-regression baselines.

use std::marker::PhantomData;

use insole_motion::baselines::PoseRegressor;
use insole_motion::data::INSOLE_CHANNELS;
use insole_motion::denoiser::PoseDenoiser;
use insole_motion::diffusion::{pose_item_loss, DiffusionSchedule, PredictionMode};
use insole_motion::displacement::{disp_item_loss, DispInput, DisplacementPredictor};
use insole_nn::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::error::CliResult;
use crate::train::{augmentation_angle, select_insole_columns, Objective, TrainingSet};

pub struct PoseObjective<'a> {
    pub set: &'a TrainingSet,
    pub schedule: DiffusionSchedule,
    pub mode: PredictionMode,
    pub augment: bool,
}

impl Objective for PoseObjective<'_> {
    type Model = PoseDenoiser<f32>;

    fn len(&self) -> usize {
        self.set.len()
    }

    fn chunk_loss(
        &self,
        model: &mut PoseDenoiser<f32>,
        items: &[usize],
        weight: f64,
        rng_for: &dyn Fn(usize) -> ChaCha8Rng,
    ) -> CliResult<f64> {
        let w = model.config.window;
        let p = self.set.pose_dim();
        let mut sum = 0.0;
        for &i in items {
            let mut rng = rng_for(i);
            let s = self.set.sample(i, augmentation_angle(self.augment, &mut rng))?;
            let m0 = Tensor::<f32>::from_f64(&[w, p], &s.pose)?;
            let insole = Tensor::<f32>::from_f64(&[w, INSOLE_CHANNELS], &s.insole)?;
            sum += pose_item_loss(model, &self.schedule, self.mode, &m0, &insole, weight, &mut rng)?;
        }
        Ok(sum)
    }
}

pub struct DispObjective<'a> {
    pub set: &'a TrainingSet,
    pub input: DispInput,
    pub augment: bool,
}

impl Objective for DispObjective<'_> {
    type Model = DisplacementPredictor<f32>;

    fn len(&self) -> usize {
        self.set.len()
    }

    fn chunk_loss(
        &self,
        model: &mut DisplacementPredictor<f32>,
        items: &[usize],
        weight: f64,
        rng_for: &dyn Fn(usize) -> ChaCha8Rng,
    ) -> CliResult<f64> {
        let idx = self.input.channels();
        let w = model.config.window;
        let mut sum = 0.0;
        for &i in items {
            let mut rng = rng_for(i);
            let s = self.set.sample(i, augmentation_angle(self.augment, &mut rng))?;
            let x = Tensor::<f32>::from_f64(&[w, idx.len()], &select_insole_columns(&s.insole, &idx))?;
            sum += disp_item_loss(model, &x, &s.displacement, weight, &mut rng)?;
        }
        Ok(sum)
    }
}

/// Trains any [`PoseRegressor`] on the same windows as the denoiser.
pub struct BaselineObjective<'a, M> {
    pub set: &'a TrainingSet,
    pub augment: bool,
    pub model: PhantomData<fn() -> M>,
}

impl<'a, M> BaselineObjective<'a, M> {
    pub fn new(set: &'a TrainingSet, augment: bool) -> Self {
        Self {
            set,
            augment,
            model: PhantomData,
        }
    }
}

impl<M: PoseRegressor<f32> + Clone + Send + Sync> Objective for BaselineObjective<'_, M> {
    type Model = M;

    fn len(&self) -> usize {
        self.set.len()
    }

    fn chunk_loss(
        &self,
        model: &mut M,
        items: &[usize],
        weight: f64,
        rng_for: &dyn Fn(usize) -> ChaCha8Rng,
    ) -> CliResult<f64> {
        let w = self.set.windows[0].len();
        let p = self.set.pose_dim();
        let mut insoles = Vec::with_capacity(items.len());
        let mut targets = Vec::with_capacity(items.len());
        for &i in items {
            let mut rng = rng_for(i);
            let s = self.set.sample(i, augmentation_angle(self.augment, &mut rng))?;
            insoles.push(Tensor::<f32>::from_f64(&[w, INSOLE_CHANNELS], &s.insole)?);
            targets.push(Tensor::<f32>::from_f64(&[w, p], &s.pose)?);
        }
        let mut rng = rng_for(items[0] ^ usize::MAX);
        let mean = model.batch_loss(&insoles, &targets, &mut rng)?;
        // batch_loss leaves the gradient of the chunk mean.
        model.scale_grads((weight * items.len() as f64) as f32);
        Ok(mean * items.len() as f64)
    }
}
