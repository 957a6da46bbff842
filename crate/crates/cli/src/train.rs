//! Deterministic minibatch training shared by every model.
//!
//! Step `s` belongs to epoch `s / steps_per_epoch`; each epoch visits the
//! training windows in a permutation drawn from `(seed, epoch)`, and every
//! item gets its own generator seeded from `(seed, step, item)`. Nothing
//! else carries state between steps, so a run resumed from a checkpoint at
//! step `k` continues exactly as the uninterrupted run would have.

use std::thread;

use insole_motion::data::{MotionWindow, Skeleton, INSOLE_CHANNELS};
use insole_motion::dataset::Recording;
use insole_motion::preprocess::{
    displacement_matrix, insole_matrix, pose_matrix, rotate_about_vertical, sliding_windows, to_world_frame,
    StandardizationStats, WorldFrameOptions,
};
use insole_motion::sensor_layout::SensorLayout;
use insole_motion::MotionError;
use insole_nn::{Adam, Module};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Raw world-frame training windows and the statistics fitted on them.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub skeleton: Skeleton,
    pub sensor_layout: SensorLayout,
    pub windows: Vec<MotionWindow>,
    pub stats: StandardizationStats,
}

/// One standardized example, row-major.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `W x 50`
    pub insole: Vec<f64>,
    /// `W x (J-1)*3`
    pub pose: Vec<f64>,
    /// `W x 3`
    pub displacement: Vec<f64>,
}

/// Checks that all recordings share one skeleton and sensor layout.
pub fn common_layout(recordings: &[Recording]) -> CliResult<(Skeleton, SensorLayout)> {
    let first = recordings
        .first()
        .ok_or_else(|| CliError::Data("dataset holds no recordings".into()))?;
    let skeleton = first.header.skeleton.clone();
    let layout = first.header.sensor_layout.clone();
    for (i, r) in recordings.iter().enumerate() {
        if r.header.skeleton != skeleton {
            return Err(CliError::Data(format!(
                "recording {i} uses skeleton {} but recording 0 uses {}",
                r.header.skeleton.hash(),
                skeleton.hash()
            )));
        }
        if r.header.sensor_layout != layout {
            return Err(CliError::Data(format!("recording {i} uses a different sensor layout")));
        }
    }
    Ok((skeleton, layout))
}

impl TrainingSet {
    /// Converts to world frame, cuts windows and fits statistics on them
    /// (rotation-invariant ones when training with rotation augmentation).
    pub fn build(recordings: &[Recording], cfg: &RunConfig) -> CliResult<Self> {
        let (skeleton, sensor_layout) = common_layout(recordings)?;
        let opts = WorldFrameOptions {
            subtract_gravity: cfg.subtract_gravity,
        };
        let mut windows = Vec::new();
        for (i, rec) in recordings.iter().enumerate() {
            if !rec.has_poses() {
                return Err(CliError::Data(format!("recording {i} has no poses to train on")));
            }
            let world = to_world_frame(rec, opts)?;
            windows.extend(sliding_windows(&world, cfg.window, cfg.window_stride)?);
        }
        if windows.is_empty() {
            return Err(CliError::Data(format!(
                "no recording is at least {} frames long",
                cfg.window
            )));
        }
        let stats = if cfg.rotation_augmentation {
            StandardizationStats::fit_rotation_invariant(&windows, skeleton.vertical_axis)?
        } else {
            StandardizationStats::fit(&windows)?
        };
        Ok(Self {
            skeleton,
            sensor_layout,
            windows,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn pose_dim(&self) -> usize {
        (self.skeleton.joint_count() - 1) * 3
    }

    /// Window `i`, optionally rotated about the vertical axis, standardized.
    pub fn sample(&self, i: usize, angle: Option<f64>) -> CliResult<Sample> {
        let rotated;
        let w = match angle {
            Some(a) => {
                rotated = rotate_about_vertical(&self.windows[i], &self.skeleton, a);
                &rotated
            }
            None => &self.windows[i],
        };
        Ok(Sample {
            insole: self.stats.insole.standardize(&insole_matrix(&w.insoles))?,
            pose: self.stats.pose.standardize(&pose_matrix(&w.poses))?,
            displacement: self.stats.displacement.standardize(&displacement_matrix(&w.poses))?,
        })
    }
}

/// The insole columns a displacement model reads, from a `rows x 50` matrix.
pub fn select_insole_columns(insole: &[f64], idx: &[usize]) -> Vec<f64> {
    insole_motion::preprocess::select_columns(insole, INSOLE_CHANNELS, idx)
}

/// A training problem over `len()` examples.
pub trait Objective: Sync {
    type Model: Module<f32> + Clone + Send + Sync;

    fn len(&self) -> usize;

    /// Accumulates `weight * dL_i/dθ` for every listed item into a model
    /// whose gradients are zero on entry, and returns the sum of the
    /// unweighted item losses. `rng_for(item)` yields that item's generator.
    fn chunk_loss(
        &self,
        model: &mut Self::Model,
        items: &[usize],
        weight: f64,
        rng_for: &dyn Fn(usize) -> ChaCha8Rng,
    ) -> CliResult<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub batch_size: usize,
    pub threads: usize,
}

pub fn steps_per_epoch(items: usize, batch: usize) -> usize {
    items.div_ceil(batch).max(1)
}

/// Total optimizer steps for `epochs` passes, capped by `max_steps`.
pub fn total_steps(items: usize, batch: usize, epochs: usize, max_steps: Option<usize>) -> usize {
    let full = epochs * steps_per_epoch(items, batch);
    max_steps.map_or(full, |m| m.min(full))
}

/// SplitMix64 finalizer over a running combination of the inputs.
pub fn mix(values: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &v in values {
        h = h.wrapping_add(v).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub fn item_rng(seed: u64, step: usize, item: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, step as u64, item as u64]))
}

/// Items of step `step`: a contiguous slice of that epoch's permutation.
pub fn batch_items(seed: u64, items: usize, batch: usize, step: usize) -> Vec<usize> {
    let spe = steps_per_epoch(items, batch);
    let (epoch, k) = (step / spe, step % spe);
    let mut perm: Vec<usize> = (0..items).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[seed, 0xE90C, epoch as u64])));
    let start = k * batch;
    perm[start..(start + batch).min(items)].to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// A step that could not be applied; the model still holds the weights from
/// before it.
#[derive(Debug)]
pub struct StepFailure {
    pub step: usize,
    pub error: CliError,
}

/// Gradients of one batch, split across `threads` model copies and summed
/// in chunk order.
fn batch_gradients<O: Objective>(
    obj: &O,
    model: &mut O::Model,
    items: &[usize],
    opts: &TrainOptions,
    step: usize,
) -> CliResult<f64> {
    let weight = 1.0 / items.len() as f64;
    let seed = opts.seed;
    let rng_for = move |item: usize| item_rng(seed, step, item);
    model.zero_grad();
    let threads = opts.threads.min(items.len()).max(1);
    if threads == 1 {
        return obj.chunk_loss(model, items, weight, &rng_for);
    }
    let chunk = items.len().div_ceil(threads);
    let base: &O::Model = model;
    let results: Vec<CliResult<(O::Model, f64)>> = thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let rng_for = &rng_for;
                s.spawn(move || {
                    let mut local = base.clone();
                    let loss = obj.chunk_loss(&mut local, part, weight, rng_for)?;
                    Ok((local, loss))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Numerical("training worker panicked".into()))))
            .collect()
    });
    let mut total = 0.0;
    for r in results {
        let (local, loss) = r?;
        model.accumulate_grads_from(&local);
        total += loss;
    }
    Ok(total)
}

/// Runs steps `start..end`, calling `after_step` once each update is
/// applied. Stops at the first failing step without touching the weights.
pub fn run<O: Objective>(
    obj: &O,
    model: &mut O::Model,
    adam: &mut Adam,
    opts: &TrainOptions,
    start: usize,
    end: usize,
    mut after_step: impl FnMut(&StepRecord, &O::Model, &Adam) -> CliResult<()>,
) -> Result<(), StepFailure> {
    let n = obj.len();
    let spe = steps_per_epoch(n, opts.batch_size);
    for step in start..end {
        let fail = |error| StepFailure { step, error };
        let items = batch_items(opts.seed, n, opts.batch_size, step);
        let sum = batch_gradients(obj, model, &items, opts, step).map_err(fail)?;
        let loss = sum / items.len() as f64;
        if !loss.is_finite() {
            return Err(fail(CliError::Numerical(format!("loss became {loss} at step {step}"))));
        }
        adam.step(model).map_err(|e| fail(MotionError::from(e).into()))?;
        let record = StepRecord {
            step,
            epoch: step / spe,
            loss,
        };
        after_step(&record, model, adam).map_err(fail)?;
    }
    Ok(())
}

/// Draws a rotation angle for augmentation when enabled.
pub fn augmentation_angle(enabled: bool, rng: &mut ChaCha8Rng) -> Option<f64> {
    enabled.then(|| rng.random_range(0.0..std::f64::consts::TAU))
}

#[cfg(test)]
mod tests {
    use super::*;
    use insole_nn::{Parameter, Tensor};

    #[test]
    fn epochs_visit_every_item_once() {
        for (n, b) in [(10, 3), (7, 7), (5, 8), (20, 1)] {
            let spe = steps_per_epoch(n, b);
            for epoch in 0..3 {
                let mut seen: Vec<usize> = (0..spe).flat_map(|k| batch_items(4, n, b, epoch * spe + k)).collect();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn permutations_change_between_epochs() {
        let a = batch_items(1, 50, 50, 0);
        let b = batch_items(1, 50, 50, 1);
        assert_ne!(a, b);
        assert_eq!(a, batch_items(1, 50, 50, 0));
    }

    #[test]
    fn step_budget() {
        assert_eq!(total_steps(10, 3, 2, None), 8);
        assert_eq!(total_steps(10, 3, 2, Some(5)), 5);
        assert_eq!(total_steps(10, 30, 2, None), 2);
    }

    #[test]
    fn item_generators_are_distinct_and_stable() {
        let x = item_rng(1, 2, 3).random::<u64>();
        assert_eq!(x, item_rng(1, 2, 3).random::<u64>());
        assert_ne!(x, item_rng(1, 3, 2).random::<u64>());
        assert_ne!(x, item_rng(2, 2, 3).random::<u64>());
    }

    /// Least squares on a scalar: item i pulls w toward target i.
    #[derive(Clone)]
    struct Scalar(Parameter<f32>);

    impl Module<f32> for Scalar {
        fn visit(&self, f: &mut dyn FnMut(&Parameter<f32>)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
            f(&mut self.0)
        }
    }

    struct Targets(Vec<f32>);

    impl Objective for Targets {
        type Model = Scalar;

        fn len(&self) -> usize {
            self.0.len()
        }

        fn chunk_loss(
            &self,
            model: &mut Scalar,
            items: &[usize],
            weight: f64,
            _rng: &dyn Fn(usize) -> ChaCha8Rng,
        ) -> CliResult<f64> {
            let w = model.0.value.data()[0];
            let mut sum = 0.0;
            for &i in items {
                let e = w - self.0[i];
                sum += f64::from(e * e);
                model.0.grad.data_mut()[0] += 2.0 * e * weight as f32;
            }
            Ok(sum)
        }
    }

    fn scalar() -> Scalar {
        Scalar(Parameter::new("w", Tensor::from_vec(&[1], vec![0.0f32]).unwrap()))
    }

    #[test]
    fn converges_to_mean_and_resumes_exactly() {
        let obj = Targets(vec![1.0, 2.0, 3.0, 6.0]);
        let opts = TrainOptions {
            seed: 3,
            batch_size: 2,
            threads: 1,
        };
        let cfg = insole_nn::AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut full = scalar();
        let mut adam = Adam::new(cfg).unwrap();
        let mut losses = Vec::new();
        run(&obj, &mut full, &mut adam, &opts, 0, 400, |r, _, _| {
            losses.push(r.loss);
            Ok(())
        })
        .unwrap();
        assert!((full.0.value.data()[0] - 3.0).abs() < 0.1);
        assert_eq!(losses.len(), 400);

        let mut split = scalar();
        let mut adam2 = Adam::new(cfg).unwrap();
        run(&obj, &mut split, &mut adam2, &opts, 0, 150, |_, _, _| Ok(())).unwrap();
        let mut resumed = split.clone();
        let mut adam3 = Adam::new(cfg).unwrap();
        adam3.step = adam2.step;
        run(&obj, &mut resumed, &mut adam3, &opts, 150, 400, |_, _, _| Ok(())).unwrap();
        assert_eq!(resumed.0.value.data(), full.0.value.data());
    }

    #[test]
    fn threads_agree_with_serial_gradients() {
        let obj = Targets((0..9).map(|i| i as f32).collect());
        let mut a = scalar();
        let mut b = scalar();
        let items: Vec<usize> = (0..9).collect();
        let serial = TrainOptions {
            seed: 0,
            batch_size: 9,
            threads: 1,
        };
        let parallel = TrainOptions { threads: 3, ..serial };
        let la = batch_gradients(&obj, &mut a, &items, &serial, 0).unwrap();
        let lb = batch_gradients(&obj, &mut b, &items, &parallel, 0).unwrap();
        assert!((la - lb).abs() < 1e-9);
        assert!((a.0.grad.data()[0] - b.0.grad.data()[0]).abs() < 1e-5);
    }

    #[test]
    fn non_finite_loss_stops_before_the_update() {
        let obj = Targets(vec![f32::NAN, 1.0]);
        let mut m = scalar();
        let mut adam = Adam::new(Default::default()).unwrap();
        let opts = TrainOptions {
            seed: 0,
            batch_size: 2,
            threads: 1,
        };
        let err = run(&obj, &mut m, &mut adam, &opts, 0, 5, |_, _, _| Ok(())).unwrap_err();
        assert_eq!(err.step, 0);
        assert!(matches!(err.error, CliError::Numerical(_)));
        assert_eq!(m.0.value.data()[0], 0.0);
        assert_eq!(adam.step, 0);
    }
}
