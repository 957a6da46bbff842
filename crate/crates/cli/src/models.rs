//! Model construction, checkpoint metadata and the training drivers behind
//! `train-pose` and `train-disp` (plus the baselines used by benchmarks).

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use insole_motion::baselines::{MlpBaseline, MlpBaselineConfig, TransformerBaseline, TransformerBaselineConfig};
use insole_motion::checkpoint::{
    Checkpoint, KIND_DISPLACEMENT, KIND_MLP_BASELINE, KIND_POSE, KIND_TRANSFORMER_BASELINE,
};
use insole_motion::conditioning::ComponentIndex;
use insole_motion::data::Skeleton;
use insole_motion::dataset::Recording;
use insole_motion::denoiser::{DenoiserConfig, PoseDenoiser};
use insole_motion::displacement::{DispConfig, DisplacementPredictor};
use insole_motion::preprocess::StandardizationStats;
use insole_motion::sensor_layout::SensorLayout;
use insole_nn::{Adam, Module};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::objectives::{BaselineObjective, DispObjective, PoseObjective};
use crate::train::{self, Objective, StepRecord, TrainOptions, TrainingSet};

/// Progress of a training run, stored in every checkpoint it writes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer steps completed.
    pub step: usize,
    pub total_steps: usize,
    pub adam_step: u64,
    pub windows: usize,
    pub finished: bool,
    /// Set when the run aborted; the weights are those before the failing step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Everything a checkpoint needs besides its tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub run_config: RunConfig,
    pub run_config_hash: String,
    /// Architecture of the stored model.
    pub model: serde_json::Value,
    pub skeleton: Skeleton,
    pub skeleton_hash: String,
    pub sensor_layout: SensorLayout,
    pub stats: StandardizationStats,
    /// SHA-256 of the training data.
    pub data_hash: String,
    pub train_state: TrainState,
}

impl ModelMeta {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> CliResult<Self> {
        let meta: Self = serde_json::from_value(ckpt.metadata.clone())
            .map_err(|e| CliError::Data(format!("checkpoint metadata: {e}")))?;
        if meta.skeleton.hash() != meta.skeleton_hash {
            return Err(CliError::Data("checkpoint skeleton does not match its recorded hash".into()));
        }
        Ok(meta)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Hash of the recordings' canonical JSON-lines encoding.
pub fn recordings_hash(recordings: &[Recording]) -> CliResult<String> {
    let mut buf = Vec::new();
    for r in recordings {
        r.write_lines(&mut buf)?;
    }
    Ok(sha256_hex(&buf))
}

fn init_rng(cfg: &RunConfig, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(train::mix(&[cfg.seed, salt]))
}

pub fn new_pose_model(cfg: &DenoiserConfig, skeleton: &Skeleton, layout: &SensorLayout, seed: u64) -> CliResult<PoseDenoiser<f32>> {
    let comps = ComponentIndex::new(layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PoseDenoiser::new(cfg.clone(), skeleton.partition_map(), comps, &mut rng)?)
}

fn model_config<C: for<'de> Deserialize<'de>>(meta: &ModelMeta) -> CliResult<C> {
    serde_json::from_value(meta.model.clone()).map_err(|e| CliError::Data(format!("checkpoint model config: {e}")))
}

pub struct LoadedPose {
    pub model: PoseDenoiser<f32>,
    pub meta: ModelMeta,
}

pub struct LoadedDisp {
    pub model: DisplacementPredictor<f32>,
    pub meta: ModelMeta,
}

pub fn load_pose(path: &Path) -> CliResult<LoadedPose> {
    let ckpt = Checkpoint::load_kind(path, KIND_POSE)?;
    let meta = ModelMeta::from_checkpoint(&ckpt)?;
    let cfg: DenoiserConfig = model_config(&meta)?;
    let mut model = new_pose_model(&cfg, &meta.skeleton, &meta.sensor_layout, 0)?;
    ckpt.restore(&mut model)?;
    Ok(LoadedPose { model, meta })
}

pub fn load_disp(path: &Path) -> CliResult<LoadedDisp> {
    let ckpt = Checkpoint::load_kind(path, KIND_DISPLACEMENT)?;
    let meta = ModelMeta::from_checkpoint(&ckpt)?;
    let cfg: DispConfig = model_config(&meta)?;
    let mut model = DisplacementPredictor::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ckpt.restore(&mut model)?;
    Ok(LoadedDisp { model, meta })
}

/// Where a training run writes.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub checkpoint: PathBuf,
    /// CSV loss curve (`step,epoch,loss`).
    pub loss_log: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

/// Marker written next to a checkpoint whose run hit a numerical failure.
pub fn failure_marker(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".failed");
    PathBuf::from(name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub losses: Vec<f64>,
}

/// Keeps the log rows of steps before `start` (a resumed run rewrites the
/// rest) and opens the log for appending.
fn open_loss_log(path: &Path, start: usize) -> CliResult<csv::Writer<fs::File>> {
    let mut kept = Vec::new();
    if start > 0 && path.exists() {
        let mut r = csv::Reader::from_path(path)?;
        for rec in r.records() {
            let rec = rec?;
            let step: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Data(format!("malformed loss log {}", path.display())))?;
            if step < start {
                kept.push(rec);
            }
        }
    }
    let mut w = csv::Writer::from_writer(fs::File::create(path)?);
    w.write_record(["step", "epoch", "loss"])?;
    for rec in kept {
        w.write_record(&rec)?;
    }
    w.flush()?;
    let file = OpenOptions::new().append(true).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn save<M: Module<f32>>(kind: &str, meta: &ModelMeta, model: &M, path: &Path) -> CliResult<()> {
    let metadata = serde_json::to_value(meta)?;
    Checkpoint::new(kind, metadata).with_model(model, true).save(path)?;
    Ok(())
}

/// Runs (or resumes) a training job to `meta.train_state.total_steps`,
/// logging every step and checkpointing every `checkpoint_every` steps and
/// at the end. On a failing step the last good weights are saved with the
/// failure recorded, a marker file is written, and the error is returned.
pub fn drive<O: Objective>(
    kind: &str,
    obj: &O,
    model: &mut O::Model,
    meta: &mut ModelMeta,
    outputs: &Outputs,
) -> CliResult<TrainSummary> {
    let cfg = meta.run_config.clone();
    let mut adam = Adam::new(cfg.adam()).map_err(insole_motion::MotionError::from)?;
    adam.step = meta.train_state.adam_step;
    let opts = TrainOptions {
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        threads: cfg.threads,
    };
    let start = meta.train_state.step;
    let end = meta.train_state.total_steps;
    let mut log = outputs
        .loss_log
        .as_deref()
        .map(|p| open_loss_log(p, start))
        .transpose()?;
    let marker = failure_marker(&outputs.checkpoint);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let mut losses = Vec::new();
    let every = cfg.checkpoint_every;
    let result = train::run(obj, model, &mut adam, &opts, start, end, |r: &StepRecord, m, a| {
        losses.push(r.loss);
        if let Some(w) = log.as_mut() {
            w.write_record([r.step.to_string(), r.epoch.to_string(), format!("{:.9e}", r.loss)])?;
        }
        if every > 0 && (r.step + 1).is_multiple_of(every) && r.step + 1 < end {
            let mut m2 = meta.clone();
            m2.train_state.step = r.step + 1;
            m2.train_state.adam_step = a.step;
            if let Some(w) = log.as_mut() {
                w.flush()?;
            }
            save(kind, &m2, m, &outputs.checkpoint)?;
        }
        Ok(())
    });
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    match result {
        Ok(()) => {
            meta.train_state.step = end;
            meta.train_state.adam_step = adam.step;
            meta.train_state.finished = true;
            save(kind, meta, model, &outputs.checkpoint)?;
            Ok(TrainSummary {
                steps: end - start,
                final_loss: losses.last().copied(),
                losses,
            })
        }
        Err(fail) => {
            let msg = format!("step {}: {}", fail.step, fail.error);
            meta.train_state.step = fail.step;
            meta.train_state.adam_step = adam.step;
            meta.train_state.failure = Some(msg.clone());
            save(kind, meta, model, &outputs.checkpoint)?;
            fs::write(&marker, format!("{msg}\n"))?;
            Err(match fail.error {
                CliError::Numerical(_) => CliError::Numerical(msg),
                other => other,
            })
        }
    }
}

/// Which network a training job fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Job {
    Pose,
    Displacement,
    MlpBaseline,
    TransformerBaseline,
}

impl Job {
    pub fn kind(self) -> &'static str {
        match self {
            Self::Pose => KIND_POSE,
            Self::Displacement => KIND_DISPLACEMENT,
            Self::MlpBaseline => KIND_MLP_BASELINE,
            Self::TransformerBaseline => KIND_TRANSFORMER_BASELINE,
        }
    }

    fn epochs(self, cfg: &RunConfig) -> usize {
        match self {
            Self::Displacement => cfg.disp_epochs,
            _ => cfg.pose_epochs,
        }
    }

    fn salt(self) -> u64 {
        match self {
            Self::Pose => 1,
            Self::Displacement => 2,
            Self::MlpBaseline => 3,
            Self::TransformerBaseline => 4,
        }
    }
}

/// Budget fields a resumed run takes from the new invocation; everything
/// else comes from the checkpoint.
fn resume_config(saved: &RunConfig, requested: &RunConfig) -> RunConfig {
    RunConfig {
        pose_epochs: requested.pose_epochs,
        disp_epochs: requested.disp_epochs,
        max_steps: requested.max_steps,
        threads: requested.threads,
        checkpoint_every: requested.checkpoint_every,
        ..saved.clone()
    }
}

fn fresh_meta(job: Job, cfg: &RunConfig, set: &TrainingSet, data_hash: &str, model: serde_json::Value) -> ModelMeta {
    ModelMeta {
        run_config: cfg.clone(),
        run_config_hash: cfg.hash(),
        model,
        skeleton: set.skeleton.clone(),
        skeleton_hash: set.skeleton.hash(),
        sensor_layout: set.sensor_layout.clone(),
        stats: set.stats.clone(),
        data_hash: data_hash.to_string(),
        train_state: TrainState {
            step: 0,
            total_steps: train::total_steps(set.len(), cfg.batch_size, job.epochs(cfg), cfg.max_steps),
            adam_step: 0,
            windows: set.len(),
            finished: false,
            failure: None,
        },
    }
}

/// Loads the resume checkpoint (if any) into `model` and returns the
/// metadata to continue with.
fn prepare<M: Module<f32>>(
    job: Job,
    cfg: &RunConfig,
    set: &TrainingSet,
    data_hash: &str,
    model_json: serde_json::Value,
    model: &mut M,
    outputs: &Outputs,
) -> CliResult<ModelMeta> {
    let Some(path) = &outputs.resume else {
        return Ok(fresh_meta(job, cfg, set, data_hash, model_json));
    };
    let ckpt = Checkpoint::load_kind(path, job.kind())?;
    let mut meta = ModelMeta::from_checkpoint(&ckpt)?;
    if meta.data_hash != data_hash {
        return Err(CliError::Data(format!(
            "{} was trained on different data ({} vs {})",
            path.display(),
            meta.data_hash,
            data_hash
        )));
    }
    if meta.model != model_json {
        return Err(CliError::Usage(format!("{} holds a different architecture", path.display())));
    }
    if !ckpt.has_optimizer_state() {
        return Err(CliError::Data(format!("{} has no optimizer state to resume from", path.display())));
    }
    ckpt.restore(model)?;
    meta.run_config = resume_config(&meta.run_config, cfg);
    meta.run_config_hash = meta.run_config.hash();
    meta.train_state.total_steps =
        train::total_steps(set.len(), meta.run_config.batch_size, job.epochs(&meta.run_config), meta.run_config.max_steps);
    meta.train_state.finished = false;
    meta.train_state.failure = None;
    if meta.train_state.step > meta.train_state.total_steps {
        return Err(CliError::Usage(format!(
            "checkpoint is at step {} but the requested budget is {} steps",
            meta.train_state.step, meta.train_state.total_steps
        )));
    }
    Ok(meta)
}

/// Trains one network on `recordings` and writes its checkpoint.
pub fn train_job(
    job: Job,
    cfg: &RunConfig,
    recordings: &[Recording],
    data_hash: &str,
    outputs: &Outputs,
) -> CliResult<TrainSummary> {
    cfg.validate()?;
    // A resumed run must cut windows and fit statistics exactly as before.
    let effective = match &outputs.resume {
        Some(p) => resume_config(&ModelMeta::from_checkpoint(&Checkpoint::load(p)?)?.run_config, cfg),
        None => cfg.clone(),
    };
    let cfg = &effective;
    let set = TrainingSet::build(recordings, cfg)?;
    let mut rng = init_rng(cfg, job.salt());
    let augment = cfg.rotation_augmentation;
    match job {
        Job::Pose => {
            let dcfg = cfg.denoiser_config();
            let mut model = PoseDenoiser::new(
                dcfg.clone(),
                set.skeleton.partition_map(),
                ComponentIndex::new(&set.sensor_layout)?,
                &mut rng,
            )?;
            let mut meta = prepare(job, cfg, &set, data_hash, serde_json::to_value(&dcfg)?, &mut model, outputs)?;
            let obj = PoseObjective {
                set: &set,
                schedule: cfg.schedule()?,
                mode: cfg.prediction,
                augment,
            };
            drive(job.kind(), &obj, &mut model, &mut meta, outputs)
        }
        Job::Displacement => {
            let dcfg = cfg.disp_config();
            let mut model = DisplacementPredictor::new(dcfg.clone(), &mut rng)?;
            let mut meta = prepare(job, cfg, &set, data_hash, serde_json::to_value(&dcfg)?, &mut model, outputs)?;
            let obj = DispObjective {
                set: &set,
                input: cfg.disp_input,
                augment,
            };
            drive(job.kind(), &obj, &mut model, &mut meta, outputs)
        }
        Job::MlpBaseline => {
            let bcfg = MlpBaselineConfig::new(cfg.window, set.pose_dim());
            let mut model = MlpBaseline::<f32>::new(bcfg.clone(), &mut rng)?;
            let mut meta = prepare(job, cfg, &set, data_hash, serde_json::to_value(&bcfg)?, &mut model, outputs)?;
            let obj = BaselineObjective::<MlpBaseline<f32>>::new(&set, augment);
            drive(job.kind(), &obj, &mut model, &mut meta, outputs)
        }
        Job::TransformerBaseline => {
            let bcfg = transformer_baseline_config(cfg, set.pose_dim());
            let mut model = TransformerBaseline::<f32>::new(bcfg.clone(), &mut rng)?;
            let mut meta = prepare(job, cfg, &set, data_hash, serde_json::to_value(&bcfg)?, &mut model, outputs)?;
            let obj = BaselineObjective::<TransformerBaseline<f32>>::new(&set, augment);
            drive(job.kind(), &obj, &mut model, &mut meta, outputs)
        }
    }
}

/// The Transformer baseline shares the main model's width and depth.
pub fn transformer_baseline_config(cfg: &RunConfig, pose_dim: usize) -> TransformerBaselineConfig {
    TransformerBaselineConfig {
        pose_dim,
        d: cfg.d_model,
        ff_dim: cfg.ff_dim,
        layers: cfg.layers,
        heads: cfg.heads,
        dropout: cfg.dropout,
    }
}

pub fn load_mlp_baseline(path: &Path) -> CliResult<(MlpBaseline<f32>, ModelMeta)> {
    let ckpt = Checkpoint::load_kind(path, KIND_MLP_BASELINE)?;
    let meta = ModelMeta::from_checkpoint(&ckpt)?;
    let cfg: MlpBaselineConfig = model_config(&meta)?;
    let mut model = MlpBaseline::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ckpt.restore(&mut model)?;
    Ok((model, meta))
}

pub fn load_transformer_baseline(path: &Path) -> CliResult<(TransformerBaseline<f32>, ModelMeta)> {
    let ckpt = Checkpoint::load_kind(path, KIND_TRANSFORMER_BASELINE)?;
    let meta = ModelMeta::from_checkpoint(&ckpt)?;
    let cfg: TransformerBaselineConfig = model_config(&meta)?;
    let mut model = TransformerBaseline::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ckpt.restore(&mut model)?;
    Ok((model, meta))
}
