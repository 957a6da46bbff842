//! Train-and-score harness: every method is trained on the same recordings
//! with the same statistics and scored on held-out recordings.

use std::path::Path;
use std::thread;

use insole_motion::conditioning::ConditioningMode;
use insole_motion::data::Vec3;
use insole_motion::dataset::Recording;
use insole_motion::displacement::DispInput;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::models::{self, Job, Outputs};
use crate::pipeline::{self, BenchReport, BenchRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Diffusion(ConditioningMode),
    MlpBaseline,
    TransformerBaseline,
    Displacement(DispInput),
    DoubleIntegration,
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Self::Diffusion(m) => {
                let v = serde_json::to_value(m).expect("mode serializes");
                format!("diffusion-{}", v.as_str().unwrap_or("?"))
            }
            Self::MlpBaseline => "mlp-baseline".into(),
            Self::TransformerBaseline => "transformer-baseline".into(),
            Self::Displacement(i) => format!("displacement-{i}"),
            Self::DoubleIntegration => "double-integration".into(),
        }
    }

    /// The ablation grid, both baselines, the configured displacement input
    /// and dead reckoning.
    pub fn full_grid(cfg: &RunConfig) -> Vec<Self> {
        let mut v: Vec<Self> = cfg.ablation_grid.iter().map(|&m| Self::Diffusion(m)).collect();
        v.extend([
            Self::MlpBaseline,
            Self::TransformerBaseline,
            Self::Displacement(cfg.disp_input),
            Self::DoubleIntegration,
        ]);
        v
    }
}

/// Applies `f` to every item on up to `threads` workers; output order
/// follows input order.
pub fn par_map<T: Sync, U: Send>(threads: usize, items: &[T], f: impl Fn(usize, &T) -> CliResult<U> + Sync) -> CliResult<Vec<U>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<CliResult<Vec<U>>> = thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| s.spawn(move || part.iter().enumerate().map(|(k, x)| f(c * chunk + k, x)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Numerical("worker panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Trains (checkpoints go to `workdir`) and scores each method.
pub fn run_benchmark(
    cfg: &RunConfig,
    train: &[Recording],
    test: &[Recording],
    methods: &[Method],
    workdir: &Path,
    data_hash: &str,
    mut progress: impl FnMut(&BenchRow),
) -> CliResult<BenchReport> {
    cfg.validate()?;
    if test.iter().any(|r| !r.has_poses()) {
        return Err(CliError::Data("test recordings need ground-truth poses".into()));
    }
    std::fs::create_dir_all(workdir)?;
    let threads = cfg.threads;
    let mut rows = Vec::new();
    for &method in methods {
        let name = method.name();
        let ckpt = workdir.join(format!("{name}.ckpt"));
        let outputs = Outputs {
            checkpoint: ckpt.clone(),
            loss_log: Some(workdir.join(format!("{name}.loss.csv"))),
            resume: None,
        };
        let row = match method {
            Method::Diffusion(mode) => {
                let c = RunConfig {
                    conditioning: mode,
                    ..cfg.clone()
                };
                models::train_job(Job::Pose, &c, train, data_hash, &outputs)?;
                let pose = models::load_pose(&ckpt)?;
                let schedule = pose.meta.run_config.schedule()?;
                let preds = par_map(threads, test, |i, r| {
                    pipeline::diffusion_poses(
                        &pose.model,
                        &pose.meta.stats,
                        &schedule,
                        &pose.meta.run_config,
                        r,
                        pipeline::recording_seed(cfg.seed, i),
                    )
                })?;
                BenchRow::from_poses(&name, &pipeline::pooled_pose_report(&preds, test)?)
            }
            Method::MlpBaseline => {
                models::train_job(Job::MlpBaseline, cfg, train, data_hash, &outputs)?;
                let (model, meta) = models::load_mlp_baseline(&ckpt)?;
                let preds = par_map(threads, test, |_, r| pipeline::regressor_poses(&model, &meta.stats, &meta.run_config, r))?;
                BenchRow::from_poses(&name, &pipeline::pooled_pose_report(&preds, test)?)
            }
            Method::TransformerBaseline => {
                models::train_job(Job::TransformerBaseline, cfg, train, data_hash, &outputs)?;
                let (model, meta) = models::load_transformer_baseline(&ckpt)?;
                let preds = par_map(threads, test, |_, r| pipeline::regressor_poses(&model, &meta.stats, &meta.run_config, r))?;
                BenchRow::from_poses(&name, &pipeline::pooled_pose_report(&preds, test)?)
            }
            Method::Displacement(input) => {
                let c = RunConfig {
                    disp_input: input,
                    ..cfg.clone()
                };
                models::train_job(Job::Displacement, &c, train, data_hash, &outputs)?;
                let disp = models::load_disp(&ckpt)?;
                let preds: Vec<Vec<Vec3>> = par_map(threads, test, |_, r| {
                    pipeline::predicted_displacements(&disp.model, &disp.meta.stats, &disp.meta.run_config, r)
                })?;
                let frames = preds.iter().map(Vec::len).sum();
                BenchRow::from_root(&name, frames, pipeline::pooled_mrpe(&preds, test)?)
            }
            Method::DoubleIntegration => {
                let preds: Vec<Vec<Vec3>> = par_map(threads, test, |_, r| pipeline::double_integration(r))?;
                let frames = preds.iter().map(Vec::len).sum();
                BenchRow::from_root(&name, frames, pipeline::pooled_mrpe(&preds, test)?)
            }
        };
        progress(&row);
        rows.push(row);
    }
    Ok(BenchReport {
        kind: "benchmark-report".into(),
        version: 1,
        run_config: cfg.clone(),
        run_config_hash: cfg.hash(),
        inputs: serde_json::json!({
            "train_data_hash": data_hash,
            "train_recordings": train.len(),
            "test_recordings": test.len(),
            "test_data_hash": models::recordings_hash(test)?,
        }),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        assert_eq!(Method::Diffusion(ConditioningMode::PressureOnly).name(), "diffusion-pressure-only");
        assert_eq!(Method::Displacement(DispInput::ImuOnly).name(), "displacement-imu-only");
        assert_eq!(Method::full_grid(&RunConfig::default()).len(), 8);
    }

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<usize> = (0..11).collect();
        for threads in [1, 2, 4, 20] {
            let out = par_map(threads, &items, |i, &x| Ok(i * 100 + x)).unwrap();
            assert_eq!(out, (0..11).map(|i| i * 101).collect::<Vec<_>>());
        }
    }
}
