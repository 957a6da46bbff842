use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use insole_motion::conditioning::ConditioningMode;
use insole_motion::diffusion::PredictionMode;
use insole_motion::displacement::DispInput;
use insole_motion_cli::commands::{self, SynthOptions};
use insole_motion_cli::models::{self, file_hash, Job, Outputs};
use insole_motion_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "insole-motion", version, about = "Locomotion reconstruction from pressure insoles")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired insole/pose dataset.
    Synth(SynthArgs),
    /// Train the insole-conditioned pose diffusion model.
    TrainPose(TrainArgs),
    /// Train the root displacement predictor.
    TrainDisp(TrainArgs),
    /// Reconstruct world-space motion from insole recordings.
    Reconstruct(ReconstructArgs),
    /// Score predictions against ground truth, or run the benchmark grid.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Styles joined by `+`, each `kind[:key=value,...]`.
    #[arg(long)]
    style: String,
    /// Seconds per recording.
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    /// Sensor noise level applied to every style.
    #[arg(long)]
    noise: Option<f64>,
    /// Relative per-recording spread of cadence and stride.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Random heading per recording.
    #[arg(long)]
    random_heading: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames per model window.
    #[arg(long)]
    window: Option<usize>,
    /// Frames between the starts of consecutive training windows.
    #[arg(long)]
    window_stride: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    /// Number of diffusion steps T.
    #[arg(long)]
    diffusion_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch budget for the command's model.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Write the checkpoint every N steps (0: only at the end).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// full, pressure-only, imu-only or no-insole-mha.
    #[arg(long, value_parser = parse_conditioning)]
    conditioning: Option<ConditioningMode>,
    /// predict-clean or predict-prev.
    #[arg(long, value_parser = parse_prediction)]
    prediction: Option<PredictionMode>,
    /// Displacement inputs: imu-only, imu+pressure or pressure-only.
    #[arg(long, value_parser = parse_disp_input)]
    input: Option<DispInput>,
    /// Weight of the accumulated-displacement loss term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Turn off random rotation about the vertical axis.
    #[arg(long)]
    no_augmentation: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// CSV loss curve.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    disp: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// World joint trajectories as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Sampling seed; defaults to the pose model's run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted motion file or dataset.
    #[arg(long, required_unless_present = "grid")]
    pred: Option<PathBuf>,
    /// Ground-truth dataset.
    #[arg(long, required_unless_present = "grid")]
    gt: Option<PathBuf>,
    /// JSON report path; the text table goes next to it as `.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Train and score the whole ablation and baseline grid.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoints and loss curves of the grid runs.
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn serde_parse<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_conditioning(s: &str) -> Result<ConditioningMode, String> {
    serde_parse(s)
}

fn parse_prediction(s: &str) -> Result<PredictionMode, String> {
    serde_parse(s)
}

fn parse_disp_input(s: &str) -> Result<DispInput, String> {
    s.parse().map_err(|e: insole_motion::MotionError| e.to_string())
}

/// Config file, then flags, then `S2M_SEED`, then `--threads`.
fn build_config(o: &Overrides, job: Option<Job>, threads: Option<usize>) -> CliResult<RunConfig> {
    let mut c = RunConfig::load_or_default(o.config.as_deref())?;
    macro_rules! set {
        ($($field:ident <- $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag { c.$field = v; })*
        };
    }
    set!(
        seed <- o.seed,
        window <- o.window,
        window_stride <- o.window_stride,
        d_model <- o.d_model,
        ff_dim <- o.ff_dim,
        diffusion_steps <- o.diffusion_steps,
        batch_size <- o.batch_size,
        learning_rate <- o.lr,
        checkpoint_every <- o.checkpoint_every,
        conditioning <- o.conditioning,
        prediction <- o.prediction,
        disp_input <- o.input,
        lambda <- o.lambda,
    );
    if o.max_steps.is_some() {
        c.max_steps = o.max_steps;
    }
    if let Some(e) = o.epochs {
        match job {
            Some(Job::Displacement) => c.disp_epochs = e,
            _ => c.pose_epochs = e,
        }
    }
    if o.no_augmentation {
        c.rotation_augmentation = false;
    }
    c.apply_env()?;
    if let Some(t) = threads {
        c.threads = t;
    }
    c.validate()?;
    Ok(c)
}

fn train(job: Job, a: &TrainArgs, threads: Option<usize>) -> CliResult<()> {
    let cfg = build_config(&a.overrides, Some(job), threads)?;
    let recordings = commands::read_dataset(&a.data)?;
    let outputs = Outputs {
        checkpoint: a.out.clone(),
        loss_log: a.log.clone(),
        resume: a.resume.clone(),
    };
    let summary = models::train_job(job, &cfg, &recordings, &file_hash(&a.data)?, &outputs)?;
    eprintln!(
        "{}: {} steps, final loss {}",
        a.out.display(),
        summary.steps,
        summary.final_loss.map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cfg.apply_env()?;
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let opts = SynthOptions {
                styles: commands::parse_style_spec(&a.style)?,
                duration: a.duration,
                seed: cfg.seed,
                sequences: a.sequences,
                noise: a.noise,
                jitter: a.jitter,
                random_heading: a.random_heading,
            };
            let recs = commands::synth(&opts, &cfg)?;
            commands::write_dataset(&a.out, &recs)?;
            let frames: usize = recs.iter().map(Recording::len).sum();
            eprintln!("{}: {} recordings, {frames} frames", a.out.display(), recs.len());
        }
        Command::TrainPose(a) => train(Job::Pose, &a, threads)?,
        Command::TrainDisp(a) => train(Job::Displacement, &a, threads)?,
        Command::Reconstruct(a) => {
            let seed = match a.seed {
                Some(s) => s,
                None => {
                    let mut c = models::load_pose(&a.pose)?.meta.run_config;
                    c.apply_env()?;
                    c.seed
                }
            };
            let sections = commands::reconstruct(
                &a.data,
                &a.pose,
                &a.disp,
                &a.out,
                a.csv.as_deref(),
                seed,
                threads.unwrap_or(1),
            )?;
            let frames: usize = sections.iter().map(|s| s.frames.len()).sum();
            eprintln!("{}: {frames} frames", a.out.display());
        }
        Command::Eval(a) => {
            let cfg = build_config(&a.overrides, None, threads)?;
            if a.grid {
                let workdir = a.workdir.clone().unwrap_or_else(|| a.out.with_extension("runs"));
                let report = commands::grid(&cfg, a.train.as_deref(), a.test.as_deref(), &a.out, &workdir, |m| {
                    eprintln!("finished {m}")
                })?;
                print!("{}", report.to_text());
            } else {
                let (pred, gt) = (a.pred.as_deref().unwrap_or(Path::new("")), a.gt.as_deref().unwrap_or(Path::new("")));
                let report = commands::eval(pred, gt, &cfg, &a.out)?;
                print!("{}", report.to_text());
            }
        }
    }
    Ok(())
}

use insole_motion::dataset::Recording;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
