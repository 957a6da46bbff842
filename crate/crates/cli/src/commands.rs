//! The subcommands, as plain functions over paths and configs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use insole_motion::dataset::{read_recordings, write_recordings, Recording};
use insole_motion::synth::{generate, split_dataset, GaitKind, GaitStyle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{par_map, run_benchmark, Method};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::models::{self, file_hash, recordings_hash, sha256_hex};
use crate::pipeline::{self, EvalReport, MotionSection};

/// `kind[:key=value,...]` terms joined by `+`, e.g.
/// `walk:cadence=110,stride=0.7+jog`. Keys: cadence, stride, heading
/// (degrees), noise.
pub fn parse_style_spec(spec: &str) -> CliResult<Vec<GaitStyle>> {
    let usage = |m: String| CliError::Usage(m);
    spec.split('+')
        .map(|term| {
            let (kind, params) = term.split_once(':').unwrap_or((term, ""));
            let kind = GaitKind::from_str(kind.trim()).map_err(|_| {
                let names: Vec<String> = GaitKind::ALL.iter().map(ToString::to_string).collect();
                usage(format!("unknown gait style `{}` (expected one of {})", kind.trim(), names.join(", ")))
            })?;
            let mut style = GaitStyle::preset(kind);
            for kv in params.split(',').filter(|s| !s.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| usage(format!("style parameter `{kv}` is not key=value")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| usage(format!("style parameter `{kv}` needs a number")))?;
                match k.trim() {
                    "cadence" => style.cadence = v,
                    "stride" => style.stride = v,
                    "heading" => style.heading = v.to_radians(),
                    "noise" => style.noise_level = v,
                    other => return Err(usage(format!("unknown style parameter `{other}`"))),
                }
            }
            style.validate().map_err(|e| usage(e.to_string()))?;
            Ok(style)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub styles: Vec<GaitStyle>,
    pub duration: f64,
    pub seed: u64,
    /// Recordings to generate; styles cycle across them.
    pub sequences: usize,
    /// Overrides every style's noise level.
    pub noise: Option<f64>,
    /// Relative random spread of cadence and stride per recording.
    pub jitter: f64,
    pub random_heading: bool,
}

/// Style of recording `i` after the per-recording variations.
fn sequence_style(opts: &SynthOptions, i: usize) -> CliResult<GaitStyle> {
    let mut style = opts.styles[i % opts.styles.len()].clone();
    if let Some(n) = opts.noise {
        style.noise_level = n;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::train::mix(&[opts.seed, 0x57E1, i as u64]));
    if opts.jitter > 0.0 {
        style.cadence *= 1.0 + rng.random_range(-opts.jitter..=opts.jitter);
        style.stride *= 1.0 + rng.random_range(-opts.jitter..=opts.jitter);
    }
    if opts.random_heading {
        style.heading = rng.random_range(0.0..std::f64::consts::TAU);
    }
    style.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(style)
}

/// Generates the recordings, each carrying the run config and a hash of its
/// frame lines in its header's `source`.
pub fn synth(opts: &SynthOptions, cfg: &RunConfig) -> CliResult<Vec<Recording>> {
    if opts.styles.is_empty() || opts.sequences == 0 {
        return Err(CliError::Usage("synth needs at least one style and one sequence".into()));
    }
    if !(opts.jitter >= 0.0 && opts.jitter < 0.5) {
        return Err(CliError::Usage(format!("jitter {} outside [0, 0.5)", opts.jitter)));
    }
    if let Some(n) = opts.noise.filter(|n| !(*n >= 0.0)) {
        return Err(CliError::Usage(format!("noise {n} must be non-negative")));
    }
    let items: Vec<usize> = (0..opts.sequences).collect();
    par_map(cfg.threads, &items, |_, &i| {
        let style = sequence_style(opts, i)?;
        let seq = generate(&style, opts.duration, opts.seed.wrapping_add(i as u64))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut rec = seq.recording;
        let mut buf = Vec::new();
        rec.write_lines(&mut buf)?;
        let body = buf.iter().position(|&b| b == b'\n').map_or(&buf[..], |p| &buf[p + 1..]);
        let content_hash = sha256_hex(body);
        if let Some(serde_json::Value::Object(src)) = rec.header.source.as_mut() {
            src.insert("sequence".into(), i.into());
            src.insert("distance_m".into(), seq.distance.into());
            src.insert("run_config".into(), cfg.to_json());
            src.insert("run_config_hash".into(), cfg.hash().into());
            src.insert("content_hash".into(), content_hash.into());
        }
        Ok(rec)
    })
}

pub fn write_dataset(path: &Path, recordings: &[Recording]) -> CliResult<()> {
    write_recordings(path, recordings).map_err(|e| match e {
        insole_motion::MotionError::Io(io) => CliError::Data(format!("cannot write {}: {io}", path.display())),
        other => other.into(),
    })
}

pub fn read_dataset(path: &Path) -> CliResult<Vec<Recording>> {
    read_recordings(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reconstructs every recording of `data` and writes the motion file (and
/// the CSV joint export when requested).
pub fn reconstruct(
    data: &Path,
    pose_ckpt: &Path,
    disp_ckpt: &Path,
    out: &Path,
    csv: Option<&Path>,
    seed: u64,
    threads: usize,
) -> CliResult<Vec<MotionSection>> {
    let recordings = read_dataset(data)?;
    let pose = models::load_pose(pose_ckpt)?;
    let disp = models::load_disp(disp_ckpt)?;
    for r in &recordings {
        pipeline::check_skeletons(r, &pose, &disp)?;
    }
    let mut run_config = pose.meta.run_config.clone();
    run_config.seed = seed;
    let provenance = serde_json::json!({
        "input_hash": file_hash(data)?,
        "pose_checkpoint_hash": file_hash(pose_ckpt)?,
        "displacement_checkpoint_hash": file_hash(disp_ckpt)?,
        "displacement_run_config_hash": disp.meta.run_config_hash,
    });
    let sections = par_map(threads, &recordings, |i, r| {
        let rec = pipeline::reconstruct(r, &pose, &disp, pipeline::recording_seed(seed, i))?;
        let mut prov = provenance.clone();
        prov["recording"] = i.into();
        MotionSection::new(&r.header.skeleton, run_config.clone(), prov, rec)
    })?;
    pipeline::write_motion(out, &sections)?;
    if let Some(csv) = csv {
        pipeline::write_joint_csv(csv, &sections)?;
    }
    Ok(sections)
}

/// Text report path next to a JSON report.
pub fn text_path(json: &Path) -> PathBuf {
    json.with_extension("txt")
}

fn write_report<T: serde::Serialize>(out: &Path, report: &T, text: &str) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(out, json)?;
    std::fs::write(text_path(out), text)?;
    Ok(())
}

pub fn eval(pred: &Path, gt: &Path, cfg: &RunConfig, out: &Path) -> CliResult<EvalReport> {
    let predicted = pipeline::read_predictions(pred)?;
    let truth = read_dataset(gt)?;
    let (overall, recordings) = pipeline::evaluate(&predicted, &truth)?;
    let report = EvalReport {
        kind: "eval-report".into(),
        version: 1,
        run_config: cfg.clone(),
        run_config_hash: cfg.hash(),
        skeleton_hash: truth[0].header.skeleton.hash(),
        inputs: serde_json::json!({
            "prediction_hash": file_hash(pred)?,
            "ground_truth_hash": file_hash(gt)?,
        }),
        overall,
        recordings,
    };
    write_report(out, &report, &report.to_text())?;
    Ok(report)
}

/// Sequence-disjoint split of `cfg.train_data` (or explicit train and test
/// files) followed by the full benchmark grid.
pub fn grid(
    cfg: &RunConfig,
    train: Option<&Path>,
    test: Option<&Path>,
    out: &Path,
    workdir: &Path,
    mut progress: impl FnMut(&str),
) -> CliResult<pipeline::BenchReport> {
    let train_path = train
        .map(Path::to_path_buf)
        .or_else(|| cfg.train_data.clone())
        .ok_or_else(|| CliError::Usage("the grid needs training data (--train or train_data)".into()))?;
    let all = read_dataset(&train_path)?;
    let (train_set, test_set) = match test.map(Path::to_path_buf).or_else(|| cfg.test_data.clone()) {
        Some(t) => (all, read_dataset(&t)?),
        None => split_dataset(&all, cfg.train_fraction, cfg.seed)?,
    };
    let data_hash = recordings_hash(&train_set)?;
    let report = run_benchmark(cfg, &train_set, &test_set, &Method::full_grid(cfg), workdir, &data_hash, |row| {
        progress(&row.method)
    })?;
    write_report(out, &report, &report.to_text())?;
    Ok(report)
}
