//! Inference over whole recordings, the motion file format, and the
//! evaluation and benchmark reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use insole_motion::baselines::PoseRegressor;
use insole_motion::data::{PoseFrame, Skeleton, Vec3, FRAME_RATE, INSOLE_CHANNELS};
use insole_motion::dataset::Recording;
use insole_motion::denoiser::PoseDenoiser;
use insole_motion::diffusion::{sample_long, window_starts, DiffusionSchedule, SamplerConfig};
use insole_motion::displacement::{predict_sequence, DisplacementPredictor};
use insole_motion::eval::{double_integration_baseline, MetricReport, Stat};
use insole_motion::preprocess::{cumulative_root_position, insole_matrix, to_world_frame, StandardizationStats, WorldFrameOptions};
use insole_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::models::{sha256_hex, LoadedDisp, LoadedPose};
use crate::train::{mix, select_insole_columns};

pub const MOTION_VERSION: u32 = 1;

fn world(rec: &Recording, subtract_gravity: bool) -> CliResult<Recording> {
    Ok(to_world_frame(rec, WorldFrameOptions { subtract_gravity })?)
}

fn frames_of(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn to_vec3s(row: &[f64]) -> Vec<Vec3> {
    row.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Seed of recording `index` within a run seeded with `seed`.
pub fn recording_seed(seed: u64, index: usize) -> u64 {
    mix(&[seed, 0x2EC0, index as u64])
}

/// Standardized `n x 50` insole tensor of a world-frame recording.
fn insole_tensor(rec: &Recording, stats: &StandardizationStats) -> CliResult<(Vec<f64>, usize)> {
    let x = stats.insole.standardize(&insole_matrix(&rec.insoles))?;
    Ok((x, rec.len()))
}

/// Root-relative joints for every frame, by windowed reverse diffusion.
pub fn diffusion_poses(
    model: &PoseDenoiser<f32>,
    stats: &StandardizationStats,
    schedule: &DiffusionSchedule,
    cfg: &RunConfig,
    rec: &Recording,
    seed: u64,
) -> CliResult<Vec<Vec<Vec3>>> {
    let w = world(rec, cfg.subtract_gravity)?;
    let (x, n) = insole_tensor(&w, stats)?;
    let p = stats.pose.channels();
    let sampler = SamplerConfig {
        mode: cfg.prediction,
        overlap: cfg.overlap,
        seed,
    };
    let out = sample_long(
        model,
        schedule,
        &Tensor::<f32>::from_f64(&[n, INSOLE_CHANNELS], &x)?,
        cfg.window,
        p,
        &sampler,
    )?;
    let flat: Vec<f64> = out.data().iter().map(|&v| f64::from(v)).collect();
    let joints = stats.pose.destandardize(&flat)?;
    Ok(frames_of(&joints, p).iter().map(|r| to_vec3s(r)).collect())
}

/// Root displacement per frame from the displacement predictor.
pub fn predicted_displacements(
    model: &DisplacementPredictor<f32>,
    stats: &StandardizationStats,
    cfg: &RunConfig,
    rec: &Recording,
) -> CliResult<Vec<Vec3>> {
    let w = world(rec, cfg.subtract_gravity)?;
    let (x, n) = insole_tensor(&w, stats)?;
    let idx = model.config.input.channels();
    let xs = select_insole_columns(&x, &idx);
    let out = predict_sequence(model, &Tensor::<f32>::from_f64(&[n, idx.len()], &xs)?)?;
    let flat: Vec<f64> = out.data().iter().map(|&v| f64::from(v)).collect();
    let d = stats.displacement.destandardize(&flat)?;
    Ok(d.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Direct-regression poses: back-to-back windows, the last aligned to the
/// end, keeping only frames no earlier window produced.
pub fn regressor_poses<M: PoseRegressor<f32>>(
    model: &M,
    stats: &StandardizationStats,
    cfg: &RunConfig,
    rec: &Recording,
) -> CliResult<Vec<Vec<Vec3>>> {
    let w = world(rec, cfg.subtract_gravity)?;
    let (x, n) = insole_tensor(&w, stats)?;
    let p = stats.pose.channels();
    let win = cfg.window;
    let x = Tensor::<f32>::from_f64(&[n, INSOLE_CHANNELS], &x)?;
    let mut out = vec![0.0; n * p];
    let mut done = 0;
    for s in window_starts(n, win, 0)? {
        let y = model.predict(&x.slice_rows(s, win))?;
        let skip = done - s;
        for (o, v) in out[done * p..(s + win) * p].iter_mut().zip(&y.data()[skip * p..]) {
            *o = f64::from(*v);
        }
        done = s + win;
    }
    let joints = stats.pose.destandardize(&out)?;
    Ok(frames_of(&joints, p).iter().map(|r| to_vec3s(r)).collect())
}

/// Dead-reckoned displacements from the world-frame foot accelerations with
/// gravity removed.
pub fn double_integration(rec: &Recording) -> CliResult<Vec<Vec3>> {
    let w = world(rec, true)?;
    let accel: Vec<[Vec3; 2]> = w.insoles.iter().map(|r| [r.left.accel, r.right.accel]).collect();
    Ok(double_integration_baseline(&accel, 1.0 / w.header.sample_rate))
}

/// Everything `reconstruct` produces for one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// Predicted displacement and root-relative joints per frame.
    pub frames: Vec<PoseFrame>,
    /// World root position per frame.
    pub root: Vec<Vec3>,
}

/// Checks that a recording and both models agree on the skeleton.
pub fn check_skeletons(rec: &Recording, pose: &LoadedPose, disp: &LoadedDisp) -> CliResult<()> {
    let h = rec.header.skeleton.hash();
    for (what, other) in [("pose", &pose.meta.skeleton_hash), ("displacement", &disp.meta.skeleton_hash)] {
        if *other != h {
            return Err(CliError::Data(format!(
                "skeleton mismatch: input uses {h}, {what} checkpoint was trained on {other}"
            )));
        }
    }
    Ok(())
}

pub fn reconstruct(rec: &Recording, pose: &LoadedPose, disp: &LoadedDisp, seed: u64) -> CliResult<Reconstruction> {
    check_skeletons(rec, pose, disp)?;
    let pcfg = &pose.meta.run_config;
    let schedule = pcfg.schedule()?;
    let joints = diffusion_poses(&pose.model, &pose.meta.stats, &schedule, pcfg, rec, seed)?;
    let disp_seq = predicted_displacements(&disp.model, &disp.meta.stats, &disp.meta.run_config, rec)?;
    let root = cumulative_root_position(&disp_seq);
    let frames = joints
        .into_iter()
        .zip(&disp_seq)
        .map(|(j, d)| PoseFrame {
            displacement: *d,
            joints: j,
        })
        .collect();
    Ok(Reconstruction { frames, root })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionHeader {
    pub kind: String,
    pub version: u32,
    pub sample_rate: f64,
    pub skeleton: Skeleton,
    pub skeleton_hash: String,
    /// Run configuration of the pose model, with the sampling seed used.
    pub run_config: RunConfig,
    /// Input and checkpoint hashes.
    pub provenance: serde_json::Value,
    /// SHA-256 of this section's frame lines.
    pub content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct MotionLine {
    t: f64,
    d: Vec3,
    j: Vec<Vec3>,
    root: Vec3,
}

/// One recording's worth of reconstructed motion.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSection {
    pub header: MotionHeader,
    pub frames: Vec<PoseFrame>,
    pub root: Vec<Vec3>,
}

impl MotionSection {
    pub fn new(
        skeleton: &Skeleton,
        run_config: RunConfig,
        provenance: serde_json::Value,
        rec: Reconstruction,
    ) -> CliResult<Self> {
        let mut section = Self {
            header: MotionHeader {
                kind: "motion".into(),
                version: MOTION_VERSION,
                sample_rate: FRAME_RATE,
                skeleton: skeleton.clone(),
                skeleton_hash: skeleton.hash(),
                run_config,
                provenance,
                content_hash: String::new(),
            },
            frames: rec.frames,
            root: rec.root,
        };
        section.header.content_hash = sha256_hex(&section.frame_bytes()?);
        Ok(section)
    }

    fn frame_bytes(&self) -> CliResult<Vec<u8>> {
        let mut buf = Vec::new();
        for (i, (f, r)) in self.frames.iter().zip(&self.root).enumerate() {
            let line = MotionLine {
                t: i as f64 / self.header.sample_rate,
                d: f.displacement,
                j: f.joints.clone(),
                root: *r,
            };
            serde_json::to_writer(&mut buf, &line)?;
            buf.push(b'\n');
        }
        Ok(buf)
    }

    /// World-space position of every skeleton joint (root first) per frame.
    pub fn world_joints(&self) -> Vec<Vec<Vec3>> {
        self.frames
            .iter()
            .zip(&self.root)
            .map(|(f, r)| {
                std::iter::once(*r)
                    .chain(f.joints.iter().map(|j| [r[0] + j[0], r[1] + j[1], r[2] + j[2]]))
                    .collect()
            })
            .collect()
    }
}

pub fn write_motion(path: &Path, sections: &[MotionSection]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sections {
        serde_json::to_writer(&mut w, &s.header)?;
        w.write_all(b"\n")?;
        w.write_all(&s.frame_bytes()?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_motion(path: &Path) -> CliResult<Vec<MotionSection>> {
    let mut out: Vec<MotionSection> = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| CliError::Data(format!("{} line {}: {m}", path.display(), n + 1));
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if v.get("kind").is_some() {
            let header: MotionHeader = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
            if header.kind != "motion" || header.version != MOTION_VERSION {
                return Err(err(format!("not a version {MOTION_VERSION} motion header")));
            }
            out.push(MotionSection {
                header,
                frames: Vec::new(),
                root: Vec::new(),
            });
            continue;
        }
        let section = out.last_mut().ok_or_else(|| err("frame before any header".into()))?;
        let f: MotionLine = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
        section.frames.push(PoseFrame {
            displacement: f.d,
            joints: f.j,
        });
        section.root.push(f.root);
    }
    for s in &out {
        let hash = sha256_hex(&s.frame_bytes()?);
        if hash != s.header.content_hash {
            return Err(CliError::Data(format!("{}: motion content hash mismatch", path.display())));
        }
    }
    Ok(out)
}

/// Long-format world joint trajectories: `section,frame,t,joint,name,x,y,z`.
pub fn write_joint_csv(path: &Path, sections: &[MotionSection]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["section", "frame", "t", "joint", "name", "x", "y", "z"])?;
    for (s, sec) in sections.iter().enumerate() {
        let names = &sec.header.skeleton.names;
        for (f, joints) in sec.world_joints().iter().enumerate() {
            let t = f as f64 / sec.header.sample_rate;
            for (j, p) in joints.iter().enumerate() {
                w.write_record([
                    s.to_string(),
                    f.to_string(),
                    format!("{t:.6}"),
                    j.to_string(),
                    names[j].clone(),
                    format!("{:.6}", p[0]),
                    format!("{:.6}", p[1]),
                    format!("{:.6}", p[2]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// A predicted sequence to score: motion sections or poses from a dataset.
pub struct PredictedSequence {
    pub skeleton: Skeleton,
    pub frames: Vec<PoseFrame>,
}

/// Reads predictions from either a motion file or a dataset with poses.
pub fn read_predictions(path: &Path) -> CliResult<Vec<PredictedSequence>> {
    let first = BufReader::new(File::open(path)?)
        .lines()
        .find(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .transpose()?
        .ok_or_else(|| CliError::Data(format!("{} is empty", path.display())))?;
    let kind = serde_json::from_str::<serde_json::Value>(&first)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string));
    if kind.as_deref() == Some("motion") {
        return Ok(read_motion(path)?
            .into_iter()
            .map(|s| PredictedSequence {
                skeleton: s.header.skeleton,
                frames: s.frames,
            })
            .collect());
    }
    let recs = insole_motion::dataset::read_recordings(path)?;
    recs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if !r.has_poses() {
                return Err(CliError::Data(format!("{} recording {i} has no poses", path.display())));
            }
            Ok(PredictedSequence {
                skeleton: r.header.skeleton,
                frames: r.poses,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub version: u32,
    pub run_config: RunConfig,
    pub run_config_hash: String,
    pub skeleton_hash: String,
    pub inputs: serde_json::Value,
    pub overall: MetricReport,
    pub recordings: Vec<MetricReport>,
}

/// Scores predictions against ground truth recording by recording.
pub fn evaluate(pred: &[PredictedSequence], gt: &[Recording]) -> CliResult<(MetricReport, Vec<MetricReport>)> {
    if pred.len() != gt.len() {
        return Err(CliError::Data(format!(
            "{} predicted sequences for {} ground-truth recordings",
            pred.len(),
            gt.len()
        )));
    }
    let skeleton = gt
        .first()
        .map(|r| r.header.skeleton.clone())
        .ok_or_else(|| CliError::Data("no ground-truth recordings".into()))?;
    let mut per = Vec::new();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.skeleton.hash() != g.header.skeleton.hash() || g.header.skeleton != skeleton {
            return Err(CliError::Data(format!(
                "skeleton mismatch in recording {i}: prediction {}, ground truth {}",
                p.skeleton.hash(),
                g.header.skeleton.hash()
            )));
        }
        if !g.has_poses() {
            return Err(CliError::Data(format!("ground-truth recording {i} has no poses")));
        }
        if p.frames.len() != g.poses.len() {
            return Err(CliError::Data(format!(
                "length mismatch in recording {i}: {} predicted frames, {} ground-truth frames",
                p.frames.len(),
                g.poses.len()
            )));
        }
        per.push(MetricReport::evaluate(&p.frames, &g.poses, &skeleton)?);
    }
    let pairs: Vec<(&[PoseFrame], &[PoseFrame])> =
        pred.iter().zip(gt).map(|(p, g)| (p.frames.as_slice(), g.poses.as_slice())).collect();
    let overall = MetricReport::evaluate_all(&pairs, &skeleton)?;
    Ok((overall, per))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = self.overall.to_text("overall");
        for (i, r) in self.recordings.iter().enumerate() {
            s.push('\n');
            s.push_str(&r.to_text(&format!("recording {i}")));
        }
        s
    }
}

/// One method's scores in a benchmark; pose-free methods leave the pose
/// columns empty and vice versa.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub frames: usize,
    pub mpjpe_cm: Option<Stat>,
    pub mpjpe_legs_cm: Option<Stat>,
    pub mpjve_legs_cm_s: Option<Stat>,
    pub mrpe_m: Option<Stat>,
}

impl BenchRow {
    pub fn from_poses(method: &str, report: &MetricReport) -> Self {
        Self {
            method: method.into(),
            frames: report.frames,
            mpjpe_cm: Some(report.mpjpe_cm),
            mpjpe_legs_cm: Some(report.mpjpe_legs_cm),
            mpjve_legs_cm_s: Some(report.mpjve_legs_cm_s),
            mrpe_m: None,
        }
    }

    pub fn from_root(method: &str, frames: usize, mrpe: Stat) -> Self {
        Self {
            method: method.into(),
            frames,
            mrpe_m: Some(mrpe),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kind: String,
    pub version: u32,
    pub run_config: RunConfig,
    pub run_config_hash: String,
    pub inputs: serde_json::Value,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_text(&self) -> String {
        let cell = |s: &Option<Stat>| s.map_or_else(|| format!("{:>17}", "-"), |s| format!("{:>8.3} ({:>6.3})", s.mean, s.std));
        let mut out = format!(
            "{:<28} {:>8} {:>17} {:>17} {:>17} {:>17}\n",
            "method", "frames", "mpjpe_cm", "mpjpe_legs_cm", "mpjve_legs_cm_s", "mrpe_m"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>8} {} {} {} {}\n",
                r.method,
                r.frames,
                cell(&r.mpjpe_cm),
                cell(&r.mpjpe_legs_cm),
                cell(&r.mpjve_legs_cm_s),
                cell(&r.mrpe_m)
            ));
        }
        out
    }
}

/// MRPE pooled over recordings, each accumulated from its own start.
pub fn pooled_mrpe(pred: &[Vec<Vec3>], gt: &[Recording]) -> CliResult<Stat> {
    let mut all = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let gd: Vec<Vec3> = g.poses.iter().map(|f| f.displacement).collect();
        all.extend(insole_motion::eval::mrpe_frames(p, &gd)?);
    }
    Ok(Stat::of(&all))
}

/// Pose metrics pooled over recordings.
pub fn pooled_pose_report(pred: &[Vec<Vec<Vec3>>], gt: &[Recording]) -> CliResult<MetricReport> {
    let skeleton = &gt
        .first()
        .ok_or_else(|| CliError::Data("no test recordings".into()))?
        .header
        .skeleton;
    let frames: Vec<Vec<PoseFrame>> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            p.iter()
                .zip(&g.poses)
                .map(|(j, f)| PoseFrame {
                    displacement: f.displacement,
                    joints: j.clone(),
                })
                .collect()
        })
        .collect();
    let pairs: Vec<(&[PoseFrame], &[PoseFrame])> =
        frames.iter().zip(gt).map(|(p, g)| (p.as_slice(), g.poses.as_slice())).collect();
    Ok(MetricReport::evaluate_all(&pairs, skeleton)?)
}
