//! Pose and trajectory metrics, the double-integration baseline and report
//! assembly.
//!
//! Pose metrics compare root-relative joints only, so a wrong root trajectory
//! never leaks into MPJPE; root motion is judged separately by MRPE. Standard
//! deviations are taken over frames.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{PoseFrame, Skeleton, Vec3, FRAME_RATE};
use crate::error::{MotionError, Result};
use crate::preprocess::cumulative_root_position;
use crate::synth::GRAVITY;

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean and standard deviation of a per-frame error series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

fn check_pair(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], subset: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(MotionError::Invalid(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if subset.is_empty() {
        return Err(MotionError::Invalid("empty joint subset".into()));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || subset.iter().any(|&j| j >= p.len()) {
            return Err(MotionError::Invalid(format!(
                "joint count mismatch or subset out of range ({} vs {} joints)",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Per-frame mean joint distance over `subset`, in centimeters.
pub fn mpjpe_frames(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], subset: &[usize]) -> Result<Vec<f64>> {
    check_pair(pred, gt, subset)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| 100.0 * subset.iter().map(|&j| dist(&p[j], &g[j])).sum::<f64>() / subset.len() as f64)
        .collect())
}

/// Mean per-joint position error in centimeters.
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], subset: &[usize]) -> Result<f64> {
    Ok(Stat::of(&mpjpe_frames(pred, gt, subset)?).mean)
}

/// Per-frame velocity error (forward differences over `dt`) in cm/s; one
/// value per consecutive frame pair.
pub fn mpjve_frames(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], subset: &[usize], dt: f64) -> Result<Vec<f64>> {
    check_pair(pred, gt, subset)?;
    if pred.len() < 2 {
        return Err(MotionError::Invalid("velocity error needs at least 2 frames".into()));
    }
    Ok((1..pred.len())
        .map(|k| {
            let s: f64 = subset
                .iter()
                .map(|&j| {
                    let vel = |x: &[Vec<Vec3>]| -> Vec3 {
                        [0, 1, 2].map(|c| (x[k][j][c] - x[k - 1][j][c]) / dt)
                    };
                    dist(&vel(pred), &vel(gt))
                })
                .sum();
            100.0 * s / subset.len() as f64
        })
        .collect())
}

/// Mean per-joint velocity error over the leg joints, cm/s.
pub fn mpjve_legs(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], skeleton: &Skeleton, dt: f64) -> Result<f64> {
    Ok(Stat::of(&mpjve_frames(pred, gt, &skeleton.leg_pose_indices(), dt)?).mean)
}

/// Per-frame root position error in meters after integrating both
/// displacement sequences.
pub fn mrpe_frames(pred_disp: &[Vec3], gt_disp: &[Vec3]) -> Result<Vec<f64>> {
    if pred_disp.len() != gt_disp.len() {
        return Err(MotionError::Invalid(format!(
            "prediction has {} displacements, ground truth {}",
            pred_disp.len(),
            gt_disp.len()
        )));
    }
    let p = cumulative_root_position(pred_disp);
    let g = cumulative_root_position(gt_disp);
    Ok(p.iter().zip(&g).map(|(a, b)| dist(a, b)).collect())
}

/// Mean root position error in meters.
pub fn mrpe(pred_disp: &[Vec3], gt_disp: &[Vec3]) -> Result<f64> {
    Ok(Stat::of(&mrpe_frames(pred_disp, gt_disp)?).mean)
}

/// Dead reckoning from world-frame, gravity-free foot accelerations in g:
/// each foot's velocity starts at rest and integrates `a * dt`, its position
/// delta is `v * dt`, and the two feet's deltas are averaged per frame.
pub fn double_integration_baseline(accel_world_g: &[[Vec3; 2]], dt: f64) -> Vec<Vec3> {
    let mut vel = [[0.0; 3]; 2];
    accel_world_g
        .iter()
        .map(|feet| {
            let mut delta = [0.0; 3];
            for (v, a) in vel.iter_mut().zip(feet) {
                for c in 0..3 {
                    v[c] += a[c] * GRAVITY * dt;
                    delta[c] += v[c] * dt / 2.0;
                }
            }
            delta
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub drift_m: f64,
    pub drift_percent: f64,
    pub distance_m: f64,
}

/// End-point drift of a reconstructed root path against the true final
/// position, also as a percentage of the distance traveled.
pub fn drift_run(pred_path: &[Vec3], gt_final: Vec3, total_distance: f64) -> Result<Drift> {
    if !(total_distance > 0.0) {
        return Err(MotionError::Invalid(format!("total distance must be positive, got {total_distance}")));
    }
    let last = pred_path
        .last()
        .ok_or_else(|| MotionError::Invalid("empty trajectory".into()))?;
    let drift_m = dist(last, &gt_final);
    Ok(Drift {
        drift_m,
        drift_percent: drift_m / total_distance * 100.0,
        distance_m: total_distance,
    })
}

/// Every metric for one prediction. `None` fields were not measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    pub mpjpe_cm: Stat,
    pub mpjpe_legs_cm: Stat,
    pub mpjve_legs_cm_s: Stat,
    pub mrpe_m: Option<Stat>,
    pub drift: Option<Drift>,
}

fn joints(frames: &[PoseFrame]) -> Vec<Vec<Vec3>> {
    frames.iter().map(|f| f.joints.clone()).collect()
}

impl MetricReport {
    /// Pose metrics plus MRPE from the frames' displacements, and drift when
    /// the ground-truth root travels.
    pub fn evaluate(pred: &[PoseFrame], gt: &[PoseFrame], skeleton: &Skeleton) -> Result<Self> {
        Self::evaluate_all(&[(pred, gt)], skeleton)
    }

    /// Pools the per-frame series of several sequences. MRPE accumulates each
    /// sequence's root from its own start; drift is only reported for a
    /// single sequence.
    pub fn evaluate_all(pairs: &[(&[PoseFrame], &[PoseFrame])], skeleton: &Skeleton) -> Result<Self> {
        if pairs.is_empty() {
            return Err(MotionError::Invalid("nothing to evaluate".into()));
        }
        let all: Vec<usize> = (0..skeleton.joint_count() - 1).collect();
        let legs = skeleton.leg_pose_indices();
        let dt = 1.0 / FRAME_RATE;
        let (mut full, mut leg, mut vel, mut root) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut frames = 0;
        for (pred, gt) in pairs {
            let (p, g) = (joints(pred), joints(gt));
            if let Some(f) = p.iter().chain(&g).find(|f| f.len() != skeleton.joint_count() - 1) {
                return Err(MotionError::Skeleton(format!(
                    "poses have {} joints but the skeleton has {}",
                    f.len(),
                    skeleton.joint_count() - 1
                )));
            }
            let pd: Vec<Vec3> = pred.iter().map(|f| f.displacement).collect();
            let gd: Vec<Vec3> = gt.iter().map(|f| f.displacement).collect();
            full.extend(mpjpe_frames(&p, &g, &all)?);
            leg.extend(mpjpe_frames(&p, &g, &legs)?);
            vel.extend(mpjve_frames(&p, &g, &legs, dt)?);
            root.extend(mrpe_frames(&pd, &gd)?);
            frames += pred.len();
        }
        let drift = match pairs {
            [(pred, gt)] => {
                let gd: Vec<Vec3> = gt.iter().map(|f| f.displacement).collect();
                let pd: Vec<Vec3> = pred.iter().map(|f| f.displacement).collect();
                let distance: f64 = gd.iter().map(|d| dist(d, &[0.0; 3])).sum();
                let gt_final = cumulative_root_position(&gd).last().copied().unwrap_or([0.0; 3]);
                if distance > 0.0 {
                    Some(drift_run(&cumulative_root_position(&pd), gt_final, distance)?)
                } else {
                    None
                }
            }
            _ => None,
        };
        Ok(Self {
            frames,
            mpjpe_cm: Stat::of(&full),
            mpjpe_legs_cm: Stat::of(&leg),
            mpjve_legs_cm_s: Stat::of(&vel),
            mrpe_m: Some(Stat::of(&root)),
            drift,
        })
    }

    /// Fixed-width text table, one metric per row.
    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title} ({} frames, std over frames)", self.frames);
        let _ = writeln!(s, "{:<18} {:>12} {:>12}", "metric", "mean", "std");
        let mut row = |name: &str, st: &Stat| {
            let _ = writeln!(s, "{name:<18} {:>12.4} {:>12.4}", st.mean, st.std);
        };
        row("mpjpe_cm", &self.mpjpe_cm);
        row("mpjpe_legs_cm", &self.mpjpe_legs_cm);
        row("mpjve_legs_cm_s", &self.mpjve_legs_cm_s);
        if let Some(m) = &self.mrpe_m {
            row("mrpe_m", m);
        }
        if let Some(d) = &self.drift {
            let _ = writeln!(s, "{:<18} {:>12.4}", "drift_m", d.drift_m);
            let _ = writeln!(s, "{:<18} {:>12.4}", "drift_percent", d.drift_percent);
        }
        s
    }

    pub fn is_valid(&self) -> bool {
        let ok = |s: &Stat| s.mean.is_finite() && s.std.is_finite() && s.mean >= 0.0 && s.std >= 0.0;
        ok(&self.mpjpe_cm)
            && ok(&self.mpjpe_legs_cm)
            && ok(&self.mpjve_legs_cm_s)
            && self.mrpe_m.as_ref().is_none_or(ok)
            && self
                .drift
                .as_ref()
                .is_none_or(|d| d.drift_m >= 0.0 && d.drift_percent.is_finite() && d.drift_percent >= 0.0)
    }
}
