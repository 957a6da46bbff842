//! Turning recordings into model-ready windows: world-frame acceleration,
//! windowing, body partitioning, rotation augmentation, standardization.

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::{
    AccelFrame, InsoleReading, MotionWindow, PoseFrame, Skeleton, Vec3, CHANNELS_PER_FOOT,
    INSOLE_CHANNELS,
};
use crate::dataset::Recording;
use crate::error::{MotionError, Result};
use crate::orientation::{integrate_orientation, to_world_acceleration, Rotation};

/// Smallest standard deviation kept by [`ChannelStats::fit`].
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldFrameOptions {
    /// Subtract 1 g along the skeleton's vertical axis after rotating.
    pub subtract_gravity: bool,
}

/// Integrates each insole's gyro from its initial orientation (the header's
/// override, else flat-foot identity) and rotates accelerations into the
/// world frame. Gyro stays in the sensor frame.
pub fn to_world_frame(rec: &Recording, opts: WorldFrameOptions) -> Result<Recording> {
    if rec.header.accel_frame == AccelFrame::World {
        return Ok(rec.clone());
    }
    let dt = 1.0 / rec.header.sample_rate;
    let (init_l, init_r) = rec
        .header
        .initial_orientation
        .as_ref()
        .map(|o| o.rotations())
        .unwrap_or((Rotation::identity(), Rotation::identity()));
    let gyro_l: Vec<Vec3> = rec.insoles.iter().map(|r| r.left.gyro).collect();
    let gyro_r: Vec<Vec3> = rec.insoles.iter().map(|r| r.right.gyro).collect();
    let orient_l = integrate_orientation(&gyro_l, init_l, dt)?;
    let orient_r = integrate_orientation(&gyro_r, init_r, dt)?;
    let up = rec.header.skeleton.vertical_axis;
    let mut out = rec.clone();
    out.header.accel_frame = AccelFrame::World;
    for ((r, ql), qr) in out.insoles.iter_mut().zip(&orient_l).zip(&orient_r) {
        r.left.accel = to_world_acceleration(r.left.accel, ql.to_rotation_matrix().matrix())?;
        r.right.accel = to_world_acceleration(r.right.accel, qr.to_rotation_matrix().matrix())?;
        if opts.subtract_gravity {
            for k in 0..3 {
                r.left.accel[k] -= up[k];
                r.right.accel[k] -= up[k];
            }
        }
        r.accel_frame = AccelFrame::World;
    }
    Ok(out)
}

/// Windows starting at `0, stride, 2*stride, ...`; empty when the recording is
/// shorter than `w`.
pub fn sliding_windows(rec: &Recording, w: usize, stride: usize) -> Result<Vec<MotionWindow>> {
    if stride == 0 || w == 0 {
        return Err(MotionError::Invalid("window length and stride must be positive".into()));
    }
    if !rec.has_poses() {
        return Err(MotionError::Invalid("windowing needs paired poses".into()));
    }
    let n = rec.len();
    if n < w {
        return Ok(Vec::new());
    }
    let count = (n - w) / stride + 1;
    (0..count)
        .map(|i| {
            let s = i * stride;
            MotionWindow::new(rec.poses[s..s + w].to_vec(), rec.insoles[s..s + w].to_vec())
        })
        .collect()
}

/// Left-leg, right-leg and remaining-body joint blocks, each row-major
/// `W x (joints * 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosePartition {
    pub frames: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub body: Vec<f64>,
}

pub fn partition_pose(window: &MotionWindow, skeleton: &Skeleton) -> Result<PosePartition> {
    skeleton.validate()?;
    let map = skeleton.partition_map();
    let dim = map.pose_dim();
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for (f, pose) in window.poses.iter().enumerate() {
        let flat = pose.flat_joints();
        if flat.len() != dim {
            return Err(MotionError::Skeleton(format!(
                "frame {f} has {} joints but the skeleton indexes {}",
                pose.joints.len(),
                dim / 3
            )));
        }
        for (part, cols) in parts.iter_mut().zip(map.parts()) {
            part.extend(cols.iter().map(|&c| flat[c]));
        }
    }
    let [left, right, body] = parts;
    Ok(PosePartition {
        frames: window.len(),
        left,
        right,
        body,
    })
}

/// Inverse of [`partition_pose`]: per-frame flattened joints.
pub fn merge_partition(parts: &PosePartition, skeleton: &Skeleton) -> Vec<Vec<f64>> {
    let map = skeleton.partition_map();
    let dim = map.pose_dim();
    (0..parts.frames)
        .map(|f| {
            let mut flat = vec![0.0; dim];
            for (src, cols) in [&parts.left, &parts.right, &parts.body].into_iter().zip(map.parts()) {
                let w = cols.len();
                for (k, &c) in cols.iter().enumerate() {
                    flat[c] = src[f * w + k];
                }
            }
            flat
        })
        .collect()
}

fn rotate(r: &Rotation3<f64>, v: &Vec3) -> Vec3 {
    let o = r * Vector3::from(*v);
    [o.x, o.y, o.z]
}

/// Rotates joints, displacements and world-frame accelerations by `angle`
/// radians about the skeleton's vertical axis. Pressure, force, CoP and the
/// sensor-frame gyro are untouched; sensor-frame accelerations too, since a
/// rotation of the world does not change what the sensor measures.
pub fn rotate_about_vertical(window: &MotionWindow, skeleton: &Skeleton, angle: f64) -> MotionWindow {
    let axis = Unit::new_normalize(Vector3::from(skeleton.vertical_axis));
    let r = Rotation3::from_axis_angle(&axis, angle);
    let poses = window
        .poses
        .iter()
        .map(|p| PoseFrame {
            displacement: rotate(&r, &p.displacement),
            joints: p.joints.iter().map(|j| rotate(&r, j)).collect(),
        })
        .collect();
    let insoles = window
        .insoles
        .iter()
        .map(|reading| {
            let mut out = reading.clone();
            if reading.accel_frame == AccelFrame::World {
                out.left.accel = rotate(&r, &reading.left.accel);
                out.right.accel = rotate(&r, &reading.right.accel);
            }
            out
        })
        .collect();
    MotionWindow { poses, insoles }
}

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fits on a row-major `rows x channels` matrix; std is clamped to
    /// [`STD_FLOOR`].
    pub fn fit(data: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(MotionError::Channels {
                expected: channels,
                got: data.len(),
            });
        }
        let rows = (data.len() / channels) as f64;
        let mut mean = vec![0.0; channels];
        for row in data.chunks(channels) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0; channels];
        for row in data.chunks(channels) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / rows).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    /// Scale-only statistics (mean pinned to zero, std = RMS), for signals
    /// whose sums must stay meaningful after scaling.
    pub fn fit_scale(data: &[f64], channels: usize) -> Result<Self> {
        let mut s = Self::fit(data, channels)?;
        let rows = (data.len() / channels) as f64;
        for c in 0..channels {
            let ms = data.iter().skip(c).step_by(channels).map(|v| v * v).sum::<f64>() / rows;
            s.std[c] = ms.sqrt().max(STD_FLOOR);
            s.mean[c] = 0.0;
        }
        Ok(s)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Statistics restricted to the listed channels.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            std: idx.iter().map(|&i| self.std[i]).collect(),
        }
    }

    fn check(&self, values: &[f64]) -> Result<()> {
        if !values.len().is_multiple_of(self.channels()) {
            return Err(MotionError::Channels {
                expected: self.channels(),
                got: values.len() % self.channels(),
            });
        }
        Ok(())
    }

    pub fn standardize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values)?;
        let c = self.channels();
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect())
    }

    pub fn destandardize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values)?;
        let c = self.channels();
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % c] + self.mean[i % c])
            .collect())
    }
}

/// Everything needed to map raw features to model space and back. Stored in
/// checkpoints so inference needs no training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    /// The 50 insole channels (world-frame acceleration).
    pub insole: ChannelStats,
    /// The 12 IMU channels `(a_L, r_L, a_R, r_R)`.
    pub imu: ChannelStats,
    /// Flattened root-relative joints.
    pub pose: ChannelStats,
    /// Root displacement, scale only.
    pub displacement: ChannelStats,
}

impl StandardizationStats {
    /// Fits all four blocks on training windows only.
    pub fn fit(windows: &[MotionWindow]) -> Result<Self> {
        if windows.is_empty() {
            return Err(MotionError::Invalid("cannot fit statistics on zero windows".into()));
        }
        let insoles: Vec<&InsoleReading> = windows.iter().flat_map(|w| &w.insoles).collect();
        let poses: Vec<&PoseFrame> = windows.iter().flat_map(|w| &w.poses).collect();
        let ins = insole_matrix(insoles.iter().copied());
        let insole = ChannelStats::fit(&ins, INSOLE_CHANNELS)?;
        let imu = insole.select(&crate::data::imu_channel_indices());
        let pose_dim = poses[0].joints.len() * 3;
        let pose = ChannelStats::fit(&pose_matrix(poses.iter().copied()), pose_dim)?;
        let displacement = ChannelStats::fit_scale(&displacement_matrix(poses.iter().copied()), 3)?;
        Ok(Self {
            insole,
            imu,
            pose,
            displacement,
        })
    }
}

impl StandardizationStats {
    /// Like [`StandardizationStats::fit`], but world-frame accelerations,
    /// joints and displacements get statistics that are invariant to
    /// rotations about `axis`, for training with rotation augmentation.
    pub fn fit_rotation_invariant(windows: &[MotionWindow], axis: Vec3) -> Result<Self> {
        let mut s = Self::fit(windows)?;
        let insoles: Vec<&InsoleReading> = windows.iter().flat_map(|w| &w.insoles).collect();
        let poses: Vec<&PoseFrame> = windows.iter().flat_map(|w| &w.poses).collect();
        if insoles.iter().all(|r| r.accel_frame == AccelFrame::World) {
            let accel = [crate::data::layout::ACCEL, CHANNELS_PER_FOOT + crate::data::layout::ACCEL];
            s.insole.make_rotation_invariant(&insole_matrix(insoles.iter().copied()), &accel, axis, false);
            s.imu = s.insole.select(&crate::data::imu_channel_indices());
        }
        let pose = pose_matrix(poses.iter().copied());
        let groups: Vec<usize> = (0..s.pose.channels()).step_by(3).collect();
        s.pose.make_rotation_invariant(&pose, &groups, axis, false);
        s.displacement
            .make_rotation_invariant(&displacement_matrix(poses.iter().copied()), &[0], axis, true);
        Ok(s)
    }
}

impl ChannelStats {
    /// Replaces the statistics of the xyz triples starting at `groups` with
    /// those the data would have under a uniformly random rotation about the
    /// unit `axis`: the mean keeps only its component along the axis, and the
    /// horizontal energy is shared evenly by the directions orthogonal to it.
    /// With `scale_only` the mean stays zero and std is the RMS.
    pub fn make_rotation_invariant(&mut self, data: &[f64], groups: &[usize], axis: Vec3, scale_only: bool) {
        let c = self.channels();
        let rows = (data.len() / c) as f64;
        for &g in groups {
            let (mut along, mut along_sq, mut horiz_sq) = (0.0, 0.0, 0.0);
            for row in data.chunks(c) {
                let v = &row[g..g + 3];
                let a: f64 = v.iter().zip(&axis).map(|(x, u)| x * u).sum();
                let norm_sq: f64 = v.iter().map(|x| x * x).sum();
                along += a;
                along_sq += a * a;
                horiz_sq += norm_sq - a * a;
            }
            let (along, along_sq, horiz_sq) = (along / rows, along_sq / rows, horiz_sq / rows);
            for k in 0..3 {
                let u2 = axis[k] * axis[k];
                let second = along_sq * u2 + horiz_sq * (1.0 - u2) / 2.0;
                let mean = if scale_only { 0.0 } else { along * axis[k] };
                self.mean[g + k] = mean;
                self.std[g + k] = (second - mean * mean).max(0.0).sqrt().max(STD_FLOOR);
            }
        }
    }
}

pub fn insole_matrix<'a>(readings: impl IntoIterator<Item = &'a InsoleReading>) -> Vec<f64> {
    readings.into_iter().flat_map(|r| r.flatten()).collect()
}

pub fn pose_matrix<'a>(poses: impl IntoIterator<Item = &'a PoseFrame>) -> Vec<f64> {
    poses.into_iter().flat_map(|p| p.flat_joints()).collect()
}

pub fn displacement_matrix<'a>(poses: impl IntoIterator<Item = &'a PoseFrame>) -> Vec<f64> {
    poses.into_iter().flat_map(|p| p.displacement).collect()
}

/// Selects `idx` columns from a row-major matrix with `cols` columns.
pub fn select_columns(data: &[f64], cols: usize, idx: &[usize]) -> Vec<f64> {
    data.chunks(cols)
        .flat_map(|row| idx.iter().map(move |&i| row[i]))
        .collect()
}

/// Swaps the two feet's channel blocks of a row-major `rows x 50` matrix.
pub fn mirror_feet(data: &[f64]) -> Vec<f64> {
    data.chunks(INSOLE_CHANNELS)
        .flat_map(|row| {
            row[CHANNELS_PER_FOOT..]
                .iter()
                .chain(&row[..CHANNELS_PER_FOOT])
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Global root position per frame: the running sum of displacements.
pub fn cumulative_root_position(displacements: &[Vec3]) -> Vec<Vec3> {
    let mut acc = [0.0; 3];
    displacements
        .iter()
        .map(|d| {
            for k in 0..3 {
                acc[k] += d[k];
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InsoleSide;
    use crate::dataset::RecordingHeader;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_window(rng: &mut ChaCha8Rng, skeleton: &Skeleton, w: usize, frame: AccelFrame) -> MotionWindow {
        let j = skeleton.joint_count() - 1;
        let mut v3 = |s: f64| [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)];
        let poses = (0..w)
            .map(|_| PoseFrame {
                displacement: v3(0.05),
                joints: (0..j).map(|_| v3(1.0)).collect(),
            })
            .collect();
        let insoles = (0..w)
            .map(|i| {
                let mut side = InsoleSide::zero();
                side.accel = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
                side.gyro = [rng.random_range(-50.0..50.0), 3.0, -2.0];
                side.pressures[2] = rng.random_range(0.0..5.0);
                side.total_force = 300.0;
                side.cop = [0.1, -0.2];
                InsoleReading {
                    timestamp: i as f64 / 30.0,
                    left: side.clone(),
                    right: side,
                    accel_frame: frame,
                }
            })
            .collect();
        MotionWindow { poses, insoles }
    }

    fn recording_of_len(n: usize) -> Recording {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let skel = Skeleton::default_22();
        let w = random_window(&mut rng, &skel, n, AccelFrame::Local);
        Recording {
            header: RecordingHeader::new(skel),
            insoles: w.insoles,
            poses: w.poses,
        }
    }

    /// Augments with `n >= 3` evenly spaced rotations, whose second moments
    /// about the axis are exactly those of the continuous uniform rotation.
    fn evenly_rotated(windows: &[MotionWindow], skel: &Skeleton, n: usize) -> Vec<MotionWindow> {
        (0..n)
            .flat_map(|k| {
                let a = k as f64 * std::f64::consts::TAU / n as f64;
                windows.iter().map(move |w| rotate_about_vertical(w, skel, a))
            })
            .collect()
    }

    fn assert_stats_close(a: &ChannelStats, b: &ChannelStats, what: &str) {
        for c in 0..a.channels() {
            assert!((a.mean[c] - b.mean[c]).abs() < 1e-9, "{what} mean {c}: {} vs {}", a.mean[c], b.mean[c]);
            assert!((a.std[c] - b.std[c]).abs() < 1e-9, "{what} std {c}: {} vs {}", a.std[c], b.std[c]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn rotation_invariant_stats_match_augmented_fit(seed in any::<u64>(), ax in -1.0f64..1.0, ay in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut skel = Skeleton::default_22();
            let n = (ax * ax + ay * ay + 1.0).sqrt();
            skel.vertical_axis = [ax / n, ay / n, 1.0 / n];
            let wins: Vec<MotionWindow> = (0..3).map(|_| random_window(&mut rng, &skel, 6, AccelFrame::World)).collect();
            let inv = StandardizationStats::fit_rotation_invariant(&wins, skel.vertical_axis).unwrap();
            let aug = StandardizationStats::fit(&evenly_rotated(&wins, &skel, 8)).unwrap();
            assert_stats_close(&inv.pose, &aug.pose, "pose");
            assert_stats_close(&inv.displacement, &aug.displacement, "displacement");
            assert_stats_close(&inv.insole, &aug.insole, "insole");
            assert_stats_close(&inv.imu, &aug.imu, "imu");
        }
    }

    #[test]
    fn rotation_invariant_stats_lift_constant_horizontal_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let skel = Skeleton::default_22();
        let mut win = random_window(&mut rng, &skel, 10, AccelFrame::World);
        for p in &mut win.poses {
            p.joints[0][0] = 0.0;
            p.joints[0][1] = 0.3;
        }
        let plain = StandardizationStats::fit(std::slice::from_ref(&win)).unwrap();
        assert_eq!(plain.pose.std[0], STD_FLOOR);
        let inv = StandardizationStats::fit_rotation_invariant(std::slice::from_ref(&win), skel.vertical_axis).unwrap();
        assert!((inv.pose.std[0] - 0.3 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(inv.pose.mean[0], 0.0);
        assert_eq!(inv.pose.mean[2], plain.pose.mean[2]);
    }

    #[test]
    fn window_counts() {
        assert_eq!(sliding_windows(&recording_of_len(100), 100, 1).unwrap().len(), 1);
        assert_eq!(sliding_windows(&recording_of_len(103), 100, 1).unwrap().len(), 4);
        assert_eq!(sliding_windows(&recording_of_len(99), 100, 1).unwrap().len(), 0);
        let w = sliding_windows(&recording_of_len(250), 100, 50).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[1].insoles[0].timestamp, 50.0 / 30.0);
    }

    #[test]
    fn partition_round_trip_and_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let skel = Skeleton::default_22();
        let win = random_window(&mut rng, &skel, 7, AccelFrame::World);
        let parts = partition_pose(&win, &skel).unwrap();
        assert_eq!(parts.left.len(), 7 * 12);
        assert_eq!(parts.body.len(), 7 * 13 * 3);
        let merged = merge_partition(&parts, &skel);
        for (m, p) in merged.iter().zip(&win.poses) {
            assert_eq!(m, &p.flat_joints());
        }
        let mut swapped = skel.clone();
        std::mem::swap(&mut swapped.left_leg, &mut swapped.right_leg);
        let sp = partition_pose(&win, &swapped).unwrap();
        assert_eq!(sp.left, parts.right);
        assert_eq!(sp.right, parts.left);
    }

    #[test]
    fn partition_rejects_wrong_joint_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let win = random_window(&mut rng, &Skeleton::with_joint_count(10).unwrap(), 3, AccelFrame::World);
        assert!(partition_pose(&win, &Skeleton::default_22()).is_err());
    }

    fn assert_windows_close(a: &MotionWindow, b: &MotionWindow, tol: f64) {
        for (p, q) in a.poses.iter().zip(&b.poses) {
            for k in 0..3 {
                assert!((p.displacement[k] - q.displacement[k]).abs() < tol);
            }
            for (x, y) in p.flat_joints().iter().zip(q.flat_joints()) {
                assert!((x - y).abs() < tol);
            }
        }
        for (r, s) in a.insoles.iter().zip(&b.insoles) {
            for (x, y) in r.flatten().iter().zip(s.flatten()) {
                assert!((x - y).abs() < tol);
            }
        }
    }

    #[test]
    fn rotation_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let skel = Skeleton::default_22();
        let win = random_window(&mut rng, &skel, 5, AccelFrame::World);
        assert_eq!(rotate_about_vertical(&win, &skel, 0.0), win);
        assert_windows_close(&rotate_about_vertical(&win, &skel, std::f64::consts::TAU), &win, 1e-6);
        let twice = rotate_about_vertical(
            &rotate_about_vertical(&win, &skel, std::f64::consts::PI),
            &skel,
            std::f64::consts::PI,
        );
        assert_windows_close(&twice, &win, 1e-6);
    }

    proptest! {
        #[test]
        fn rotation_composes_and_preserves_non_vector_channels(a in -7.0f64..7.0, b in -7.0f64..7.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let skel = Skeleton::default_22();
            let win = random_window(&mut rng, &skel, 4, AccelFrame::World);
            let ab = rotate_about_vertical(&rotate_about_vertical(&win, &skel, a), &skel, b);
            let direct = rotate_about_vertical(&win, &skel, a + b);
            assert_windows_close(&ab, &direct, 1e-6);
            for (r, s) in win.insoles.iter().zip(&ab.insoles) {
                for side in [(&r.left, &s.left), (&r.right, &s.right)] {
                    prop_assert_eq!(side.0.pressures, side.1.pressures);
                    prop_assert_eq!(side.0.total_force, side.1.total_force);
                    prop_assert_eq!(side.0.cop, side.1.cop);
                    prop_assert_eq!(side.0.gyro, side.1.gyro);
                    let n0: f64 = side.0.accel.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let n1: f64 = side.1.accel.iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((n0 - n1).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn standardize_round_trip(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..40).map(|_| rng.random_range(-100.0..100.0)).collect();
            let stats = ChannelStats::fit(&data, 4).unwrap();
            let back = stats.destandardize(&stats.standardize(&data).unwrap()).unwrap();
            for (x, y) in data.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn local_accel_is_not_rotated() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let skel = Skeleton::default_22();
        let win = random_window(&mut rng, &skel, 3, AccelFrame::Local);
        let rot = rotate_about_vertical(&win, &skel, 1.0);
        assert_eq!(rot.insoles, win.insoles);
    }

    #[test]
    fn standardization_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut data: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..9.0)).collect();
        for row in data.chunks_mut(3) {
            row[2] = 4.5; // constant channel
        }
        let stats = ChannelStats::fit(&data, 3).unwrap();
        assert_eq!(stats.std[2], STD_FLOOR);
        let z = stats.standardize(&data).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        for c in 0..2 {
            let col: Vec<f64> = z.iter().skip(c).step_by(3).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-3 && (s - 1.0).abs() < 1e-3);
        }
        let at_mean = stats.standardize(&stats.mean).unwrap();
        assert!(at_mean.iter().all(|&v| v == 0.0));
        assert!(matches!(stats.standardize(&[1.0, 2.0]), Err(MotionError::Channels { .. })));
    }

    #[test]
    fn cumulative_sum_cases() {
        assert_eq!(cumulative_root_position(&[[0.0; 3]; 4]), vec![[0.0; 3]; 4]);
        assert_eq!(
            cumulative_root_position(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d: Vec<Vec3> = (0..1000)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let got = cumulative_root_position(&d);
        let mut naive = Vec::new();
        for k in 0..d.len() {
            let mut s = [0.0; 3];
            for f in 0..=k {
                for c in 0..3 {
                    s[c] += d[f][c];
                }
            }
            naive.push(s);
        }
        assert_eq!(got, naive);
    }

    #[test]
    fn mirror_swaps_feet() {
        let row: Vec<f64> = (0..50).map(f64::from).collect();
        let m = mirror_feet(&row);
        assert_eq!(&m[..25], &row[25..]);
        assert_eq!(mirror_feet(&m), row);
    }
}
