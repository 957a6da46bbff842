//! Procedural paired pose + insole sequences.
//!
//! Kinematics first: the pelvis moves at `stride * cadence / 60` with a
//! vertical bob, each foot alternates between a pinned stance and an eased
//! swing arc, knees come from two-link inverse kinematics and the arms swing
//! against the legs. The insoles are then derived from that motion: a
//! pressure kernel that rolls from heel to toe during stance, a vertical
//! force that is zero in swing and averages to body weight over a cycle, and
//! IMU readings obtained by differentiating the foot trajectory.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    AccelFrame, InsoleReading, InsoleSide, PoseFrame, Skeleton, Vec3, FRAME_RATE, SENSORS_PER_FOOT,
};
use crate::dataset::{InitialOrientation, Recording, RecordingHeader};
use crate::error::{MotionError, Result};
use crate::orientation::{relative_rate, Rotation};
use crate::sensor_layout::SensorLayout;

pub const GRAVITY: f64 = 9.81;
/// 70 kg.
pub const BODY_WEIGHT_N: f64 = 686.0;
/// Shortest sequence the generator produces, one default window.
pub const MIN_DURATION_S: f64 = 100.0 / FRAME_RATE;

const THIGH: f64 = 0.42;
const SHIN: f64 = 0.40;
const ANKLE_HEIGHT: f64 = 0.08;
const HIP_DROP: f64 = 0.05;
const HIP_HALF_WIDTH: f64 = 0.09;
const CELL_AREA_CM2: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitKind {
    Walk,
    Jog,
    Tiptoe,
    Squat,
    Sidestep,
    Idle,
}

impl GaitKind {
    pub const ALL: [GaitKind; 6] = [
        Self::Walk,
        Self::Jog,
        Self::Tiptoe,
        Self::Squat,
        Self::Sidestep,
        Self::Idle,
    ];

    fn is_locomotion(self) -> bool {
        matches!(self, Self::Walk | Self::Jog | Self::Tiptoe | Self::Sidestep)
    }

    /// Fraction of a gait cycle each foot spends on the ground.
    fn duty_factor(self) -> f64 {
        match self {
            Self::Jog => 0.35,
            Self::Tiptoe => 0.55,
            _ => 0.6,
        }
    }
}

impl fmt::Display for GaitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Walk => "walk",
            Self::Jog => "jog",
            Self::Tiptoe => "tiptoe",
            Self::Squat => "squat",
            Self::Sidestep => "sidestep",
            Self::Idle => "idle",
        };
        f.write_str(s)
    }
}

impl FromStr for GaitKind {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| MotionError::Invalid(format!("unknown gait style `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitStyle {
    pub kind: GaitKind,
    /// Steps per minute (squats per minute for `squat`).
    pub cadence: f64,
    /// Meters per step.
    pub stride: f64,
    /// Facing direction in radians about the vertical axis.
    pub heading: f64,
    /// Standard deviation scale of sensor noise; 0 for clean data.
    pub noise_level: f64,
}

impl GaitStyle {
    pub fn preset(kind: GaitKind) -> Self {
        let (cadence, stride) = match kind {
            GaitKind::Walk => (100.0, 0.6),
            GaitKind::Jog => (160.0, 0.9),
            GaitKind::Tiptoe => (110.0, 0.35),
            GaitKind::Squat => (20.0, 0.0),
            GaitKind::Sidestep => (90.0, 0.3),
            GaitKind::Idle => (0.0, 0.0),
        };
        Self {
            kind,
            cadence,
            stride,
            heading: 0.0,
            noise_level: 0.0,
        }
    }

    /// Mean speed of travel, m/s.
    pub fn speed(&self) -> f64 {
        if self.kind.is_locomotion() {
            self.stride * self.cadence / 60.0
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cadence, self.stride, self.heading, self.noise_level]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(MotionError::Invalid("gait parameters must be finite".into()));
        }
        if self.kind != GaitKind::Idle && self.cadence <= 0.0 {
            return Err(MotionError::Invalid(format!("{} needs a positive cadence", self.kind)));
        }
        if self.stride < 0.0 || self.noise_level < 0.0 {
            return Err(MotionError::Invalid("stride and noise level must be non-negative".into()));
        }
        if self.kind.is_locomotion() && self.stride * self.kind.duty_factor() > 0.6 {
            return Err(MotionError::Invalid(format!(
                "stride {} m is out of reach for {}",
                self.stride, self.kind
            )));
        }
        Ok(())
    }
}

/// A generated recording plus ground truth the file format does not carry.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub recording: Recording,
    pub style: GaitStyle,
    pub seed: u64,
    /// World root position per frame.
    pub root: Vec<Vec3>,
    /// World position of each foot IMU per frame, `[left, right]`.
    pub foot_imu: Vec<[Vec3; 2]>,
    /// Total distance traveled by the root, meters.
    pub distance: f64,
}

type V3 = Vector3<f64>;

fn arr(v: &V3) -> Vec3 {
    [v.x, v.y, v.z]
}

struct Gait {
    style: GaitStyle,
    duty: f64,
    cycle: f64,
    phase0: f64,
    bob: f64,
    arm_amp: f64,
    foot_half_width: f64,
    root_height: f64,
    lean: f64,
    facing: Rotation3<f64>,
    velocity: V3,
    lateral: V3,
    up: V3,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

struct FootState {
    ankle: V3,
    orientation: Rotation,
    /// Stance progress in `[0, 1)`, `None` in swing.
    stance: Option<f64>,
}

struct BodyState {
    /// All 22 joints, root first, skeleton order.
    joints: Vec<V3>,
    feet: [FootState; 2],
    imu: [V3; 2],
}

fn ease(u: f64) -> f64 {
    (1.0 - (PI * u).cos()) / 2.0
}

impl Gait {
    fn new(style: &GaitStyle, rng: &mut ChaCha8Rng) -> Self {
        let kind = style.kind;
        let duty = kind.duty_factor();
        let cycle = if style.cadence > 0.0 { 120.0 / style.cadence } else { 1.0 };
        let facing = Rotation3::from_axis_angle(&V3::z_axis(), style.heading);
        let fwd = facing * V3::x();
        let lateral = facing * V3::y();
        let dir = if kind == GaitKind::Sidestep { lateral } else { fwd };
        let half_span = if kind.is_locomotion() { style.stride * duty } else { 0.0 };
        let ankle_h = ANKLE_HEIGHT + if kind == GaitKind::Tiptoe { 0.08 } else { 0.0 };
        let reach = 0.805;
        let root_height = ankle_h + HIP_DROP + (reach * reach - half_span * half_span).sqrt();
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(0.85..1.15);
        let bob = match kind {
            GaitKind::Jog => 0.035,
            GaitKind::Walk | GaitKind::Tiptoe | GaitKind::Sidestep => 0.02,
            _ => 0.0,
        } * jitter(rng);
        let arm_amp = match kind {
            GaitKind::Jog => 0.6,
            GaitKind::Walk | GaitKind::Tiptoe => 0.35,
            GaitKind::Sidestep => 0.1,
            _ => 0.0,
        } * jitter(rng);
        Self {
            duty,
            cycle,
            phase0: rng.random_range(0.0..1.0),
            bob,
            arm_amp,
            foot_half_width: 0.1 * jitter(rng),
            root_height: root_height - bob,
            lean: if kind == GaitKind::Jog { 0.12 } else { 0.02 },
            facing,
            velocity: dir * style.speed(),
            lateral,
            up: V3::z(),
            style: style.clone(),
        }
    }

    fn phase_offset(&self, side: Side) -> f64 {
        self.phase0 + if side == Side::Right { 0.5 } else { 0.0 }
    }

    /// Root position without the vertical and lateral oscillation.
    fn root_track(&self, t: f64) -> V3 {
        self.velocity * t
    }

    fn root(&self, t: f64) -> V3 {
        let mut p = self.root_track(t) + self.up * self.root_height;
        match self.style.kind {
            GaitKind::Squat => p -= self.up * 0.3 * self.squat_depth_fraction(t),
            GaitKind::Idle => {}
            _ => {
                let a = 2.0 * PI * (t / self.cycle + self.phase_offset(Side::Left) - self.duty / 2.0);
                p += self.up * self.bob * (2.0 * a).cos();
                p += self.lateral * 0.015 * a.cos();
            }
        }
        p
    }

    fn squat_depth_fraction(&self, t: f64) -> f64 {
        if self.style.kind != GaitKind::Squat {
            return 0.0;
        }
        (1.0 - (2.0 * PI * t / (self.cycle / 2.0)).cos()) / 2.0
    }

    fn foot_home(&self, side: Side) -> V3 {
        self.lateral * side.sign() * self.foot_half_width
    }

    fn foot(&self, side: Side, t: f64) -> FootState {
        let kind = self.style.kind;
        let ankle_h = ANKLE_HEIGHT + if kind == GaitKind::Tiptoe { 0.08 } else { 0.0 };
        if !kind.is_locomotion() {
            let ankle = self.foot_home(side) + self.up * ANKLE_HEIGHT;
            return FootState {
                ankle,
                orientation: Rotation::from_rotation_matrix(&self.facing),
                stance: Some(0.5),
            };
        }
        let x = t / self.cycle + self.phase_offset(side);
        let n = x.floor();
        let phi = x - n;
        let plant = |k: f64| -> V3 {
            let t_mid = (k + self.duty / 2.0 - self.phase_offset(side)) * self.cycle;
            self.root_track(t_mid) + self.foot_home(side)
        };
        let (hs, to) = match kind {
            GaitKind::Jog => (0.12, 0.45),
            GaitKind::Tiptoe => (-0.5, -0.5),
            GaitKind::Sidestep => (0.05, 0.1),
            _ => (0.25, 0.35),
        };
        let (pos, lift, pitch, stance) = if phi < self.duty {
            let u = phi / self.duty;
            let pitch = if kind == GaitKind::Tiptoe {
                -0.5
            } else {
                hs * (1.0 - u) * (1.0 - u) - to * u * u
            };
            (plant(n), 0.0, pitch, Some(u))
        } else {
            let u = (phi - self.duty) / (1.0 - self.duty);
            let s = ease(u);
            let pos = plant(n) + (plant(n + 1.0) - plant(n)) * s;
            let clearance = if kind == GaitKind::Jog { 0.12 } else { 0.07 };
            let pitch = -to + (hs + to) * s;
            (pos, clearance * (PI * u).sin(), pitch, None)
        };
        let ankle = pos + self.up * (ankle_h + lift);
        let pitch_rot = Rotation3::from_axis_angle(&V3::y_axis(), -pitch);
        FootState {
            ankle,
            orientation: Rotation::from_rotation_matrix(&(self.facing * pitch_rot)),
            stance,
        }
    }

    fn knee(hip: &V3, ankle: &mut V3, fwd: &V3) -> V3 {
        let reach = THIGH + SHIN - 1e-3;
        let mut dvec = *ankle - hip;
        let mut d = dvec.norm();
        if d > reach {
            dvec *= reach / d;
            d = reach;
            *ankle = hip + dvec;
        }
        let u = dvec / d;
        let perp = (fwd - u * fwd.dot(&u)).normalize();
        let a = (THIGH * THIGH - SHIN * SHIN + d * d) / (2.0 * d);
        let b = (THIGH * THIGH - a * a).max(0.0).sqrt();
        hip + u * a + perp * b
    }

    fn body(&self, t: f64) -> BodyState {
        let root = self.root(t);
        let fwd = self.facing * V3::x();
        let local = |v: V3| root + self.facing * v;
        let lean = |z: f64| V3::new(self.lean * z, 0.0, z);
        let mut feet = [self.foot(Side::Left, t), self.foot(Side::Right, t)];
        let mut joints = vec![root];
        let mut imu = [V3::zeros(); 2];
        for (i, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let hip = local(V3::new(0.0, side.sign() * HIP_HALF_WIDTH, -HIP_DROP));
            let foot = &mut feet[i];
            let knee = Self::knee(&hip, &mut foot.ankle, &fwd);
            let toe = foot.ankle + foot.orientation * V3::new(0.15, 0.0, -0.06);
            imu[i] = foot.ankle + foot.orientation * V3::new(0.05, 0.0, -0.05);
            joints.extend([hip, knee, foot.ankle, toe]);
        }
        for z in [0.10, 0.22, 0.35, 0.47, 0.57] {
            joints.push(local(lean(z)));
        }
        let squat = self.squat_depth_fraction(t);
        for side in [Side::Left, Side::Right] {
            let other = if side == Side::Left { Side::Right } else { Side::Left };
            let swing = if self.style.kind.is_locomotion() {
                self.arm_amp * (2.0 * PI * (t / self.cycle + self.phase_offset(other))).cos()
            } else {
                1.2 * squat
            };
            let flex = if self.style.kind == GaitKind::Jog { 1.3 } else { 0.25 };
            let y = side.sign();
            let collar = local(lean(0.42) + V3::new(0.0, 0.06 * y, 0.0));
            let shoulder = local(lean(0.42) + V3::new(0.0, 0.18 * y, 0.0));
            let elbow = shoulder + self.facing * V3::new(swing.sin(), 0.0, -swing.cos()) * 0.28;
            let fore = swing + flex;
            let wrist = elbow + self.facing * V3::new(fore.sin(), 0.0, -fore.cos()) * 0.26;
            joints.extend([collar, shoulder, elbow, wrist]);
        }
        BodyState { joints, feet, imu }
    }
}

/// Accelerometer (g, local frame, gravity included) and gyroscope
/// (degree/s, local frame) readings for samples `1..n-1` of a trajectory.
/// Acceleration is the second central difference; angular rate is the
/// relative rotation from the previous sample.
pub fn imu_from_trajectory(
    positions: &[Vec3],
    orientations: &[Rotation],
    dt: f64,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let n = positions.len();
    if n < 3 || orientations.len() != n {
        return Err(MotionError::Invalid(format!(
            "IMU synthesis needs at least 3 matching samples, got {n} positions and {} orientations",
            orientations.len()
        )));
    }
    let mut accel = Vec::with_capacity(n - 2);
    let mut gyro = Vec::with_capacity(n - 2);
    for k in 1..n - 1 {
        let p = |i: usize| V3::from(positions[i]);
        let a_world = (p(k + 1) - p(k) * 2.0 + p(k - 1)) / (dt * dt * GRAVITY) + V3::z();
        accel.push(arr(&(orientations[k].inverse() * a_world)));
        gyro.push(relative_rate(&orientations[k - 1], &orientations[k], dt));
    }
    Ok((accel, gyro))
}

/// Pressure cells and center of pressure for a vertical load `force` whose
/// center sits at `(cx, cy)` on the insole.
fn pressure_pattern(layout: &SensorLayout, force: f64, cx: f64, cy: f64) -> [f64; SENSORS_PER_FOOT] {
    let mut w = [0.0; SENSORS_PER_FOOT];
    for e in &layout.entries {
        let dx = (e.x - cx) / 0.14;
        let dy = (e.y - cy) / 0.2;
        w[e.index] = (-(dx * dx + dy * dy) / 2.0).exp();
    }
    let total: f64 = w.iter().sum();
    // readings are in quarter N/cm²
    w.map(|v| 4.0 * force * v / total / CELL_AREA_CM2)
}

fn center_of_pressure(layout: &SensorLayout, p: &[f64; SENSORS_PER_FOOT]) -> [f64; 2] {
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return [0.0, 0.0];
    }
    let mut c = [0.0, 0.0];
    for e in &layout.entries {
        c[0] += p[e.index] * e.x / total;
        c[1] += p[e.index] * e.y / total;
    }
    c.map(|v| v.clamp(-0.5, 0.5))
}

/// Generates `duration` seconds at 30 Hz. Deterministic in `seed`.
pub fn generate(style: &GaitStyle, duration: f64, seed: u64) -> Result<SyntheticSequence> {
    style.validate()?;
    if !(duration >= MIN_DURATION_S) || !duration.is_finite() {
        return Err(MotionError::Invalid(format!(
            "duration {duration} s is below the minimum of {MIN_DURATION_S:.3} s"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gait = Gait::new(style, &mut rng);
    let layout = SensorLayout::default();
    let skeleton = Skeleton::default_22();
    let dt = 1.0 / FRAME_RATE;
    let frames = (duration * FRAME_RATE).round() as usize;

    // states at k = -1 ..= frames so every output frame has both neighbours
    let states: Vec<BodyState> = (0..frames + 2).map(|i| gait.body((i as f64 - 1.0) * dt)).collect();

    let mut sides: Vec<[InsoleSide; 2]> = vec![[InsoleSide::zero(), InsoleSide::zero()]; frames];
    let mut contact = vec![[false; 2]; frames];
    for f in 0..2 {
        let pos: Vec<Vec3> = states.iter().map(|s| arr(&s.imu[f])).collect();
        let rot: Vec<Rotation> = states.iter().map(|s| s.feet[f].orientation).collect();
        let (accel, gyro) = imu_from_trajectory(&pos, &rot, dt)?;
        for k in 0..frames {
            let s = &mut sides[k][f];
            s.accel = accel[k];
            s.gyro = gyro[k];
            let state = &states[k + 1];
            if let Some(u) = state.feet[f].stance {
                let t = k as f64 * dt;
                let (force, cx) = stance_load(&gait, u, t);
                let cy = 0.03 * if f == 0 { -1.0 } else { 1.0 };
                s.pressures = pressure_pattern(&layout, force, cx, cy);
                s.total_force = force;
                s.cop = center_of_pressure(&layout, &s.pressures);
                contact[k][f] = force > 0.0;
            }
        }
    }

    if style.noise_level > 0.0 {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for (k, frame) in sides.iter_mut().enumerate() {
            for (f, s) in frame.iter_mut().enumerate() {
                let sigma = style.noise_level * if contact[k][f] { 3.0 } else { 1.0 };
                for v in s.accel.iter_mut() {
                    *v += sigma * unit.sample(&mut rng);
                }
                for v in s.gyro.iter_mut() {
                    *v += 50.0 * sigma * unit.sample(&mut rng);
                }
                if contact[k][f] {
                    for p in s.pressures.iter_mut() {
                        *p = (*p + 5.0 * sigma * unit.sample(&mut rng)).max(0.0);
                    }
                    s.total_force = (s.total_force + 20.0 * sigma * unit.sample(&mut rng)).max(0.0);
                    s.cop = center_of_pressure(&layout, &s.pressures);
                }
            }
        }
    }

    let root: Vec<V3> = states.iter().map(|s| s.joints[0]).collect();
    let mut poses = Vec::with_capacity(frames);
    let mut insoles = Vec::with_capacity(frames);
    for k in 0..frames {
        let s = &states[k + 1];
        let r = root[k + 1];
        poses.push(PoseFrame {
            displacement: arr(&(r - root[k])),
            joints: s.joints[1..].iter().map(|j| arr(&(j - r))).collect(),
        });
        let [left, right] = sides[k].clone();
        insoles.push(InsoleReading {
            timestamp: k as f64 * dt,
            left,
            right,
            accel_frame: AccelFrame::Local,
        });
    }
    let mut header = RecordingHeader::new(skeleton);
    header.sensor_layout = layout;
    header.initial_orientation = Some(InitialOrientation::from_rotations(
        &states[1].feet[0].orientation,
        &states[1].feet[1].orientation,
    ));
    header.source = Some(serde_json::json!({
        "generator": "synthetic-gait",
        "style": style,
        "duration": duration,
        "seed": seed,
    }));
    let recording = Recording { header, insoles, poses };
    recording.validate()?;
    let distance = root[1..].windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    Ok(SyntheticSequence {
        recording,
        style: style.clone(),
        seed,
        root: root[1..=frames].iter().map(arr).collect(),
        foot_imu: states[1..=frames].iter().map(|s| [arr(&s.imu[0]), arr(&s.imu[1])]).collect(),
        distance,
    })
}

/// Vertical force and heel-to-toe CoP target for a foot at stance progress `u`.
fn stance_load(gait: &Gait, u: f64, t: f64) -> (f64, f64) {
    match gait.style.kind {
        GaitKind::Idle => (BODY_WEIGHT_N / 2.0, -0.05),
        GaitKind::Squat => (BODY_WEIGHT_N / 2.0, -0.05 - 0.15 * gait.squat_depth_fraction(t)),
        kind => {
            // sin(pi u) over a stance of `duty` cycles per foot, two feet:
            // the cycle mean of the summed force is exactly body weight.
            let scale = PI / (4.0 * gait.duty);
            let force = BODY_WEIGHT_N * scale * (PI * u).sin();
            let cx = if kind == GaitKind::Tiptoe { 0.3 + 0.05 * u } else { -0.35 + 0.7 * u };
            (force, cx)
        }
    }
}

/// Splits whole sequences into train and test sets. The train set gets
/// `round(n * train_fraction)` sequences, clamped so neither side is empty.
pub fn split_dataset<T: Clone>(sequences: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MotionError::Invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n = sequences.len();
    if n < 2 {
        return Err(MotionError::Invalid(format!("need at least 2 sequences to split, got {n}")));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let train = order[..n_train].iter().map(|&i| sequences[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| sequences[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orientation::integrate_orientation;

    fn walk(duration: f64, seed: u64) -> SyntheticSequence {
        generate(&GaitStyle::preset(GaitKind::Walk), duration, seed).unwrap()
    }

    #[test]
    fn style_names_round_trip() {
        for k in GaitKind::ALL {
            assert_eq!(k.to_string().parse::<GaitKind>().unwrap(), k);
        }
        assert!("moonwalk".parse::<GaitKind>().is_err());
    }

    #[test]
    fn invalid_styles_are_rejected() {
        let mut s = GaitStyle::preset(GaitKind::Walk);
        s.cadence = 0.0;
        assert!(generate(&s, 10.0, 0).is_err());
        let mut s = GaitStyle::preset(GaitKind::Jog);
        s.stride = -1.0;
        assert!(generate(&s, 10.0, 0).is_err());
        assert!(generate(&GaitStyle::preset(GaitKind::Walk), 1.0, 0).is_err());
    }

    #[test]
    fn idle_is_static_and_balanced() {
        let seq = generate(&GaitStyle::preset(GaitKind::Idle), 5.0, 3).unwrap();
        for (p, r) in seq.recording.poses.iter().zip(&seq.recording.insoles) {
            assert_eq!(p.displacement, [0.0; 3]);
            let share = r.left.total_force / (r.left.total_force + r.right.total_force);
            assert!((share - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn walking_speed_matches_stride_times_cadence() {
        let seq = walk(20.0, 1);
        let speed = 0.6 * 100.0 / 60.0;
        assert!((speed - 1.0f64).abs() < 1e-12);
        let disp = &seq.recording.poses;
        let total: V3 = disp.iter().map(|p| V3::from(p.displacement)).sum();
        let horizontal = (total.x * total.x + total.y * total.y).sqrt();
        let elapsed = disp.len() as f64 / FRAME_RATE;
        let mean = horizontal / elapsed;
        assert!((mean - speed).abs() / speed < 0.02, "{mean}");
    }

    #[test]
    fn swing_feet_carry_no_pressure() {
        for kind in [GaitKind::Walk, GaitKind::Jog, GaitKind::Tiptoe, GaitKind::Sidestep] {
            let mut style = GaitStyle::preset(kind);
            style.noise_level = 0.05;
            let seq = generate(&style, 6.0, 2).unwrap();
            let mut swings = 0;
            for r in &seq.recording.insoles {
                for s in [&r.left, &r.right] {
                    if s.total_force == 0.0 {
                        swings += 1;
                        assert!(s.pressures.iter().all(|&p| p == 0.0));
                    }
                    assert!(s.pressures.iter().all(|&p| p >= 0.0));
                    assert!(s.cop.iter().all(|c| (-0.5..=0.5).contains(c)));
                }
            }
            assert!(swings > 0, "{kind}");
        }
    }

    #[test]
    fn cycle_average_force_is_body_weight() {
        for kind in [GaitKind::Walk, GaitKind::Jog, GaitKind::Tiptoe] {
            let style = GaitStyle::preset(kind);
            let seq = generate(&style, 12.0, 4).unwrap();
            let cycle = (120.0 / style.cadence * FRAME_RATE).round() as usize;
            let n = (seq.recording.len() / cycle) * cycle;
            let mean: f64 = seq.recording.insoles[..n]
                .iter()
                .map(|r| r.left.total_force + r.right.total_force)
                .sum::<f64>()
                / n as f64;
            assert!((mean - BODY_WEIGHT_N).abs() / BODY_WEIGHT_N < 0.10, "{kind}: {mean}");
        }
    }

    #[test]
    fn feet_move_continuously() {
        for kind in GaitKind::ALL {
            let seq = generate(&GaitStyle::preset(kind), 8.0, 5).unwrap();
            let world = |k: usize, j: usize| V3::from(seq.root[k]) + V3::from(seq.recording.poses[k].joints[j]);
            for k in 1..seq.recording.len() {
                for j in [2, 3, 6, 7] {
                    let jump = (world(k, j) - world(k - 1, j)).norm();
                    assert!(jump < 0.2, "{kind} frame {k} joint {j}: {jump}");
                }
            }
        }
    }

    #[test]
    fn stance_ankle_stays_planted() {
        let seq = walk(6.0, 6);
        let mut checked = 0;
        for k in 1..seq.recording.len() {
            let (a, b) = (&seq.recording.insoles[k - 1].left, &seq.recording.insoles[k].left);
            if a.total_force > 0.0 && b.total_force > 0.0 {
                let ankle = |k: usize| V3::from(seq.root[k]) + V3::from(seq.recording.poses[k].joints[2]);
                let slide = (ankle(k) - ankle(k - 1)).xy().norm();
                assert!(slide < 1e-9, "frame {k} slid {slide}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut style = GaitStyle::preset(GaitKind::Jog);
        style.noise_level = 0.1;
        let a = generate(&style, 4.0, 9).unwrap();
        let b = generate(&style, 4.0, 9).unwrap();
        assert_eq!(a.recording, b.recording);
        let c = generate(&style, 4.0, 10).unwrap();
        assert_ne!(a.recording, c.recording);
    }

    #[test]
    fn gyro_integrates_back_to_foot_orientation() {
        let seq = walk(4.0, 7);
        let (init, _) = seq.recording.header.initial_orientation.as_ref().unwrap().rotations();
        let gyro: Vec<Vec3> = seq.recording.insoles.iter().map(|r| r.left.gyro).collect();
        let rots = integrate_orientation(&gyro, init, 1.0 / FRAME_RATE).unwrap();
        // the toe direction in world space follows the integrated orientation
        for (k, q) in rots.iter().enumerate() {
            let p = &seq.recording.poses[k];
            let toe = V3::from(p.joints[3]) - V3::from(p.joints[2]);
            let expect = q * V3::new(0.15, 0.0, -0.06);
            assert!((toe - expect).norm() < 1e-6, "frame {k}");
        }
    }

    #[test]
    fn stationary_trajectory_reads_gravity() {
        let pos = vec![[0.3, -0.2, 0.1]; 5];
        let rot = Rotation::from_euler_angles(0.4, -0.2, 1.1);
        let (a, g) = imu_from_trajectory(&pos, &[rot; 5], 1.0 / 30.0).unwrap();
        assert_eq!(a.len(), 3);
        for (acc, gy) in a.iter().zip(&g) {
            let n = V3::from(*acc).norm();
            assert!((n - 1.0).abs() < 1e-12);
            let world = rot * V3::from(*acc);
            assert!((world - V3::z()).norm() < 1e-12);
            assert!(gy.iter().all(|v| v.abs() < 1e-9));
        }
        assert!(imu_from_trajectory(&pos[..2], &[rot; 2], 0.1).is_err());
    }

    #[test]
    fn constant_velocity_reads_one_g() {
        let pos: Vec<Vec3> = (0..10).map(|k| [0.5 * k as f64, -0.1 * k as f64, 0.0]).collect();
        let (a, _) = imu_from_trajectory(&pos, &vec![Rotation::identity(); 10], 1.0 / 30.0).unwrap();
        for acc in a {
            assert!((V3::from(acc).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn circular_path_centripetal_acceleration() {
        let (r, w, dt) = (0.5, 4.0, 1.0 / 30.0);
        let pos: Vec<Vec3> = (0..60)
            .map(|k| {
                let t = k as f64 * dt;
                [r * (w * t).cos(), r * (w * t).sin(), 0.0]
            })
            .collect();
        let (a, _) = imu_from_trajectory(&pos, &vec![Rotation::identity(); 60], dt).unwrap();
        let expect = r * w * w / GRAVITY;
        for acc in a {
            let horizontal = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
            assert!((horizontal - expect).abs() / expect < 0.02);
            assert!((acc[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn double_integration_recovers_clean_foot_path() {
        let seq = walk(4.0, 8);
        let dt = 1.0 / FRAME_RATE;
        let (init, _) = seq.recording.header.initial_orientation.as_ref().unwrap().rotations();
        let gyro: Vec<Vec3> = seq.recording.insoles.iter().map(|r| r.left.gyro).collect();
        let rots = integrate_orientation(&gyro, init, dt).unwrap();
        let n = 60;
        let truth: Vec<V3> = seq.foot_imu[..n].iter().map(|p| V3::from(p[0])).collect();
        let mut v = (truth[1] - truth[0]) / dt;
        let mut p = truth[1];
        let mut err = 0.0;
        let mut extent = 0.0;
        for k in 2..n {
            let a = (rots[k - 1] * V3::from(seq.recording.insoles[k - 1].left.accel) - V3::z()) * GRAVITY;
            v += a * dt;
            p += v * dt;
            err += (p - truth[k]).norm_squared();
            extent += (truth[k] - truth[0]).norm_squared();
        }
        let rel = (err / extent).sqrt();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn split_by_whole_sequence() {
        let seqs: Vec<u32> = (0..10).collect();
        let (tr, te) = split_dataset(&seqs, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split_dataset(&seqs, 0.8, 3).unwrap(), (tr.clone(), te.clone()));
        assert!(te.iter().all(|s| !tr.contains(s)));
        assert!(split_dataset(&seqs, 1.0, 3).is_err());
        assert!(split_dataset(&seqs[..1], 0.5, 3).is_err());
    }
}
