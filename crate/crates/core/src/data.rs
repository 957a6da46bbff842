//! Insole readings, poses, skeletons and windows.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MotionError, Result};

pub const SENSORS_PER_FOOT: usize = 16;
pub const CHANNELS_PER_FOOT: usize = 25;
pub const INSOLE_CHANNELS: usize = 2 * CHANNELS_PER_FOOT;
pub const IMU_CHANNELS: usize = 12;
/// Pressures, total force and CoP of both feet.
pub const PRESSURE_CHANNELS: usize = 2 * (SENSORS_PER_FOOT + 3);
pub const FRAME_RATE: f64 = 30.0;
pub const JOINTS_PER_LEG: usize = 4;
/// Largest plausible root displacement between two frames, in meters.
pub const MAX_FRAME_DISPLACEMENT: f64 = 1.0;

/// Offsets of each field inside a foot's 25-channel block.
pub mod layout {
    pub const PRESSURE: usize = 0;
    pub const ACCEL: usize = 16;
    pub const GYRO: usize = 19;
    pub const FORCE: usize = 22;
    pub const COP: usize = 23;
}

pub type Vec3 = [f64; 3];

/// Frame in which `InsoleSide::accel` is expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccelFrame {
    Local,
    World,
}

/// One foot's sample. Pressures are in 1/4 N/cm², acceleration in g, angular
/// rate in degree/s (sensor frame), total force in N, CoP normalized to the
/// insole extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsoleSide {
    #[serde(rename = "p")]
    pub pressures: [f64; SENSORS_PER_FOOT],
    #[serde(rename = "a")]
    pub accel: Vec3,
    #[serde(rename = "r")]
    pub gyro: Vec3,
    #[serde(rename = "f")]
    pub total_force: f64,
    #[serde(rename = "c")]
    pub cop: [f64; 2],
}

impl InsoleSide {
    pub fn zero() -> Self {
        Self {
            pressures: [0.0; SENSORS_PER_FOOT],
            accel: [0.0; 3],
            gyro: [0.0; 3],
            total_force: 0.0,
            cop: [0.0; 2],
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = self
            .pressures
            .iter()
            .chain(&self.accel)
            .chain(&self.gyro)
            .chain(std::iter::once(&self.total_force))
            .chain(&self.cop);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err("non-finite insole value".into());
        }
        if let Some(i) = self.pressures.iter().position(|&p| p < 0.0) {
            return Err(format!("negative pressure at sensor {i}"));
        }
        if self.total_force < 0.0 {
            return Err("negative total force".into());
        }
        if self.cop.iter().any(|c| !(-0.5..=0.5).contains(c)) {
            return Err(format!("center of pressure {:?} outside [-0.5, 0.5]", self.cop));
        }
        Ok(())
    }

    /// Writes the 25 channels `(p[16], a[3], r[3], f, c[2])`.
    pub fn write_channels(&self, out: &mut [f64]) {
        out[layout::PRESSURE..layout::ACCEL].copy_from_slice(&self.pressures);
        out[layout::ACCEL..layout::GYRO].copy_from_slice(&self.accel);
        out[layout::GYRO..layout::FORCE].copy_from_slice(&self.gyro);
        out[layout::FORCE] = self.total_force;
        out[layout::COP..CHANNELS_PER_FOOT].copy_from_slice(&self.cop);
    }

    pub fn from_channels(ch: &[f64]) -> Self {
        let mut s = Self::zero();
        s.pressures.copy_from_slice(&ch[layout::PRESSURE..layout::ACCEL]);
        s.accel.copy_from_slice(&ch[layout::ACCEL..layout::GYRO]);
        s.gyro.copy_from_slice(&ch[layout::GYRO..layout::FORCE]);
        s.total_force = ch[layout::FORCE];
        s.cop.copy_from_slice(&ch[layout::COP..CHANNELS_PER_FOOT]);
        s
    }
}

/// Both insoles at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct InsoleReading {
    pub timestamp: f64,
    pub left: InsoleSide,
    pub right: InsoleSide,
    pub accel_frame: AccelFrame,
}

impl InsoleReading {
    /// The 50-value vector: left foot's 25 channels, then the right foot's.
    pub fn flatten(&self) -> [f64; INSOLE_CHANNELS] {
        let mut out = [0.0; INSOLE_CHANNELS];
        self.left.write_channels(&mut out[..CHANNELS_PER_FOOT]);
        self.right.write_channels(&mut out[CHANNELS_PER_FOOT..]);
        out
    }

    /// `(a_L, r_L, a_R, r_R)`.
    pub fn imu(&self) -> [f64; IMU_CHANNELS] {
        let mut out = [0.0; IMU_CHANNELS];
        out[0..3].copy_from_slice(&self.left.accel);
        out[3..6].copy_from_slice(&self.left.gyro);
        out[6..9].copy_from_slice(&self.right.accel);
        out[9..12].copy_from_slice(&self.right.gyro);
        out
    }
}

/// Channel indices (into the 50-vector) of the IMU-only slice.
pub fn imu_channel_indices() -> Vec<usize> {
    [0, CHANNELS_PER_FOOT]
        .iter()
        .flat_map(|&o| (o + layout::ACCEL)..(o + layout::FORCE))
        .collect()
}

/// Channel indices of pressures, force and CoP for both feet.
pub fn pressure_channel_indices() -> Vec<usize> {
    [0, CHANNELS_PER_FOOT]
        .iter()
        .flat_map(|&o| (o..o + layout::ACCEL).chain((o + layout::FORCE)..(o + CHANNELS_PER_FOOT)))
        .collect()
}

/// Root displacement from the previous frame (world space) plus root-relative
/// positions of every non-root joint, all in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    #[serde(rename = "d")]
    pub displacement: Vec3,
    #[serde(rename = "j")]
    pub joints: Vec<Vec3>,
}

impl PoseFrame {
    pub fn validate(&self, skeleton: &Skeleton) -> std::result::Result<(), String> {
        if self.joints.len() != skeleton.joint_count() - 1 {
            return Err(format!(
                "pose has {} joints, skeleton expects {}",
                self.joints.len(),
                skeleton.joint_count() - 1
            ));
        }
        let vals = self.displacement.iter().chain(self.joints.iter().flatten());
        if vals.into_iter().any(|v| !v.is_finite()) {
            return Err("non-finite pose value".into());
        }
        let norm = self.displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= MAX_FRAME_DISPLACEMENT {
            return Err(format!("root displacement {norm:.3} m exceeds the per-frame bound"));
        }
        Ok(())
    }

    /// Joints flattened to `(J-1) * 3` values.
    pub fn flat_joints(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }
}

/// Joint naming and the leg/body split. Joint 0 is the root; the leg index
/// sets refer to skeleton joint indices (so never 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub left_leg: [usize; JOINTS_PER_LEG],
    pub right_leg: [usize; JOINTS_PER_LEG],
    pub vertical_axis: Vec3,
}

/// Column indices into a flattened `(J-1) * 3` pose vector for each body part.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionMap {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub body: Vec<usize>,
}

impl PartitionMap {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.left, &self.right, &self.body]
    }

    pub fn pose_dim(&self) -> usize {
        self.left.len() + self.right.len() + self.body.len()
    }
}

impl Skeleton {
    pub const DEFAULT_NAMES: [&'static str; 22] = [
        "pelvis",
        "left_hip",
        "left_knee",
        "left_ankle",
        "left_toe",
        "right_hip",
        "right_knee",
        "right_ankle",
        "right_toe",
        "spine1",
        "spine2",
        "spine3",
        "neck",
        "head",
        "left_collar",
        "left_shoulder",
        "left_elbow",
        "left_wrist",
        "right_collar",
        "right_shoulder",
        "right_elbow",
        "right_wrist",
    ];

    /// 22 joints, z up, hip/knee/ankle/toe per leg.
    pub fn default_22() -> Self {
        Self {
            names: Self::DEFAULT_NAMES.iter().map(|s| s.to_string()).collect(),
            left_leg: [1, 2, 3, 4],
            right_leg: [5, 6, 7, 8],
            vertical_axis: [0.0, 0.0, 1.0],
        }
    }

    /// A skeleton with `joints` joints using the default leg layout; extra
    /// joints are generic body joints. Used for small test models.
    pub fn with_joint_count(joints: usize) -> Result<Self> {
        let mut s = Self::default_22();
        s.names = (0..joints)
            .map(|i| {
                Self::DEFAULT_NAMES
                    .get(i)
                    .map(|n| n.to_string())
                    .unwrap_or_else(|| format!("joint{i}"))
            })
            .collect();
        s.validate()?;
        Ok(s)
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn body_joint_count(&self) -> usize {
        self.joint_count() - 1 - 2 * JOINTS_PER_LEG
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        let err = |m: String| Err(MotionError::Skeleton(m));
        if j < 2 * JOINTS_PER_LEG + 2 {
            return err(format!("need at least {} joints, got {j}", 2 * JOINTS_PER_LEG + 2));
        }
        let mut seen = vec![false; j];
        for &i in self.left_leg.iter().chain(&self.right_leg) {
            if i == 0 {
                return err("the root cannot be a leg joint".into());
            }
            if i >= j {
                return err(format!("leg joint index {i} out of range for {j} joints"));
            }
            if seen[i] {
                return err(format!("leg joint {i} listed twice"));
            }
            seen[i] = true;
        }
        let n = self.vertical_axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return err(format!("vertical axis must be unit length, norm is {n}"));
        }
        Ok(())
    }

    /// Joint indices (skeleton numbering) outside both legs and the root.
    pub fn body_joints(&self) -> Vec<usize> {
        (1..self.joint_count())
            .filter(|i| !self.left_leg.contains(i) && !self.right_leg.contains(i))
            .collect()
    }

    pub fn partition_map(&self) -> PartitionMap {
        let cols = |joints: &[usize]| -> Vec<usize> {
            joints.iter().flat_map(|&j| (j - 1) * 3..(j - 1) * 3 + 3).collect()
        };
        PartitionMap {
            left: cols(&self.left_leg),
            right: cols(&self.right_leg),
            body: cols(&self.body_joints()),
        }
    }

    /// Non-root joint indices of both legs, in pose-vector (joint - 1) numbering.
    pub fn leg_pose_indices(&self) -> Vec<usize> {
        self.left_leg.iter().chain(&self.right_leg).map(|j| j - 1).collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("skeleton serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// `W` consecutive paired frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionWindow {
    pub poses: Vec<PoseFrame>,
    pub insoles: Vec<InsoleReading>,
}

impl MotionWindow {
    pub fn new(poses: Vec<PoseFrame>, insoles: Vec<InsoleReading>) -> Result<Self> {
        if poses.len() != insoles.len() {
            return Err(MotionError::Invalid(format!(
                "window has {} poses but {} insole readings",
                poses.len(),
                insoles.len()
            )));
        }
        Ok(Self { poses, insoles })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}
