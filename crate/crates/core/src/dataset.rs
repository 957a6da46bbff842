//! JSON-lines recording files.
//!
//! A file holds one or more recordings. Each recording starts with a header
//! line (`"kind": "dataset"`) carrying the skeleton, sample rate and sensor
//! layout; every following line until the next header is one frame:
//!
//! ```text
//! {"t":0.0,"left":{"p":[..16],"a":[..3],"r":[..3],"f":..,"c":[..2]},"right":{..},"pose":{"d":[..3],"j":[[x,y,z],..]}}
//! ```
//!
//! `pose` may be omitted for insole-only input.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AccelFrame, InsoleReading, InsoleSide, PoseFrame, Skeleton, FRAME_RATE};
use crate::error::{MotionError, Result};
use crate::orientation::Rotation;
use crate::sensor_layout::SensorLayout;

pub const FORMAT_VERSION: u32 = 1;

/// Per-foot IMU orientation at frame 0, as `[w, x, y, z]` quaternions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialOrientation {
    pub left: [f64; 4],
    pub right: [f64; 4],
}

impl InitialOrientation {
    pub fn from_rotations(left: &Rotation, right: &Rotation) -> Self {
        let q = |r: &Rotation| [r.w, r.i, r.j, r.k];
        Self {
            left: q(left),
            right: q(right),
        }
    }

    pub fn rotations(&self) -> (Rotation, Rotation) {
        let r = |q: &[f64; 4]| {
            Rotation::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
        };
        (r(&self.left), r(&self.right))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub kind: String,
    pub version: u32,
    pub sample_rate: f64,
    pub skeleton: Skeleton,
    pub sensor_layout: SensorLayout,
    pub accel_frame: AccelFrame,
    /// Absent means the flat-foot, gravity-aligned default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_orientation: Option<InitialOrientation>,
    /// Free-form provenance (generator settings, run config, hashes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

impl RecordingHeader {
    pub fn new(skeleton: Skeleton) -> Self {
        Self {
            kind: "dataset".into(),
            version: FORMAT_VERSION,
            sample_rate: FRAME_RATE,
            skeleton,
            sensor_layout: SensorLayout::default(),
            accel_frame: AccelFrame::Local,
            initial_orientation: None,
            source: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: f64,
    left: InsoleSide,
    right: InsoleSide,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose: Option<PoseFrame>,
}

/// One continuous capture: insole readings, optionally paired with poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub header: RecordingHeader,
    pub insoles: Vec<InsoleReading>,
    /// Empty for insole-only input, otherwise one pose per reading.
    pub poses: Vec<PoseFrame>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.insoles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insoles.is_empty()
    }

    pub fn has_poses(&self) -> bool {
        !self.poses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.header.skeleton.validate()?;
        self.header.sensor_layout.validate()?;
        if self.has_poses() && self.poses.len() != self.insoles.len() {
            return Err(MotionError::Invalid(format!(
                "{} poses for {} insole readings",
                self.poses.len(),
                self.insoles.len()
            )));
        }
        for (i, r) in self.insoles.iter().enumerate() {
            r.left
                .validate()
                .and_then(|_| r.right.validate())
                .map_err(|msg| MotionError::Dataset { line: i + 2, msg })?;
        }
        for (i, p) in self.poses.iter().enumerate() {
            p.validate(&self.header.skeleton)
                .map_err(|msg| MotionError::Dataset { line: i + 2, msg })?;
        }
        Ok(())
    }

    pub fn write_lines(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *out, &self.header)?;
        out.write_all(b"\n")?;
        for (i, r) in self.insoles.iter().enumerate() {
            let line = FrameLine {
                t: r.timestamp,
                left: r.left.clone(),
                right: r.right.clone(),
                pose: self.poses.get(i).cloned(),
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn write_recordings(path: &Path, recordings: &[Recording]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in recordings {
        r.write_lines(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_recordings(path: &Path) -> Result<Vec<Recording>> {
    parse_recordings(BufReader::new(File::open(path)?))
}

/// Parses and validates every recording in a JSON-lines stream.
pub fn parse_recordings(reader: impl BufRead) -> Result<Vec<Recording>> {
    let mut out: Vec<Recording> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| MotionError::Dataset { line: line_no, msg };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if value.get("kind").is_some() {
            let header: RecordingHeader =
                serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            if header.kind != "dataset" {
                return Err(err(format!("expected a dataset header, found kind `{}`", header.kind)));
            }
            if header.version != FORMAT_VERSION {
                return Err(err(format!("unsupported dataset version {}", header.version)));
            }
            header.skeleton.validate().map_err(|e| err(e.to_string()))?;
            header.sensor_layout.validate().map_err(|e| err(e.to_string()))?;
            out.push(Recording {
                header,
                insoles: Vec::new(),
                poses: Vec::new(),
            });
            continue;
        }
        let rec = out
            .last_mut()
            .ok_or_else(|| err("frame before any header".into()))?;
        let frame: FrameLine = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        frame.left.validate().map_err(&err)?;
        frame.right.validate().map_err(&err)?;
        if let Some(prev) = rec.insoles.last() {
            if !(frame.t > prev.timestamp) {
                return Err(err(format!("timestamp {} does not increase", frame.t)));
            }
        }
        match frame.pose {
            Some(pose) => {
                if rec.poses.len() != rec.insoles.len() {
                    return Err(err("pose present on some frames but not others".into()));
                }
                pose.validate(&rec.header.skeleton).map_err(&err)?;
                rec.poses.push(pose);
            }
            None if !rec.poses.is_empty() => {
                return Err(err("pose present on some frames but not others".into()));
            }
            None => {}
        }
        rec.insoles.push(InsoleReading {
            timestamp: frame.t,
            left: frame.left,
            right: frame.right,
            accel_frame: rec.header.accel_frame,
        });
    }
    Ok(out)
}
