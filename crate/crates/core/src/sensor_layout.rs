//! Assignment of the 16 pressure cells of an insole to the toes and heel
//! regions, with nominal cell centers in normalized insole coordinates
//! (`x` along the foot, heel at -0.5 and toe at +0.5; `y` across it).
//!
//! The default table is an assumed layout: cells 0-7 cover the forefoot and
//! toes, cells 8-15 the midfoot and heel. It ships in dataset headers and
//! checkpoints and can be replaced.

use serde::{Deserialize, Serialize};

use crate::data::SENSORS_PER_FOOT;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Toes,
    Heel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorEntry {
    pub index: usize,
    pub region: Region,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorLayout {
    pub entries: Vec<SensorEntry>,
}

const DEFAULT_CELLS: [(f64, f64); SENSORS_PER_FOOT] = [
    (0.44, -0.10),
    (0.44, 0.12),
    (0.32, -0.22),
    (0.32, 0.00),
    (0.32, 0.22),
    (0.18, -0.20),
    (0.18, 0.02),
    (0.18, 0.22),
    (0.02, -0.18),
    (0.02, 0.18),
    (-0.12, -0.15),
    (-0.12, 0.15),
    (-0.26, -0.12),
    (-0.26, 0.12),
    (-0.40, -0.08),
    (-0.40, 0.08),
];

impl Default for SensorLayout {
    fn default() -> Self {
        let entries = DEFAULT_CELLS
            .iter()
            .enumerate()
            .map(|(index, &(x, y))| SensorEntry {
                index,
                region: if index < 8 { Region::Toes } else { Region::Heel },
                x,
                y,
            })
            .collect();
        Self { entries }
    }
}

impl SensorLayout {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != SENSORS_PER_FOOT {
            return Err(invalid(format!(
                "sensor layout needs {SENSORS_PER_FOOT} entries, got {}",
                self.entries.len()
            )));
        }
        let mut seen = [false; SENSORS_PER_FOOT];
        for e in &self.entries {
            if e.index >= SENSORS_PER_FOOT || seen[e.index] {
                return Err(invalid(format!("sensor index {} invalid or repeated", e.index)));
            }
            seen[e.index] = true;
            if !(-0.5..=0.5).contains(&e.x) || !(-0.5..=0.5).contains(&e.y) {
                return Err(invalid(format!("sensor {} lies outside the insole", e.index)));
            }
        }
        if self.region(Region::Toes).is_empty() || self.region(Region::Heel).is_empty() {
            return Err(invalid("both pressure regions need at least one sensor"));
        }
        Ok(())
    }

    /// Sensor indices of a region, ascending.
    pub fn region(&self, region: Region) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.region == region)
            .map(|e| e.index)
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Cell center of sensor `index`.
    pub fn position(&self, index: usize) -> (f64, f64) {
        let e = self
            .entries
            .iter()
            .find(|e| e.index == index)
            .expect("validated layout covers every index");
        (e.x, e.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_splits_eight_and_eight() {
        let l = SensorLayout::default();
        l.validate().unwrap();
        assert_eq!(l.region(Region::Toes), (0..8).collect::<Vec<_>>());
        assert_eq!(l.region(Region::Heel), (8..16).collect::<Vec<_>>());
        for i in 0..8 {
            assert!(l.position(i).0 > l.position(15).0);
        }
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_value(SensorLayout::default()).unwrap();
        let arr = json.as_array().unwrap();
        assert_eq!(arr.len(), 16);
        assert_eq!(arr[0]["region"], "toes");
        assert_eq!(arr[15]["region"], "heel");
        let back: SensorLayout = serde_json::from_value(json).unwrap();
        assert_eq!(back, SensorLayout::default());
    }

    #[test]
    fn rejects_duplicate_indices() {
        let mut l = SensorLayout::default();
        l.entries[3].index = 2;
        assert!(l.validate().is_err());
    }
}
