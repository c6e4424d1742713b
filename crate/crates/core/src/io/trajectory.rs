//! Trajectory files: intrinsics plus one record per frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{FrameMotion, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};

use super::json::{read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Eval = 1,
}

impl Split {
    /// Image subdirectory for this split.
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// One frame: camera-to-world pose, camera-frame velocities and shutter timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub split: Split,
    pub timestamp: f64,
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub exposure: f64,
    pub readout: f64,
}

impl FrameRecord {
    pub fn new(split: Split, fm: &FrameMotion) -> Self {
        let r = &fm.pose.rotation;
        FrameRecord {
            split,
            timestamp: fm.timestamp,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: fm.pose.translation.into(),
            linear_velocity: fm.linear_velocity.into(),
            angular_velocity: fm.angular_velocity.into(),
            exposure: fm.exposure,
            readout: fm.readout,
        }
    }

    pub fn frame(&self) -> FrameMotion {
        let r = Mat3::from_fn(|i, j| self.rotation[i][j]);
        FrameMotion {
            pose: Pose::new(r, Vec3::from(self.translation)),
            linear_velocity: Vec3::from(self.linear_velocity),
            angular_velocity: Vec3::from(self.angular_velocity),
            exposure: self.exposure,
            readout: self.readout,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameRecord>,
}

impl TrajectoryFile {
    pub fn new(intrinsics: Intrinsics, splits: &[Split], frames: &[FrameMotion]) -> Self {
        TrajectoryFile {
            intrinsics,
            frames: splits.iter().zip(frames).map(|(s, f)| FrameRecord::new(*s, f)).collect(),
        }
    }

    /// Validated intrinsics, split labels and frame states.
    pub fn into_parts(self) -> Result<(Intrinsics, Vec<Split>, Vec<FrameMotion>)> {
        self.intrinsics.validate()?;
        let frames: Vec<FrameMotion> = self.frames.iter().map(FrameRecord::frame).collect();
        for (i, f) in frames.iter().enumerate() {
            f.validate().map_err(|e| Error::invalid(format!("frame {i}: {e}")))?;
            let r = f.pose.rotation;
            if ((r.transpose() * r) - Mat3::identity()).abs().max() > 1e-6 || r.determinant() < 0.0 {
                return Err(Error::invalid(format!("frame {i}: rotation is not orthonormal")));
            }
        }
        Ok((self.intrinsics, self.frames.iter().map(|f| f.split).collect(), frames))
    }
}

pub fn write_trajectory(path: &Path, t: &TrajectoryFile) -> Result<()> {
    write_json(path, t)
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile> {
    read_json(path)
}
