//! Continuous camera paths and their per-frame velocity samples.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::FrameMotion;
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, so3_log, Pose, Vec3};
use crate::seed;

/// Radius of the arc path; the camera keeps facing the arc center.
pub const ARC_RADIUS: f64 = 10.0;
const JITTER_ROT: f64 = 0.02;
const JITTER_LIFT: f64 = 0.05;
const VELOCITY_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Sideways translation along world x with a fixed orientation.
    Line,
    /// Sideways motion on a circle while turning toward its center.
    Arc,
    /// Line plus a seeded handheld shake in rotation and height.
    Jitter,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(TrajectoryKind::Line),
            "arc" => Ok(TrajectoryKind::Arc),
            "jitter" => Ok(TrajectoryKind::Jitter),
            other => Err(Error::invalid(format!("unknown trajectory '{other}' (expected line, arc or jitter)"))),
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryKind::Line => "line",
            TrajectoryKind::Arc => "arc",
            TrajectoryKind::Jitter => "jitter",
        })
    }
}

/// A camera-to-world pose as a smooth function of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    /// Path speed in scene units per second.
    pub speed: f64,
    /// Shake frequencies (Hz) and phases for the jitter path.
    shake: [(f64, f64); 3],
}

impl Trajectory {
    pub fn new(kind: TrajectoryKind, speed: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed, seed::TRAJECTORY);
        let mut shake = [(0.0, 0.0); 3];
        for s in &mut shake {
            *s = (rng.random_range(1.5..3.5), rng.random_range(0.0..TAU));
        }
        Trajectory { kind, speed, shake }
    }

    pub fn pose(&self, t: f64) -> Pose {
        let d = self.speed * t;
        match self.kind {
            TrajectoryKind::Line => Pose::new(so3_exp(&Vec3::zeros()), Vec3::new(d, 0.0, 0.0)),
            TrajectoryKind::Arc => {
                let theta = d / ARC_RADIUS;
                let p = Vec3::new(ARC_RADIUS * theta.sin(), 0.0, ARC_RADIUS * (1.0 - theta.cos()));
                Pose::new(so3_exp(&Vec3::new(0.0, -theta, 0.0)), p)
            }
            TrajectoryKind::Jitter => {
                let wave = |i: usize| (TAU * self.shake[i].0 * t + self.shake[i].1).sin();
                let r = so3_exp(&(JITTER_ROT * Vec3::new(wave(0), wave(1), 0.3 * wave(2))));
                Pose::new(r, Vec3::new(d, JITTER_LIFT * wave(2), 0.0))
            }
        }
    }

    /// Camera-frame linear and angular velocity at `t` by central differences.
    pub fn velocity(&self, t: f64) -> (Vec3, Vec3) {
        let h = VELOCITY_STEP;
        let (a, b, c) = (self.pose(t - h), self.pose(t), self.pose(t + h));
        let v = b.rotation.transpose() * (c.translation - a.translation) / (2.0 * h);
        let w = so3_log(&(a.rotation.transpose() * c.rotation)) / (2.0 * h);
        (v, w)
    }

    /// Frame state at time `t` with the given shutter timings.
    pub fn frame(&self, t: f64, exposure: f64, readout: f64) -> FrameMotion {
        let (v, w) = self.velocity(t);
        FrameMotion {
            pose: self.pose(t),
            linear_velocity: v,
            angular_velocity: w,
            exposure,
            readout,
            timestamp: t,
        }
    }
}

/// `n` timestamps spaced by `interval`, centered on zero.
pub fn frame_times(n: usize, interval: f64) -> Vec<f64> {
    let mid = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| (i as f64 - mid) * interval).collect()
}
