//! Blur scoring, blurry-keyframe rejection and the evaluation split.

use crate::camera::{FrameMotion, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::projection::projection_jacobian;

/// Frames per evaluation block.
pub const EVAL_BLOCK: usize = 8;

/// Mean pixel speed (px/s) of the visible landmarks for a world-to-camera pose `(r, p)`
/// with camera-frame velocities `v` and `w`. Landmarks at or behind the camera plane are ignored.
pub fn blur_score(r: &Mat3, p: &Vec3, v: &Vec3, w: &Vec3, landmarks: &[Vec3], k: &Intrinsics) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for l in landmarks {
        let cam = r * l + p;
        if !(cam.z > 0.0) {
            continue;
        }
        let jac = projection_jacobian(&cam, k);
        sum += (jac * (w.cross(&cam) + v)).norm();
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedScore);
    }
    Ok(sum / n as f64)
}

/// [`blur_score`] for a frame stored with a camera-to-world pose.
pub fn frame_blur_score(fm: &FrameMotion, landmarks: &[Vec3], k: &Intrinsics) -> Result<f64> {
    let (r, p) = fm.pose.world_to_camera();
    blur_score(&r, &p, &fm.linear_velocity, &fm.angular_velocity, landmarks, k)
}

/// Indices kept after dropping every candidate whose score is a strict maximum of its
/// window `[i-2, i+1]` (clipped to the sequence). Ties keep the frame, and a window with
/// no other member never drops its frame.
pub fn keyframe_filter(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .filter(|&i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 1).min(scores.len() - 1);
            let others: Vec<f64> = (lo..=hi).filter(|&j| j != i).map(|j| scores[j]).collect();
            others.is_empty() || others.iter().any(|&s| s >= scores[i])
        })
        .collect()
}

/// Split ordered keyframes into `(train, eval)` index lists: from every block of eight
/// consecutive frames (the last may be shorter) the lowest-score frame goes to eval, ties
/// to the earliest index.
pub fn eval_split(scores: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    if scores.is_empty() {
        return Err(Error::invalid("eval split needs at least one keyframe"));
    }
    let mut eval = Vec::new();
    for start in (0..scores.len()).step_by(EVAL_BLOCK) {
        let end = (start + EVAL_BLOCK).min(scores.len());
        let mut best = start;
        for i in start + 1..end {
            if scores[i] < scores[best] {
                best = i;
            }
        }
        eval.push(best);
    }
    let train = (0..scores.len()).filter(|i| !eval.contains(i)).collect();
    Ok((train, eval))
}
