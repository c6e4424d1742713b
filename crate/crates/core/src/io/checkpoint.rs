//! Training checkpoints: scene and trajectory as JSON, optimizer moments as a binary sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::image::Image;
use crate::optimizer::{floor_references, FrameMoments, Moments, RunConfig, SceneMoments, TrainState};
use crate::scene::Scene;

use super::json::{read_json, write_json};
use super::trajectory::{read_trajectory, write_trajectory, Split, TrajectoryFile};

pub const MOMENTS_MAGIC: &[u8; 8] = b"SPLATMO1";
pub const CHECKPOINT_SCENE: &str = "scene.json";
pub const CHECKPOINT_TRAJECTORY: &str = "trajectory.json";
pub const CHECKPOINT_STATE: &str = "state.json";
pub const CHECKPOINT_MOMENTS: &str = "moments.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let r = &p.rotation;
        PoseRecord {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: p.translation.into(),
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(p: &PoseRecord) -> Self {
        Pose::new(Mat3::from_fn(|i, j| p.rotation[i][j]), Vec3::from(p.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateRecord {
    iteration: u64,
    extent: f64,
    anchors: Vec<PoseRecord>,
}

/// Named moment blocks in file order.
fn blocks(state: &TrainState) -> Vec<(String, &Moments)> {
    let s = &state.scene_moments;
    let mut out: Vec<(String, &Moments)> = vec![
        ("means".into(), &s.means),
        ("quats".into(), &s.quats),
        ("scales".into(), &s.scales),
        ("opacity".into(), &s.opacity),
        ("sh".into(), &s.sh),
    ];
    for (i, f) in state.frame_moments.iter().enumerate() {
        out.push((format!("frame{i}.translation"), &f.translation));
        out.push((format!("frame{i}.rotation"), &f.rotation));
        out.push((format!("frame{i}.linear_velocity"), &f.linear_velocity));
        out.push((format!("frame{i}.angular_velocity"), &f.angular_velocity));
    }
    out
}

pub fn encode_moments(state: &TrainState) -> Vec<u8> {
    let b = blocks(state);
    let mut out = Vec::new();
    out.extend_from_slice(MOMENTS_MAGIC);
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    for (name, m) in b {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&m.steps.to_le_bytes());
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for v in m.m.iter().chain(&m.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Decode a moments sidecar into `(name, moments)` pairs.
pub fn decode_moments(path: &Path, bytes: &[u8]) -> Result<Vec<(String, Moments)>> {
    let truncated = || Error::format(path, "truncated moments file");
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(MOMENTS_MAGIC.as_slice()) {
        return Err(Error::format(path, "missing SPLATMO1 header"));
    }
    let count = r.u64().ok_or_else(truncated)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = String::from_utf8(r.take(len).ok_or_else(truncated)?.to_vec())
            .map_err(|_| Error::format(path, "block name is not UTF-8"))?;
        let steps = r.u64().ok_or_else(truncated)?;
        let n = r.u64().ok_or_else(truncated)? as usize;
        if n > bytes.len() / 16 {
            return Err(truncated());
        }
        let mut m = Moments::zeros(n);
        m.steps = steps;
        for x in m.m.iter_mut().chain(m.v.iter_mut()) {
            *x = r.f64().ok_or_else(truncated)?;
        }
        out.push((name, m));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last moment block"));
    }
    Ok(out)
}

/// Write scene, trajectory, anchors, counters and moments into `dir`.
pub fn save_checkpoint(state: &TrainState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(CHECKPOINT_SCENE), &state.scene)?;
    let splits: Vec<Split> = state.is_eval.iter().map(|&e| if e { Split::Eval } else { Split::Train }).collect();
    write_trajectory(
        &dir.join(CHECKPOINT_TRAJECTORY),
        &TrajectoryFile::new(state.intrinsics, &splits, &state.frames),
    )?;
    write_json(
        &dir.join(CHECKPOINT_STATE),
        &StateRecord {
            iteration: state.iteration,
            extent: state.extent,
            anchors: state.anchors.iter().map(PoseRecord::from).collect(),
        },
    )?;
    let path = dir.join(CHECKPOINT_MOMENTS);
    fs::write(&path, encode_moments(state)).map_err(|e| Error::io(&path, e))
}

/// Restore a training state from `dir`. `references` are the dataset images in frame order.
pub fn load_checkpoint(dir: &Path, mut references: Vec<Image>, cfg: &RunConfig) -> Result<TrainState> {
    let scene: Scene = read_json(&dir.join(CHECKPOINT_SCENE))?;
    scene.validate()?;
    let (intrinsics, splits, frames) = read_trajectory(&dir.join(CHECKPOINT_TRAJECTORY))?.into_parts()?;
    let state_path = dir.join(CHECKPOINT_STATE);
    let rec: StateRecord = read_json(&state_path)?;
    if rec.anchors.len() != frames.len() || references.len() != frames.len() {
        return Err(Error::format(
            &state_path,
            format!(
                "checkpoint has {} frames and {} anchors, dataset has {} images",
                frames.len(),
                rec.anchors.len(),
                references.len()
            ),
        ));
    }
    floor_references(&mut references, cfg.render.gamma);
    let moments_path = dir.join(CHECKPOINT_MOMENTS);
    let bytes = fs::read(&moments_path).map_err(|e| Error::io(&moments_path, e))?;
    let mut decoded = decode_moments(&moments_path, &bytes)?.into_iter();
    let n = scene.len();
    let mut state = TrainState {
        scene_moments: SceneMoments::zeros(n),
        frame_moments: vec![FrameMoments::default(); frames.len()],
        scene,
        is_eval: splits.iter().map(|s| *s == Split::Eval).collect(),
        anchors: rec.anchors.iter().map(Pose::from).collect(),
        frames,
        references,
        intrinsics,
        extent: rec.extent,
        iteration: rec.iteration,
    };
    let names: Vec<(String, usize)> = blocks(&state).into_iter().map(|(n, m)| (n, m.len())).collect();
    let mut loaded = Vec::with_capacity(names.len());
    for (name, len) in &names {
        let (got, m) = decoded
            .next()
            .ok_or_else(|| Error::format(&moments_path, format!("missing moment block {name}")))?;
        if &got != name || m.len() != *len {
            return Err(Error::format(
                &moments_path,
                format!("expected block {name} of length {len}, found {got} of length {}", m.len()),
            ));
        }
        loaded.push(m);
    }
    if decoded.next().is_some() {
        return Err(Error::format(&moments_path, "more moment blocks than the checkpoint has parameters"));
    }
    let mut it = loaded.into_iter();
    let mut next = || it.next().expect("block count checked");
    state.scene_moments = SceneMoments {
        means: next(),
        quats: next(),
        scales: next(),
        opacity: next(),
        sh: next(),
    };
    for f in &mut state.frame_moments {
        *f = FrameMoments {
            translation: next(),
            rotation: next(),
            linear_velocity: next(),
            angular_velocity: next(),
        };
    }
    Ok(state)
}
