//! Dataset directories: scene, true and initial trajectories, images and a hash manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{FrameMotion, Intrinsics};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::Scene;

use super::json::{read_json, write_json};
use super::trajectory::{read_trajectory, write_trajectory, Split, TrajectoryFile};

pub const SCENE_FILE: &str = "scene.json";
pub const TRUE_TRAJECTORY_FILE: &str = "trajectory_true.json";
pub const INIT_TRAJECTORY_FILE: &str = "trajectory_init.json";
pub const META_FILE: &str = "meta.json";
pub const DATASET_FORMAT: u32 = 1;

/// An in-memory dataset. Frame `i` of every per-frame list refers to the same capture.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Ground-truth or seed scene when available.
    pub scene: Option<Scene>,
    pub intrinsics: Intrinsics,
    pub splits: Vec<Split>,
    /// True frame states the images were rendered from.
    pub truth: Vec<FrameMotion>,
    /// Initial estimates handed to the optimizer.
    pub init: Vec<FrameMotion>,
    /// Gamma-space images with 8-bit levels.
    pub images: Vec<Image>,
    /// Echo of the settings that produced the dataset.
    pub spec: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format: u32,
    pub spec: serde_json::Value,
    pub scene_hash: Option<String>,
    pub content_hash: String,
    /// SHA-256 of every other file, keyed by path relative to the dataset root.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn image_name(split: Split, n: usize) -> String {
    format!("{}/{n:04}.png", split.dir())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == Split::Train).collect()
    }

    pub fn eval_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == Split::Eval).collect()
    }

    pub fn is_eval(&self) -> Vec<bool> {
        self.splits.iter().map(|s| *s == Split::Eval).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.truth.len();
        if self.init.len() != n || self.images.len() != n || self.splits.len() != n {
            return Err(Error::invalid(format!(
                "dataset: {n} true frames but {} initial frames, {} images and {} split labels",
                self.init.len(),
                self.images.len(),
                self.splits.len()
            )));
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.shape() != (self.intrinsics.width, self.intrinsics.height) {
                return Err(Error::invalid(format!(
                    "dataset: image {i} is {}x{}, intrinsics say {}x{}",
                    img.width, img.height, self.intrinsics.width, self.intrinsics.height
                )));
            }
        }
        for f in self.truth.iter().chain(&self.init) {
            f.validate()?;
        }
        if let Some(s) = &self.scene {
            s.validate()?;
        }
        Ok(())
    }

    fn trajectory(&self, frames: &[FrameMotion]) -> TrajectoryFile {
        TrajectoryFile::new(self.intrinsics, &self.splits, frames)
    }

    /// SHA-256 over the scene parameters, both trajectories and the 8-bit image levels.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.scene.as_ref().map(|s| s.param_hash()).unwrap_or_default());
        for frames in [&self.truth, &self.init] {
            h.update(serde_json::to_vec(&self.trajectory(frames)).map_err(|e| Error::invalid(e.to_string()))?);
        }
        for img in &self.images {
            h.update((img.width as u64).to_le_bytes());
            h.update((img.height as u64).to_le_bytes());
            h.update(img.to_rgb8());
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Write `dataset` into directory `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    for sub in [Split::Train.dir(), Split::Eval.dir()] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut files = BTreeMap::new();
    let mut record = |rel: String| -> Result<()> {
        let path = dir.join(&rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.insert(rel, sha256_hex(&bytes));
        Ok(())
    };
    if let Some(scene) = &dataset.scene {
        write_json(&dir.join(SCENE_FILE), scene)?;
        record(SCENE_FILE.into())?;
    }
    write_trajectory(&dir.join(TRUE_TRAJECTORY_FILE), &dataset.trajectory(&dataset.truth))?;
    record(TRUE_TRAJECTORY_FILE.into())?;
    write_trajectory(&dir.join(INIT_TRAJECTORY_FILE), &dataset.trajectory(&dataset.init))?;
    record(INIT_TRAJECTORY_FILE.into())?;
    let mut counters = [0usize; 2];
    for (img, split) in dataset.images.iter().zip(&dataset.splits) {
        let c = &mut counters[*split as usize];
        let rel = image_name(*split, *c);
        *c += 1;
        img.write_png(&dir.join(&rel))?;
        record(rel)?;
    }
    let meta = Meta {
        format: DATASET_FORMAT,
        spec: dataset.spec.clone(),
        scene_hash: dataset.scene.as_ref().map(|s| s.param_hash()),
        content_hash: dataset.content_hash()?,
        files,
    };
    write_json(&dir.join(META_FILE), &meta)
}

/// Load a dataset directory, returning any non-fatal warnings alongside it.
pub fn load_dataset_with_warnings(dir: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut warnings = Vec::new();
    let meta_path = dir.join(META_FILE);
    let meta: Option<Meta> = if meta_path.exists() {
        Some(read_json(&meta_path)?)
    } else {
        warnings.push(format!("{} not found; file hashes are not checked", meta_path.display()));
        None
    };
    if let Some(m) = &meta {
        if m.format != DATASET_FORMAT {
            return Err(Error::format(&meta_path, format!("unsupported dataset format {}", m.format)));
        }
        for (rel, want) in &m.files {
            let path = dir.join(rel);
            if rel == INIT_TRAJECTORY_FILE && !path.exists() {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let got = sha256_hex(&bytes);
            if &got != want {
                return Err(Error::HashMismatch {
                    path,
                    expected: want.clone(),
                    found: got,
                });
            }
        }
    }

    let scene_path = dir.join(SCENE_FILE);
    let scene: Option<Scene> = if scene_path.exists() { Some(read_json(&scene_path)?) } else { None };
    let truth = read_trajectory(&dir.join(TRUE_TRAJECTORY_FILE))?;
    let init_path = dir.join(INIT_TRAJECTORY_FILE);
    let init = if init_path.exists() {
        read_trajectory(&init_path)?
    } else {
        warnings.push(format!(
            "{} not found; initial estimates fall back to {TRUE_TRAJECTORY_FILE}",
            init_path.display()
        ));
        truth.clone()
    };
    let (k, splits, truth_frames) = truth.into_parts()?;
    let (k_init, splits_init, init_frames) = init.into_parts()?;
    if k_init != k || splits_init != splits {
        return Err(Error::format(&init_path, "intrinsics or frame splits differ from the true trajectory"));
    }

    let mut counters = [0usize; 2];
    let mut images = Vec::with_capacity(splits.len());
    for split in &splits {
        let c = &mut counters[*split as usize];
        let path: PathBuf = dir.join(image_name(*split, *c));
        *c += 1;
        let img = Image::read_png(&path)?;
        if img.shape() != (k.width, k.height) {
            return Err(Error::format(
                &path,
                format!("image is {}x{}, intrinsics say {}x{}", img.width, img.height, k.width, k.height),
            ));
        }
        images.push(img);
    }

    let dataset = Dataset {
        scene,
        intrinsics: k,
        splits,
        truth: truth_frames,
        init: init_frames,
        images,
        spec: meta.as_ref().map(|m| m.spec.clone()).unwrap_or(serde_json::Value::Null),
    };
    dataset.validate()?;
    if let Some(m) = &meta {
        let got = dataset.content_hash()?;
        if init_path.exists() && got != m.content_hash {
            return Err(Error::HashMismatch {
                path: meta_path,
                expected: m.content_hash.clone(),
                found: got,
            });
        }
    }
    Ok((dataset, warnings))
}

/// Load a dataset directory, logging warnings.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (d, warnings) = load_dataset_with_warnings(dir)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(d)
}
