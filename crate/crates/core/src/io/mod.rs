//! Files on disk: datasets, trajectories, checkpoints and CSV logs.

mod checkpoint;
mod dataset;
mod json;
mod records;
mod trajectory;

pub use checkpoint::{decode_moments, encode_moments, load_checkpoint, save_checkpoint, MOMENTS_MAGIC};
pub use dataset::{
    load_dataset, load_dataset_with_warnings, save_dataset, sha256_hex, Dataset, Meta, INIT_TRAJECTORY_FILE, META_FILE,
    SCENE_FILE, TRUE_TRAJECTORY_FILE,
};
pub use json::{read_json, write_json};
pub use records::{loss_csv, metrics_csv, read_metrics_csv, write_loss_csv, write_metrics_csv};
pub use trajectory::{read_trajectory, write_trajectory, FrameRecord, Split, TrajectoryFile};
