use std::fs;

use splatmo::io::{
    load_checkpoint, load_dataset_with_warnings, read_metrics_csv, save_checkpoint, save_dataset, write_metrics_csv,
    Dataset, INIT_TRAJECTORY_FILE,
};
use splatmo::optimizer::{train, EvalRecord, RunConfig, TrainState};
use splatmo::simkit::{simulate_sequence, OracleSpec, SimSpec, Variant};
use splatmo::Error;

fn small_dataset(variant: Variant) -> Dataset {
    simulate_sequence(&SimSpec {
        variant,
        n_train: 4,
        n_eval: 1,
        width: 20,
        height: 16,
        oracle: OracleSpec {
            n_pose_samples: 10,
            max_pose_samples: 20,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn simulated_dataset_round_trips_without_warnings() {
    let d = small_dataset(Variant::PoseNoise);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let (back, warnings) = load_dataset_with_warnings(dir.path()).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(back.content_hash().unwrap(), d.content_hash().unwrap());
    assert_eq!(back, d);
}

#[test]
fn truncated_image_error_names_the_file() {
    let d = small_dataset(Variant::Mb);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let png = dir.path().join("train/0002.png");
    let bytes = fs::read(&png).unwrap();
    fs::write(&png, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_dataset_with_warnings(dir.path()).unwrap_err();
    assert!(err.to_string().contains("0002.png"), "{err}");
    // Without the manifest the decoder itself must report the file.
    fs::remove_file(dir.path().join("meta.json")).unwrap();
    let err = load_dataset_with_warnings(dir.path()).unwrap_err();
    assert!(err.to_string().contains("0002.png"), "{err}");
}

#[test]
fn missing_initial_trajectory_falls_back_with_warning() {
    let d = small_dataset(Variant::PoseNoise);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    fs::remove_file(dir.path().join(INIT_TRAJECTORY_FILE)).unwrap();
    let (back, warnings) = load_dataset_with_warnings(dir.path()).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains(INIT_TRAJECTORY_FILE));
    assert_eq!(back.init, d.truth);
}

#[test]
fn tampered_and_malformed_files_are_rejected() {
    let d = small_dataset(Variant::Rs);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let traj = dir.path().join("trajectory_true.json");
    let text = fs::read_to_string(&traj).unwrap();
    fs::write(&traj, text.replacen("\"readout\"", "\"readout\" ", 1)).unwrap();
    assert!(matches!(load_dataset_with_warnings(dir.path()), Err(Error::HashMismatch { .. })));
    fs::write(&traj, "{ not json").unwrap();
    fs::remove_file(dir.path().join("meta.json")).unwrap();
    let err = load_dataset_with_warnings(dir.path()).unwrap_err();
    assert!(err.to_string().contains("trajectory_true.json"), "{err}");

    let missing = tempfile::tempdir().unwrap();
    assert!(load_dataset_with_warnings(missing.path()).is_err());
}

#[test]
fn checkpoint_resumes_to_identical_next_loss() {
    let d = small_dataset(Variant::Mb);
    let cfg = RunConfig {
        seed: 5,
        ..Default::default()
    };
    let mut scene = d.scene.clone().unwrap();
    for g in &mut scene.gaussians {
        g.sh[0] *= 0.8;
    }
    let mut a = TrainState::new(scene, d.init.clone(), d.is_eval(), d.images.clone(), d.intrinsics, &cfg).unwrap();
    train(&mut a, &cfg, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&a, dir.path()).unwrap();
    let mut b = load_checkpoint(dir.path(), d.images.clone(), &cfg).unwrap();
    assert_eq!(a, b);
    let ra = train(&mut a, &cfg, 3).unwrap();
    let rb = train(&mut b, &cfg, 3).unwrap();
    assert_eq!(ra, rb);

    let moments = dir.path().join("moments.bin");
    let mut bytes = fs::read(&moments).unwrap();
    bytes[0] = b'X';
    fs::write(&moments, &bytes).unwrap();
    let err = load_checkpoint(dir.path(), d.images.clone(), &cfg).unwrap_err();
    assert!(err.to_string().contains("SPLATMO1"), "{err}");
    fs::write(&moments, &[b"SPLATMO1".as_slice(), &[1, 0]].concat()).unwrap();
    assert!(load_checkpoint(dir.path(), d.images.clone(), &cfg).is_err());
}

#[test]
fn metrics_csv_round_trip() {
    let rows = vec![
        EvalRecord {
            iteration: 10,
            frame: 4,
            loss: 0.125,
            psnr: 31.5,
            ssim: 0.93,
        },
        EvalRecord {
            iteration: 10,
            frame: 13,
            loss: 1.0 / 3.0,
            psnr: 27.123456789,
            ssim: -0.01,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, &rows).unwrap();
    assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    fs::write(&path, "bad header\n").unwrap();
    assert!(read_metrics_csv(&path).is_err());
}
