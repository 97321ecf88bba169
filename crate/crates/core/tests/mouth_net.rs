use std::time::Instant;

use yawnforge_core::fixtures::{mouth_crop_dataset, write_dataset};
use yawnforge_core::mouth_net::{load_dataset, train, ModelArtifact, TrainConfig};

#[test]
fn synthetic_mouths_train_to_high_accuracy_reproducibly() {
    let data = mouth_crop_dataset(500, 11);
    let cfg = TrainConfig { epochs: 5, ..Default::default() };
    let t = Instant::now();
    let a = train(&data, &cfg).unwrap();
    eprintln!("trained in {:?}: {:?}", t.elapsed(), a.metrics);
    assert!(a.metrics.test_accuracy.unwrap() >= 0.95);
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
}

#[test]
fn dataset_round_trips_through_class_folders() {
    let dir = tempfile::tempdir().unwrap();
    let data = mouth_crop_dataset(12, 3);
    write_dataset(dir.path(), &data).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 12);
    assert_eq!(loaded.iter().filter(|d| d.label.index() == 0).count(), 6);
}

#[test]
fn artifact_survives_disk() {
    let data = mouth_crop_dataset(40, 5);
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    let out = train(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.yfz");
    out.model.save(&path).unwrap();
    let back = ModelArtifact::load(&path).unwrap();
    for d in &data[..5] {
        assert_eq!(out.model.predict(&d.image).unwrap(), back.predict(&d.image).unwrap());
    }
}
