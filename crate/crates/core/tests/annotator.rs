use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use yawnforge_core::annotator::{
    agreement_report, auto_annotate, make_batches, progress, AnnotateOptions, AnnotationStore, BatchState, Checkout,
    Decision, MouthClassifier, Ordering, Status, EVENTS_FILE,
};
use yawnforge_core::clock::ManualClock;
use yawnforge_core::face_pipeline::{BackendRegistry, FaceBox, FaceDetector, FrameInput};
use yawnforge_core::fixtures::{stub_annotation, write_standard_corpus};
use yawnforge_core::ingest::{ingest, IngestOptions};
use yawnforge_core::mouth_net::Prediction;
use yawnforge_core::{Error, Label, MouthState, Result};

fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap()))
}

fn store_with(n: usize) -> AnnotationStore {
    let mut store = AnnotationStore::in_memory(clock());
    let anns = (0..n)
        .map(|i| {
            let label = [Label::Yawn, Label::NoYawn, Label::NoYawn, Label::NoFace][i % 4];
            stub_annotation(&format!("v{}", i / 50), i % 50, label, 0.5 + (i * 37 % 50) as f64 / 100.0)
        })
        .collect();
    store.add_annotations(anns).unwrap();
    store
}

fn keep_all(batch: &yawnforge_core::annotator::ReviewBatch) -> Vec<Decision> {
    batch.items.iter().map(|i| Decision { frame_id: i.frame_id.clone(), final_label: i.auto_label }).collect()
}

#[test]
fn batch_sizes_follow_division() {
    for (n, sizes) in [(130, vec![64, 64, 2]), (0, vec![]), (64, vec![64])] {
        let store = store_with(n);
        let batches = make_batches(store.state(), 64, Ordering::ByVideo).unwrap();
        assert_eq!(batches.iter().map(|b| b.items.len()).collect::<Vec<_>>(), sizes);
    }
}

#[test]
fn batches_partition_pending_work() {
    for n in (0..300).step_by(7) {
        let store = store_with(n);
        for ordering in [Ordering::ByVideo, Ordering::ByConfidenceAsc] {
            let batches = make_batches(store.state(), 64, ordering).unwrap();
            assert_eq!(batches.len(), n.div_ceil(64));
            let ids: Vec<&str> = batches.iter().flat_map(|b| b.frame_ids()).collect();
            let unique: HashSet<&str> = ids.iter().copied().collect();
            assert_eq!(ids.len(), n);
            assert_eq!(unique.len(), n);
            assert!(batches.iter().rev().skip(1).all(|b| b.items.len() == 64));
        }
    }
}

#[test]
fn confidence_ordering_surfaces_uncertain_items_first() {
    let store = store_with(100);
    let batches = make_batches(store.state(), 64, Ordering::ByConfidenceAsc).unwrap();
    let conf: Vec<f64> = batches.iter().flat_map(|b| b.items.iter().map(|i| i.confidence)).collect();
    assert!(conf.windows(2).all(|w| w[0] <= w[1]));
    assert!(batches[0].items.iter().any(|i| i.flagged));
}

#[test]
fn batch_ids_are_content_hashes() {
    let a = make_batches(store_with(70).state(), 64, Ordering::ByVideo).unwrap();
    let b = make_batches(store_with(70).state(), 64, Ordering::ByVideo).unwrap();
    assert_eq!(a[0].batch_id, b[0].batch_id);
    assert_ne!(a[0].batch_id, a[1].batch_id);
}

#[test]
fn corrections_flip_labels_and_keep_auto_labels() {
    let mut store = AnnotationStore::in_memory(clock());
    store
        .add_annotations(vec![
            stub_annotation("v", 0, Label::Yawn, 0.9),
            stub_annotation("v", 1, Label::Yawn, 0.8),
            stub_annotation("v", 2, Label::NoYawn, 0.7),
        ])
        .unwrap();
    let batch = store.open_next_batch(64, Ordering::ByVideo).unwrap().unwrap();
    let mut decisions = keep_all(&batch);
    decisions[1].final_label = Label::NoYawn;
    let summary = store.apply_corrections(&batch.batch_id, &decisions, "ana").unwrap();
    assert_eq!((summary.verified_delta, summary.corrected, summary.noop), (3, 1, false));
    let anns: Vec<_> = store.state().annotations.values().collect();
    assert_eq!(anns.iter().map(|a| a.label).collect::<Vec<_>>(), [Label::Yawn, Label::NoYawn, Label::NoYawn]);
    assert_eq!(anns.iter().map(|a| a.auto_label).collect::<Vec<_>>(), [Label::Yawn, Label::Yawn, Label::NoYawn]);
    assert!(anns.iter().all(|a| a.status == Status::Verified && a.reviewer.is_some() && a.reviewed_at.is_some()));

    let hash = store.hash();
    let seq = store.last_seq();
    let again = store.apply_corrections(&batch.batch_id, &decisions, "ana").unwrap();
    assert!(again.noop);
    assert_eq!(store.hash(), hash);
    assert_eq!(store.last_seq(), seq + 1);
    assert_eq!(store.events().unwrap().last().unwrap().body.kind(), "noop_resubmission");

    decisions[0].final_label = Label::NoYawn;
    assert!(matches!(store.apply_corrections(&batch.batch_id, &decisions, "ana"), Err(Error::AlreadySubmitted(_))));
}

#[test]
fn bad_submissions_write_nothing() {
    let mut store = store_with(5);
    let batch = store.open_next_batch(64, Ordering::ByVideo).unwrap().unwrap();
    let seq = store.last_seq();
    let mut partial = keep_all(&batch);
    let dropped = partial.pop().unwrap();
    match store.apply_corrections(&batch.batch_id, &partial, "r") {
        Err(Error::IncompleteDecisions { missing, .. }) => assert_eq!(missing, vec![dropped.frame_id.clone()]),
        other => panic!("{other:?}"),
    }
    let mut extra = keep_all(&batch);
    extra.push(Decision { frame_id: "ghost".into(), final_label: Label::Yawn });
    assert!(matches!(store.apply_corrections(&batch.batch_id, &extra, "r"), Err(Error::UnknownFrame(_))));
    assert!(matches!(store.apply_corrections("b-nope", &keep_all(&batch), "r"), Err(Error::UnknownBatch(_))));
    assert_eq!(store.last_seq(), seq);
    assert_eq!(store.state().verified_count(), 0);
}

#[test]
fn agreement_counts_unchanged_labels() {
    let mut store = AnnotationStore::in_memory(clock());
    let anns = (0..10).map(|i| stub_annotation("v", i, if i < 4 { Label::Yawn } else { Label::NoYawn }, 0.9)).collect();
    store.add_annotations(anns).unwrap();
    assert!(matches!(agreement_report(store.state()), Err(Error::NothingVerified)));
    let batch = store.open_next_batch(64, Ordering::ByVideo).unwrap().unwrap();
    let mut d = keep_all(&batch);
    d[0].final_label = Label::NoYawn; // false positive
    d[9].final_label = Label::Yawn; // false negative
    store.apply_corrections(&batch.batch_id, &d, "r").unwrap();
    let r = agreement_report(store.state()).unwrap();
    assert_eq!((r.verified, r.agreed, r.fp, r.fn_), (10, 8, 1, 1));
    assert!((r.agreement_rate - 0.8).abs() < 1e-12);
    let p = progress(store.state());
    assert_eq!((p.total, p.auto, p.verified), (10, 0, 10));
}

#[test]
fn checkouts_are_exclusive_and_locks_expire() {
    let clock = clock();
    let mut store = AnnotationStore::in_memory(clock.clone());
    store.add_annotations((0..100).map(|i| stub_annotation("v", i, Label::NoYawn, 0.9)).collect()).unwrap();
    let ttl = Duration::minutes(30);
    let Checkout::Batch(a) = store.checkout("s1", "ana", Ordering::ByVideo, 64, ttl).unwrap() else { panic!() };
    let Checkout::Batch(b) = store.checkout("s2", "bo", Ordering::ByVideo, 64, ttl).unwrap() else { panic!() };
    let ids_a: HashSet<&str> = a.frame_ids().collect();
    assert!(b.frame_ids().all(|f| !ids_a.contains(f)));
    assert_eq!(a.items.len() + b.items.len(), 100);
    let Checkout::Batch(a2) = store.checkout("s1", "ana", Ordering::ByVideo, 64, ttl).unwrap() else { panic!() };
    assert_eq!(a2.batch_id, a.batch_id);
    match store.checkout("s3", "cy", Ordering::ByVideo, 64, ttl).unwrap() {
        Checkout::Busy { retry_after_secs } => assert_eq!(retry_after_secs, 1800),
        other => panic!("{other:?}"),
    }
    assert!(matches!(store.submit("s2", &a.batch_id, &keep_all(&a), "bo"), Err(Error::LockConflict { .. })));

    clock.advance(Duration::minutes(31));
    let Checkout::Batch(reclaimed) = store.checkout("s3", "cy", Ordering::ByVideo, 64, ttl).unwrap() else { panic!() };
    assert_eq!(reclaimed.batch_id, a.batch_id);
    assert!(matches!(store.submit("s1", &a.batch_id, &keep_all(&a), "ana"), Err(Error::LockConflict { .. })));
    store.submit("s3", &a.batch_id, &keep_all(&a), "cy").unwrap();
    assert_eq!(store.state().batches[&a.batch_id].state, BatchState::Submitted);
}

#[test]
fn store_survives_reopen_and_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let hash;
    {
        let mut store = AnnotationStore::open(dir.path(), clock()).unwrap();
        store.add_annotations((0..10).map(|i| stub_annotation("v", i, Label::Yawn, 0.9)).collect()).unwrap();
        let batch = store.open_next_batch(4, Ordering::ByVideo).unwrap().unwrap();
        store.apply_corrections(&batch.batch_id, &keep_all(&batch), "r").unwrap();
        store.open_next_batch(4, Ordering::ByVideo).unwrap();
        hash = store.hash();
        assert_eq!(store.replay().unwrap(), *store.state());
    }
    let log = dir.path().join(EVENTS_FILE);
    let clean = std::fs::read(&log).unwrap();
    let mut torn = clean.clone();
    torn.extend_from_slice(b"{\"seq\":99,\"ts\":\"2024");
    std::fs::write(&log, &torn).unwrap();
    let store = AnnotationStore::open(dir.path(), clock()).unwrap();
    assert_eq!(store.hash(), hash);
    assert_eq!(std::fs::read(&log).unwrap(), clean);
    assert_eq!(store.replay().unwrap(), *store.state());

    std::fs::remove_file(dir.path().join(yawnforge_core::annotator::SNAPSHOT_FILE)).unwrap();
    let from_log = AnnotationStore::open(dir.path(), clock()).unwrap();
    assert_eq!(from_log.hash(), hash);
}

struct NoFaces;

impl FaceDetector for NoFaces {
    fn detect(&mut self, _: &FrameInput<'_>) -> Result<Vec<FaceBox>> {
        Ok(Vec::new())
    }
}

/// Returns the programmed label for each frame id.
struct Programmed(BTreeMap<String, Label>);

impl MouthClassifier for Programmed {
    fn classify(&self, frame_id: &str, _crop: &image::RgbImage) -> Result<Prediction> {
        let yawn = self.0.get(frame_id) == Some(&Label::Yawn);
        Prediction::from_scores(if yawn { [0.9, 0.1] } else { [0.2, 0.8] })
    }
}

#[test]
fn auto_annotation_follows_stub_backends_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = write_standard_corpus(&tmp.path().join("videos")).unwrap();
    let mut manifest =
        ingest(&tmp.path().join("videos"), &tmp.path().join("corpus"), &IngestOptions::default()).unwrap();
    let mut programmed = BTreeMap::new();
    for v in &manifest.videos {
        for f in &v.frames {
            programmed.insert(f.frame_id.clone(), truth.label_of(&v.video_id, f.index).unwrap());
        }
    }
    let classifier = Programmed(programmed.clone());
    let registry = BackendRegistry::with_builtin();
    let mut store = AnnotationStore::open(&tmp.path().join("store"), clock()).unwrap();
    let summary = auto_annotate(&mut store, &manifest, &classifier, &registry, &AnnotateOptions::default()).unwrap();
    assert_eq!((summary.annotated, summary.no_face, summary.failed), (20, 0, 0));
    for a in store.state().annotations.values() {
        assert_eq!(a.label, programmed[&a.frame_id]);
        assert_eq!(a.status, Status::Auto);
        assert!(a.mouth_box.is_some());
        let crop = store.dir().unwrap().join(a.crop_path.as_ref().unwrap());
        assert!(crop.is_file(), "{}", crop.display());
        assert!(crop.file_name().unwrap().to_string_lossy().ends_with("_mouth.png"));
    }
    let again = auto_annotate(&mut store, &manifest, &classifier, &registry, &AnnotateOptions::default()).unwrap();
    assert_eq!((again.annotated, again.already_annotated), (0, 20));

    // a missing still becomes a failure record, not an abort
    let extra = manifest.videos[0].frames[0].clone();
    let mut ghost = extra.clone();
    ghost.frame_id = "driver_a_f999999".into();
    ghost.image_path = "frames/missing.png".into();
    manifest.videos[0].frames.push(ghost);
    let s = auto_annotate(&mut store, &manifest, &classifier, &registry, &AnnotateOptions::default()).unwrap();
    assert_eq!(s.failed, 1);
    assert!(store.state().failures.contains_key("driver_a_f999999"));

    let mut blind = BackendRegistry::with_builtin();
    blind.register_detector("blind", || Ok(Box::new(NoFaces)));
    let opts = AnnotateOptions {
        detector: yawnforge_core::face_pipeline::DetectorConfig { backend_id: "blind".into(), ..Default::default() },
        ..Default::default()
    };
    let mut other = AnnotationStore::in_memory(clock());
    let s = auto_annotate(&mut other, &manifest, &classifier, &blind, &opts).unwrap();
    assert_eq!(s.no_face, 20);
    assert!(other
        .state()
        .annotations
        .values()
        .all(|a| a.label == Label::NoFace && a.confidence == 0.0 && a.mouth_box.is_none()));
    let _ = MouthState::Yawn;
}

#[derive(Debug, Clone)]
enum Op {
    Open(usize),
    Submit { pick: usize, flips: Vec<usize>, reviewer: u8 },
    Resubmit(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (1usize..80).prop_map(Op::Open),
        (any::<usize>(), prop::collection::vec(0usize..80, 0..6), 0u8..3)
            .prop_map(|(pick, flips, reviewer)| Op::Submit { pick, flips, reviewer }),
        any::<usize>().prop_map(Op::Resubmit),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn replaying_the_log_reproduces_state(ops in prop::collection::vec(op(), 1..30)) {
        let mut store = store_with(200);
        let autos: BTreeMap<String, Label> =
            store.state().annotations.values().map(|a| (a.frame_id.clone(), a.auto_label)).collect();
        let mut verified = 0;
        for op in ops {
            match op {
                Op::Open(size) => { store.open_next_batch(size, Ordering::ByConfidenceAsc).unwrap(); }
                Op::Submit { pick, flips, reviewer } => {
                    let open: Vec<_> = store.state().batches.values().filter(|b| b.state == BatchState::Open).cloned().collect();
                    if open.is_empty() { continue; }
                    let b = &open[pick % open.len()];
                    let mut d = keep_all(b);
                    for f in flips {
                        let n = d.len();
                        let item = &mut d[f % n];
                        item.final_label = Label::ALL[(Label::ALL.iter().position(|l| *l == item.final_label).unwrap() + 1) % 3];
                    }
                    store.apply_corrections(&b.batch_id, &d, &format!("r{reviewer}")).unwrap();
                }
                Op::Resubmit(pick) => {
                    let done: Vec<_> = store.state().batches.values().filter(|b| b.state == BatchState::Submitted).cloned().collect();
                    if done.is_empty() { continue; }
                    let b = &done[pick % done.len()];
                    let d: Vec<Decision> = b.decisions.as_ref().unwrap().iter()
                        .map(|(f, l)| Decision { frame_id: f.clone(), final_label: *l }).collect();
                    prop_assert!(store.apply_corrections(&b.batch_id, &d, "again").unwrap().noop);
                }
            }
            let now = store.state().verified_count();
            prop_assert!(now >= verified);
            verified = now;
        }
        prop_assert_eq!(&store.replay().unwrap(), store.state());
        for a in store.state().annotations.values() {
            prop_assert_eq!(a.auto_label, autos[&a.frame_id]);
        }
    }
}
