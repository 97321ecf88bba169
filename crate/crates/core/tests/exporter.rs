use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use yawnforge_core::annotator::{AnnotationStore, Decision, Ordering};
use yawnforge_core::clock::ManualClock;
use yawnforge_core::exporter::{
    class_balance, denormalize, export_classification, export_detection, format_label_line, parse_label_line,
    plot_timeline, split_videos, timeline_report, DetectionOptions, Include, EXPORT_MANIFEST_FILE,
};
use yawnforge_core::face_pipeline::MouthBox;
use yawnforge_core::fixtures::stub_annotation;
use yawnforge_core::{Error, Label};

fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap()))
}

/// Store over `labels` (one video per entry), frame images written under
/// `img_dir`, everything verified unchanged.
fn verified_store(img_dir: &Path, videos: &[(&str, &[Label])]) -> AnnotationStore {
    std::fs::create_dir_all(img_dir).unwrap();
    let mut store = AnnotationStore::in_memory(clock());
    let mut anns = Vec::new();
    for (video, labels) in videos {
        for (i, &label) in labels.iter().enumerate() {
            let mut a = stub_annotation(video, i, label, 0.9);
            let path = img_dir.join(format!("{}.png", a.frame_id));
            image::RgbImage::from_pixel(64, 48, image::Rgb([i as u8, 9, 9])).save(&path).unwrap();
            a.image_path = path.to_string_lossy().into_owned();
            anns.push(a);
        }
    }
    store.add_annotations(anns).unwrap();
    while let Some(b) = store.open_next_batch(64, Ordering::ByVideo).unwrap() {
        let d: Vec<Decision> =
            b.items.iter().map(|i| Decision { frame_id: i.frame_id.clone(), final_label: i.auto_label }).collect();
        store.apply_corrections(&b.batch_id, &d, "r").unwrap();
    }
    store
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|r| r.count()).unwrap_or(0)
}

use Label::{NoFace as F, NoYawn as N, Yawn as Y};

#[test]
fn classification_export_matches_recount() {
    let tmp = tempfile::tempdir().unwrap();
    let store = verified_store(&tmp.path().join("img"), &[("v", &[Y, N, N, F, Y, N, Y, F, N, N])]);
    let out = tmp.path().join("out");
    let m = export_classification(&store, &out, Include::VerifiedOnly).unwrap();
    assert_eq!(m.counts[&Label::Yawn], 3);
    assert_eq!(m.counts[&Label::NoYawn], 5);
    assert_eq!(m.excluded_no_face, 2);
    assert_eq!(count_files(&out.join("yawn")), 3);
    assert_eq!(count_files(&out.join("no_yawn")), 5);
    assert!(!out.join("no_face").exists());
    assert_eq!(m.source_store_hash, store.hash());
    assert_eq!(m.created_at, store.last_event_ts());

    let first = std::fs::read(out.join(EXPORT_MANIFEST_FILE)).unwrap();
    export_classification(&store, &out, Include::VerifiedOnly).unwrap();
    assert_eq!(first, std::fs::read(out.join(EXPORT_MANIFEST_FILE)).unwrap());
}

#[test]
fn empty_selection_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut store = AnnotationStore::in_memory(clock());
    store.add_annotations(vec![stub_annotation("v", 0, Y, 0.9)]).unwrap();
    let out = tmp.path().join("out");
    assert!(matches!(export_classification(&store, &out, Include::VerifiedOnly), Err(Error::NothingVerified)));
    assert!(!out.exists());
    let only_no_face = verified_store(&tmp.path().join("img"), &[("v", &[F, F])]);
    assert!(export_classification(&only_no_face, &out, Include::All).is_err());
    assert!(!out.exists());
}

#[test]
fn export_refuses_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let store = verified_store(&tmp.path().join("img"), &[("v", &[Y, N])]);
    let out = tmp.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("notes.txt"), "mine").unwrap();
    assert!(matches!(export_classification(&store, &out, Include::All), Err(Error::Export(_))));
    assert_eq!(std::fs::read_to_string(out.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn detection_export_writes_darknet_labels_and_video_split() {
    let tmp = tempfile::tempdir().unwrap();
    let store = verified_store(
        &tmp.path().join("img"),
        &[("a", &[Y, N, F]), ("b", &[N, N]), ("c", &[Y]), ("d", &[N, Y]), ("e", &[N])],
    );
    let out = tmp.path().join("det");
    let m = export_detection(&store, &out, &DetectionOptions { seed: 4, ..Default::default() }).unwrap();
    assert_eq!(m.counts[&Label::Yawn] + m.counts[&Label::NoYawn], 8);
    assert_eq!(m.excluded_no_face, 1);
    assert_eq!(count_files(&out.join("labels")), 8);
    assert_eq!(count_files(&out.join("images")), 8);
    let split = m.split.unwrap();
    assert_eq!((split.train_videos.len(), split.val_videos.len()), (4, 1));
    assert_eq!(split.train_images + split.val_images, 8);
    let line = std::fs::read_to_string(out.join("labels").join("a_f000000.txt")).unwrap();
    assert_eq!(line, "0 0.500000 0.687500 0.375000 0.291667\n");
    let train = std::fs::read_to_string(out.join("train.txt")).unwrap();
    let val = std::fs::read_to_string(out.join("val.txt")).unwrap();
    for v in &split.val_videos {
        assert!(!train.contains(&format!("images/{v}_f")));
        assert!(val.contains(&format!("images/{v}_f")));
    }
    assert!(std::fs::read_to_string(out.join("data.yaml")).unwrap().contains("names: [yawn, no_yawn]"));
}

#[test]
fn frames_without_mouth_box_are_skipped_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut store = verified_store(&tmp.path().join("img"), &[("v", &[F, N])]);
    // rescue the no_face frame as a yawn: it has no box
    let mut a = stub_annotation("w", 0, F, 0.0);
    let p = tmp.path().join("img").join("w.png");
    image::RgbImage::new(64, 48).save(&p).unwrap();
    a.image_path = p.to_string_lossy().into_owned();
    store.add_annotations(vec![a]).unwrap();
    let b = store.open_next_batch(64, Ordering::ByVideo).unwrap().unwrap();
    store.apply_corrections(&b.batch_id, &[Decision { frame_id: "w_f000000".into(), final_label: Y }], "r").unwrap();
    let out = tmp.path().join("det");
    let m = export_detection(&store, &out, &DetectionOptions::default()).unwrap();
    assert_eq!(m.skipped, 1);
    let skipped = std::fs::read_to_string(out.join("skipped.json")).unwrap();
    assert!(skipped.contains("w_f000000"));
}

#[test]
fn split_keeps_both_sides_non_empty() {
    let vids: Vec<String> = (0..5).map(|i| format!("v{i}")).collect();
    for frac in [0.01, 0.5, 0.8, 0.99] {
        let (t, v) = split_videos(&vids, frac, 3);
        assert!(!t.is_empty() && !v.is_empty());
        assert_eq!(t.len() + v.len(), 5);
    }
    assert_eq!(split_videos(&vids[..1], 0.8, 3).0.len(), 1);
    assert_eq!(split_videos(&vids, 0.8, 7), split_videos(&vids, 0.8, 7));
}

#[test]
fn timeline_runs_and_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let store = verified_store(&tmp.path().join("img"), &[("v", &[N, N, Y, Y, Y, N, Y])]);
    let t = timeline_report(store.state(), "v").unwrap();
    assert_eq!((t.counts.yawn, t.counts.no_yawn, t.counts.no_face), (4, 3, 0));
    assert_eq!(t.episodes, vec![(2, 4), (6, 6)]);
    let plot = tmp.path().join("plot.png");
    plot_timeline(&t, &plot).unwrap();
    assert!(image::open(&plot).is_ok());
    assert!(matches!(timeline_report(store.state(), "nope"), Err(Error::UnknownVideo(_))));
}

#[test]
fn class_balance_recounts() {
    let empty = AnnotationStore::in_memory(clock());
    let b = class_balance(empty.state());
    assert_eq!(b.counts.total(), 0);
    assert_eq!(b.ratio, None);
    let tmp = tempfile::tempdir().unwrap();
    let store = verified_store(&tmp.path().join("img"), &[("a", &[Y, N, N, N, F]), ("b", &[Y, N])]);
    let b = class_balance(store.state());
    assert_eq!((b.counts.yawn, b.counts.no_yawn, b.counts.no_face), (2, 4, 1));
    assert_eq!(b.ratio, Some(0.5));
    assert_eq!(b.per_video.len(), 2);
}

proptest! {
    #[test]
    fn label_lines_round_trip(w in 1u32..4000, h in 1u32..4000, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64, d in 0.0..1.0f64) {
        let (x0, x1) = ((a.min(b) * w as f64) as i64, (a.max(b) * w as f64) as i64 + 1);
        let (y0, y1) = ((c.min(d) * h as f64) as i64, (c.max(d) * h as f64) as i64 + 1);
        let mb = MouthBox { x0, y0, x1: x1.min(w as i64), y1: y1.min(h as i64), margin_px: 10 };
        prop_assume!(mb.x1 > mb.x0 && mb.y1 > mb.y0);
        let line = format_label_line(1, &mb, w, h);
        let (class, v) = parse_label_line(&line).unwrap();
        prop_assert_eq!(class, 1);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        let back = denormalize(v, w, h);
        for (got, want) in back.iter().zip([mb.x0, mb.y0, mb.x1, mb.y1]) {
            prop_assert!((got - want).abs() <= 1, "{line}: {back:?} vs {mb:?}");
        }
    }
}
