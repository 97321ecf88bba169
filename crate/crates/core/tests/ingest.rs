use std::path::Path;

use proptest::prelude::*;
use yawnforge_core::fixtures::{write_gif, write_standard_corpus};
use yawnforge_core::ingest::{
    build_corpus_manifest, decoder_for, ingest, CorpusManifest, IngestOptions, ViewMapping, MANIFEST_FILE,
};
use yawnforge_core::Error;

/// Count image descriptors by walking the GIF block structure directly.
fn gif_frame_count(bytes: &[u8]) -> usize {
    assert_eq!(&bytes[..3], b"GIF");
    let flags = bytes[10];
    let mut pos = 13;
    if flags & 0x80 != 0 {
        pos += 3 << ((flags & 7) + 1);
    }
    let skip_sub_blocks = |mut p: usize| {
        while bytes[p] != 0 {
            p += bytes[p] as usize + 1;
        }
        p + 1
    };
    let mut frames = 0;
    loop {
        match bytes[pos] {
            0x21 => pos = skip_sub_blocks(pos + 2),
            0x2C => {
                frames += 1;
                let local = bytes[pos + 9];
                pos += 10;
                if local & 0x80 != 0 {
                    pos += 3 << ((local & 7) + 1);
                }
                pos = skip_sub_blocks(pos + 1);
            }
            0x3B => return frames,
            b => panic!("unexpected block 0x{b:02x} at {pos}"),
        }
    }
}

fn tiny_frames(n: usize) -> Vec<image::RgbImage> {
    (0..n).map(|i| image::RgbImage::from_pixel(16, 12, image::Rgb([(i * 20 % 255) as u8, 80, 160]))).collect()
}

#[test]
fn extracted_frames_match_container_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let videos = tmp.path().join("videos");
    let out = tmp.path().join("corpus");
    let truth = write_standard_corpus(&videos).unwrap();
    let manifest = ingest(&videos, &out, &IngestOptions::default()).unwrap();
    assert_eq!(manifest.videos.len(), 2);
    for v in &manifest.videos {
        let bytes = std::fs::read(videos.join(format!("{}.gif", v.video_id))).unwrap();
        let expected = gif_frame_count(&bytes);
        assert_eq!(expected, truth.videos[&v.video_id].labels.len());
        assert_eq!(v.frame_count, expected);
        assert_eq!(v.source_frame_count, expected);
        assert_eq!((v.width, v.height), (truth.width, truth.height));
        assert_eq!(v.fps.as_f64(), 10.0);
        for (i, f) in v.frames.iter().enumerate() {
            assert_eq!(f.index, i);
            assert_eq!(f.frame_id, format!("{}_f{:06}", v.video_id, i));
            assert_eq!(f.timestamp_ms, i as f64 * 100.0);
            assert!(!Path::new(&f.image_path).is_absolute());
            assert!(out.join(&f.image_path).is_file());
        }
    }
    assert_eq!(manifest.total_frames, 20);

    let loaded = CorpusManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.videos, manifest.videos);
    assert!(loaded.resolve(&loaded.videos[0].frames[0].image_path).is_file());
}

#[test]
fn reingest_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let videos = tmp.path().join("videos");
    let out = tmp.path().join("corpus");
    write_standard_corpus(&videos).unwrap();
    ingest(&videos, &out, &IngestOptions::default()).unwrap();
    let first = std::fs::read(out.join(MANIFEST_FILE)).unwrap();
    ingest(&videos, &out, &IngestOptions::default()).unwrap();
    assert_eq!(first, std::fs::read(out.join(MANIFEST_FILE)).unwrap());
}

#[test]
fn duplicate_video_ids_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let d = tmp.path().join(sub);
        std::fs::create_dir_all(&d).unwrap();
        write_gif(&d.join("same.gif"), &tiny_frames(2), 100).unwrap();
    }
    let err = build_corpus_manifest(tmp.path(), &ViewMapping::default()).unwrap_err();
    assert!(matches!(err, Error::DuplicateVideoId(id) if id == "same"));
}

#[test]
fn empty_directory_gives_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = build_corpus_manifest(tmp.path(), &ViewMapping::default()).unwrap();
    assert!(m.videos.is_empty());
    assert_eq!(m.total_frames, 0);
}

#[test]
fn truncated_video_keeps_decoded_prefix() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cut.gif");
    write_gif(&path, &tiny_frames(6), 100).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() * 2 / 3]).unwrap();
    let mut n = 0;
    let outcome = decoder_for(&path)
        .decode(&path, &mut |_| {
            n += 1;
            Ok(())
        })
        .unwrap();
    assert!(n > 0 && n < 6);
    assert_eq!(outcome.frames_decoded, n);
    assert!(!outcome.warnings.is_empty());
}

#[test]
fn yawdd_layout_maps_views_and_behaviors() {
    let tmp = tempfile::tempdir().unwrap();
    let dash = tmp.path().join("Dash").join("Female");
    let mirror = tmp.path().join("Mirror").join("Male_mirror");
    std::fs::create_dir_all(&dash).unwrap();
    std::fs::create_dir_all(&mirror).unwrap();
    write_gif(&dash.join("3-FemaleNoGlasses.gif"), &tiny_frames(1), 100).unwrap();
    write_gif(&mirror.join("7-MaleGlasses-Yawning.gif"), &tiny_frames(1), 100).unwrap();
    let m = build_corpus_manifest(tmp.path(), &ViewMapping::yawdd()).unwrap();
    let views: Vec<String> = m.videos.iter().map(|v| format!("{:?}/{:?}", v.camera_view, v.behavior_tag)).collect();
    assert_eq!(views.len(), 2);
    assert!(views.iter().any(|s| s.starts_with("Dashboard")));
    assert!(views.iter().any(|s| s == "Rearview/Some(Yawning)"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn stride_keeps_every_kth_source_frame(n in 1usize..12, stride in 1usize..5) {
        let tmp = tempfile::tempdir().unwrap();
        let videos = tmp.path().join("v");
        std::fs::create_dir_all(&videos).unwrap();
        write_gif(&videos.join("clip.gif"), &tiny_frames(n), 40).unwrap();
        let opts = IngestOptions { stride, ..Default::default() };
        let m = ingest(&videos, &tmp.path().join("out"), &opts).unwrap();
        let v = &m.videos[0];
        prop_assert_eq!(v.frame_count, n.div_ceil(stride));
        prop_assert_eq!(v.source_frame_count, n);
        let idx: Vec<usize> = v.frames.iter().map(|f| f.index).collect();
        prop_assert_eq!(idx, (0..n).step_by(stride).collect::<Vec<_>>());
    }
}
