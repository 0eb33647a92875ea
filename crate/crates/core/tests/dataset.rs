use std::sync::Arc;

use isoform_core::dataset::*;
use isoform_core::pipeline::{synth_suite, SuiteSpec};
use isoform_core::pose::{ClipSequence, KeypointFrame, SkeletonProfile};
use isoform_core::synth::Archetype;
use isoform_core::Execution;
use proptest::prelude::*;

fn coco() -> Arc<SkeletonProfile> {
    Arc::new(SkeletonProfile::coco17())
}

/// Micro-unit values survive six-decimal formatting exactly.
fn micro(lo: i64, hi: i64) -> impl Strategy<Value = f64> {
    (lo..hi).prop_map(|k| k as f64 / 1e6)
}

fn frame_rows() -> impl Strategy<Value = Vec<(Vec<[f64; 2]>, Vec<f64>)>> {
    prop::collection::vec(
        (
            prop::collection::vec((micro(-500_000, 1_500_000), micro(-500_000, 1_500_000)).prop_map(|(x, y)| [x, y]), 17),
            prop::collection::vec(micro(0, 1_000_000), 17),
        ),
        1..30,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(rows in frame_rows(), step in 1..100_000i64) {
        let frames: Vec<KeypointFrame> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (pts, conf))| KeypointFrame::new((i as i64 * step) as f64 / 1e3, pts, conf))
            .collect();
        let clip = ClipSequence::new(coco(), frames, None, "tree").unwrap();
        let mut buf = Vec::new();
        format_clip(&clip, &mut buf).unwrap();
        let back = parse_clip(buf.as_slice(), coco(), "tree").unwrap();
        prop_assert_eq!(back.clamped, 0);
        prop_assert_eq!(&back.clip.frames, &clip.frames);
        let mut again = Vec::new();
        format_clip(&back.clip, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}

fn one_row(joints: usize) -> String {
    let mut s = csv_header(joints).join(",");
    s.push_str("\n0,0.0");
    s.push_str(&",0.5,0.5,1.0".repeat(joints));
    s.push('\n');
    s
}

#[test]
fn wrong_joint_count_is_a_schema_mismatch() {
    let err = parse_clip(one_row(33).as_bytes(), coco(), "tree").unwrap_err();
    assert!(matches!(err, DatasetError::SchemaMismatch(_)), "{err}");
    let landmarks = Arc::new(SkeletonProfile::landmarks33());
    assert_eq!(parse_clip(one_row(33).as_bytes(), landmarks, "tree").unwrap().clip.len(), 1);
}

#[test]
fn header_names_are_checked() {
    let text = one_row(17).replacen("j3_y", "j3_z", 1);
    assert!(matches!(
        parse_clip(text.as_bytes(), coco(), "tree"),
        Err(DatasetError::SchemaMismatch(_))
    ));
}

#[test]
fn time_must_increase() {
    let mut text = one_row(17);
    text.push_str("1,0.0");
    text.push_str(&",0.5,0.5,1.0".repeat(17));
    text.push('\n');
    assert!(matches!(
        parse_clip(text.as_bytes(), coco(), "tree"),
        Err(DatasetError::NonMonotonicTime { row: 1 })
    ));
}

#[test]
fn header_only_file_is_empty() {
    let text = csv_header(17).join(",") + "\n";
    assert!(matches!(parse_clip(text.as_bytes(), coco(), "tree"), Err(DatasetError::EmptyFile)));
}

#[test]
fn far_coordinates_are_clamped_and_counted() {
    let text = one_row(17).replacen("0,0.0,0.5,0.5", "0,0.0,9.0,-3.0", 1);
    let parsed = parse_clip(text.as_bytes(), coco(), "tree").unwrap();
    assert_eq!(parsed.clamped, 2);
    assert_eq!(parsed.clip.frames[0].points[0], [1.5, -0.5]);
}

#[test]
fn manifest_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tree");
    let mut spec = SuiteSpec::new(Archetype::Tree);
    spec.reps_per_class = 2;
    spec.clips_per_class = 2;
    let (manifest, clips) = synth_suite(&spec, Execution::Sequential).unwrap();
    for (entry, c) in manifest.clips.iter().zip(&clips) {
        write_clip(&c.clip, &root.join(&entry.path)).unwrap();
    }
    manifest.save(&root.join("manifest.json")).unwrap();

    let loaded = DatasetManifest::load(&root.join("manifest.json")).unwrap();
    assert_eq!(loaded, manifest);
    let read = loaded.read_clips(&root, coco()).unwrap();
    assert_eq!(read.len(), clips.len());
    for ((id, clip), original) in read.iter().zip(&clips) {
        assert_eq!(id, &original.id);
        assert_eq!(clip.label, original.clip.label);
        assert_eq!(clip.exercise, "tree");
        assert_eq!(clip.len(), original.clip.len());
    }
    assert_eq!(
        exercise_from_path(&root.join(&manifest.clips[0].path)).as_deref(),
        Some("tree")
    );
}

#[test]
fn manifest_must_start_with_correct() {
    let m = DatasetManifest {
        exercise: "tree".into(),
        classes: vec!["a".into(), "b".into(), "c".into()],
        clips: vec![],
        profile: "coco17".into(),
    };
    assert!(matches!(m.validate(), Err(DatasetError::InvalidManifest(_))));
    let m = DatasetManifest { classes: vec!["correct".into()], ..m };
    assert!(matches!(m.validate(), Err(DatasetError::InvalidManifest(_))));
}

#[test]
fn missing_clip_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_clip(&dir.path().join("nope.csv"), coco()).unwrap_err();
    assert!(err.to_string().contains("nope.csv"), "{err}");
}
