use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lanet::data::manifest::{build_manifest, DatasetKind, DatasetManifest};
use lanet::data::synth::{write_ddr_scr, write_ddr_seg, write_fgadr_seg, write_idrid_seg, SynthConfig};
use lanet::data::{load_split, ScreenLabel, Split};
use lanet::data::preprocess::PreprocessConfig;
use lanet::Error;

fn counts(m: &DatasetManifest) -> [usize; 3] {
    Split::ALL.map(|s| m.count(s))
}

#[test]
fn idrid_splits_are_40_14_27() {
    let dir = tempfile::tempdir().unwrap();
    write_idrid_seg(dir.path(), 54, 27, &SynthConfig::new(24), 1).unwrap();
    let m = build_manifest(dir.path(), DatasetKind::IdridSeg).unwrap();
    assert_eq!(counts(&m), [40, 14, 27]);
    // EX is always drawn, so every image has an EX mask
    assert!(m.entries.iter().all(|e| e.masks.contains_key(&lanet::Lesion::EX)));
    // the published test set stays the test split
    let test_ids: Vec<_> = m.split(Split::Test).map(|e| e.id.as_str()).collect();
    assert_eq!(test_ids.first(), Some(&"IDRiD_55"));

    let again = build_manifest(dir.path(), DatasetKind::IdridSeg).unwrap();
    assert_eq!(m.to_jsonl(), again.to_jsonl());
}

#[test]
fn ddr_screening_maps_grades() {
    let dir = tempfile::tempdir().unwrap();
    write_ddr_scr(dir.path(), [(3133, 2671, 12), (20, 15, 3), (25, 30, 4)], 8, 2).unwrap();
    let m = build_manifest(dir.path(), DatasetKind::DdrScr).unwrap();
    assert_eq!(m.label_count(Split::Train, ScreenLabel::NoDR), 3133);
    assert_eq!(m.label_count(Split::Train, ScreenLabel::NPDR), 2671);
    assert_eq!(counts(&m), [5804, 35, 55]);
    for e in &m.entries {
        let g = e.grade.unwrap();
        assert!(g <= 3);
        assert_eq!(e.label, Some(if g == 0 { ScreenLabel::NoDR } else { ScreenLabel::NPDR }));
    }
}

#[test]
fn fgadr_drops_pdr_and_splits_920_369_553() {
    let dir = tempfile::tempdir().unwrap();
    write_fgadr_seg(dir.path(), 1842 + 40, 40, &SynthConfig::new(8), 3).unwrap();
    let m = build_manifest(dir.path(), DatasetKind::FgadrSeg).unwrap();
    assert_eq!(counts(&m), [920, 369, 553]);
    assert!(m.entries.iter().all(|e| e.grade != Some(4)));
}

#[test]
fn ddr_segmentation_loads_aligned_samples() {
    let dir = tempfile::tempdir().unwrap();
    write_ddr_seg(dir.path(), [3, 2, 2], &SynthConfig::new(40), 4).unwrap();
    let m = build_manifest(dir.path(), DatasetKind::DdrSeg).unwrap();
    assert_eq!(counts(&m), [3, 2, 2]);
    let cfg = PreprocessConfig {
        input_size: 32,
        ..PreprocessConfig::default()
    };
    let samples = load_split(&m, Split::Train, &cfg).unwrap();
    for s in &samples {
        assert_eq!(s.image.dim(), (3, 32, 32));
        assert_eq!(s.mask.as_ref().unwrap().dim(), (4, 32, 32));
    }
}

#[test]
fn manifest_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    write_ddr_seg(dir.path(), [2, 1, 1], &SynthConfig::new(24), 5).unwrap();
    let m = build_manifest(dir.path(), DatasetKind::DdrSeg).unwrap();
    let p = dir.path().join("m.jsonl");
    m.save(&p).unwrap();
    let back = DatasetManifest::load(&p).unwrap();
    assert_eq!(back.to_jsonl(), m.to_jsonl());
    assert_eq!(fs::read_to_string(&p).unwrap(), m.to_jsonl());
}

#[test]
fn malformed_layouts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        build_manifest(&dir.path().join("nope"), DatasetKind::IdridSeg),
        Err(Error::MissingLayout { .. })
    ));
    fs::create_dir_all(dir.path().join("A. Segmentation/1. Original Images/a. Training Set")).unwrap();
    let err = build_manifest(dir.path(), DatasetKind::IdridSeg).unwrap_err();
    assert!(err.to_string().contains("Groundtruths"), "{err}");
}

fn tree_digest(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn scanning_and_loading_leave_the_dataset_untouched() {
    let dir = tempfile::tempdir().unwrap();
    write_idrid_seg(dir.path(), 5, 2, &SynthConfig::new(24), 6).unwrap();
    let before = tree_digest(dir.path());
    let m = build_manifest(dir.path(), DatasetKind::IdridSeg).unwrap();
    let cfg = PreprocessConfig {
        input_size: 16,
        ..PreprocessConfig::default()
    };
    for s in Split::ALL {
        load_split(&m, s, &cfg).unwrap();
    }
    assert_eq!(before, tree_digest(dir.path()));
}
