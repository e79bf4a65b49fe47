mod common;

use std::collections::BTreeSet;

use common::*;
use funit::dataset::{
    expand_dataset, normalize_class_name, object_keep_list, DatasetManifest, Detection, DetectorErrorPolicy,
    ExpansionConfig, ImageRecord, StubDetector,
};
use funit::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn class_counts_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..40, 2..6)
}

fn named(counts: &[usize]) -> Vec<(String, usize)> {
    counts
        .iter()
        .enumerate()
        .map(|(i, n)| (format!("class {i}"), *n))
        .collect()
}

fn build(counts: &[usize], seed: u64) -> DatasetManifest {
    let named = named(counts);
    let refs: Vec<(&str, usize)> = named.iter().map(|(c, n)| (c.as_str(), *n)).collect();
    manifest_with_counts(&refs, seed)
}

proptest! {
    #[test]
    fn split_partitions_records_by_class(counts in class_counts_strategy(), mask in any::<u8>(), seed in any::<u64>()) {
        let m = build(&counts, seed);
        let classes: Vec<String> = m.classes().iter().map(|c| c.to_string()).collect();
        let test: BTreeSet<String> = classes.iter().enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, c)| c.clone())
            .collect();
        prop_assume!(test.len() < classes.len());
        let (train, held) = m.split_by_class(&test).unwrap();
        prop_assert_eq!(train.len() + held.len(), m.len());
        let train_classes: BTreeSet<String> = train.class_index().keys().cloned().collect();
        let held_classes: BTreeSet<String> = held.class_index().keys().cloned().collect();
        prop_assert!(train_classes.is_disjoint(&held_classes));
        prop_assert_eq!(&held_classes, &test);
        let mut all: Vec<&ImageRecord> = train.records().iter().chain(held.records()).collect();
        all.sort_by(|a, b| a.path.cmp(&b.path));
        let mut original: Vec<&ImageRecord> = m.records().iter().collect();
        original.sort_by(|a, b| a.path.cmp(&b.path));
        prop_assert_eq!(all, original);
    }

    #[test]
    fn balance_caps_classes_and_is_idempotent(counts in class_counts_strategy(), cap in 1usize..30, seed in any::<u64>()) {
        let m = build(&counts, seed);
        let balanced = m.balance_classes(cap).unwrap();
        for (class, n) in m.class_counts() {
            prop_assert_eq!(balanced.class_counts()[&class], n.min(cap));
        }
        prop_assert_eq!(balanced.balance_classes(cap).unwrap(), balanced.clone());
        prop_assert_eq!(m.balance_classes(cap).unwrap(), balanced.clone());
        let paths: BTreeSet<&str> = m.records().iter().map(|r| r.path.as_str()).collect();
        prop_assert!(balanced.records().iter().all(|r| paths.contains(r.path.as_str())));
    }

    #[test]
    fn normalization_is_a_projection(name in "[ A-Za-z\t]{0,24}") {
        let once = normalize_class_name(&name);
        prop_assert_eq!(normalize_class_name(&once), once.clone());
        prop_assert!(!once.contains("  "));
        prop_assert!(!once.chars().any(|c| c.is_uppercase()));
        prop_assert_eq!(once.trim(), once.as_str());
    }

    #[test]
    fn manifest_text_round_trips(counts in class_counts_strategy(), seed in any::<u64>()) {
        let m = build(&counts, seed);
        let back = DatasetManifest::parse(&m.to_manifest_string(), "m.tsv".as_ref()).unwrap();
        prop_assert_eq!(back, m);
    }
}

fn detections_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64, f64, f64)>> {
    prop::collection::vec(
        (0.0..40.0f64, 0.0..40.0f64, 4.0..24.0f64, 4.0..24.0f64, 0.0..1.0f64),
        0..10,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raising_the_threshold_only_removes_crops(raw in detections_strategy(), lo in 0.0..1.0f64, hi in 0.0..1.0f64) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        random_image(64, &mut rng).save_png(&dir.path().join("street.png")).unwrap();
        let m = DatasetManifest::new(vec![ImageRecord::new("street.png", "sunny", 64, 64).unwrap()], 0).unwrap();
        let dets: Vec<Detection> = raw.iter().enumerate()
            .map(|(i, (x, y, w, h, c))| Detection::new([*x, *y, x + w, y + h], format!("thing {}", i % 3), *c))
            .collect();
        let stub = StubDetector::fixed(dets.clone());
        let run = |t: f64, sub: &str| {
            let cfg = ExpansionConfig { confidence_threshold: t, ..ExpansionConfig::default() };
            expand_dataset(&m, &stub, &cfg, dir.path(), sub.as_ref()).unwrap()
        };
        let low = run(lo, "low");
        let high = run(hi, "high");
        let strip = |m: &DatasetManifest| -> BTreeSet<String> {
            m.records().iter().map(|r| r.path.split_once('/').unwrap().1.to_string()).collect()
        };
        prop_assert!(strip(&high).is_subset(&strip(&low)));
        let oracle = |t: f64| dets.iter().filter(|d| {
            let side = |a: f64, b: f64| (b.min(64.0).ceil() - a.floor()) as usize;
            d.confidence > t && side(d.bbox[0], d.bbox[2]) >= 16 && side(d.bbox[1], d.bbox[3]) >= 16
        }).count();
        prop_assert_eq!(low.len(), oracle(lo));
        prop_assert_eq!(high.len(), oracle(hi));
    }
}

#[test]
fn keep_list_has_97_classes_over_27_objects() {
    let keep = object_keep_list();
    assert_eq!(keep.len(), 97);
    let objects: BTreeSet<&str> = keep.iter().map(|c| c.split_once(" - ").unwrap().1).collect();
    assert_eq!(objects.len(), 27);
    for domain in DOMAINS {
        assert!(keep.iter().any(|c| c.starts_with(&format!("{domain} - "))));
    }
}

#[test]
fn expansion_can_keep_whole_images_and_filter_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    random_image(64, &mut rng).save_png(&dir.path().join("a.png")).unwrap();
    let m = DatasetManifest::new(vec![ImageRecord::new("a.png", "night", 64, 64).unwrap()], 0).unwrap();
    let stub = StubDetector::fixed(vec![
        Detection::new([0.0, 0.0, 30.0, 30.0], "car", 0.9),
        Detection::new([30.0, 30.0, 60.0, 60.0], "giraffe", 0.9),
    ]);
    let cfg = ExpansionConfig {
        include_whole_images: true,
        keep_list: Some(object_keep_list()),
        ..ExpansionConfig::default()
    };
    let out = expand_dataset(&m, &stub, &cfg, dir.path(), "crops".as_ref()).unwrap();
    let classes: Vec<&str> = out.classes();
    assert_eq!(classes, vec!["night", "night - car"]);
}

#[test]
fn detector_failures_abort_or_skip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut records = Vec::new();
    for name in ["a.png", "b.png"] {
        random_image(32, &mut rng).save_png(&dir.path().join(name)).unwrap();
        records.push(ImageRecord::new(name, "rainy", 32, 32).unwrap());
    }
    let m = DatasetManifest::new(records, 0).unwrap();
    let stub = StubDetector::fixed(vec![Detection::new([0.0, 0.0, 20.0, 20.0], "bus", 0.8)]).failing_on("a.png");
    let abort = expand_dataset(&m, &stub, &ExpansionConfig::default(), dir.path(), "c".as_ref());
    assert!(matches!(abort, Err(Error::Detector(_))), "{abort:?}");
    let skip = ExpansionConfig {
        on_detector_error: DetectorErrorPolicy::Skip,
        ..ExpansionConfig::default()
    };
    let out = expand_dataset(&m, &stub, &skip, dir.path(), "c".as_ref()).unwrap();
    assert_eq!(out.len(), 1);
    assert!(out.records()[0].path.contains("/b_"));
}

#[test]
fn splitting_every_class_out_is_rejected() {
    let m = manifest_with_counts(&[("a", 2), ("b", 2)], 0);
    let all: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
    assert!(m.split_by_class(&all).is_err());
    let unknown: BTreeSet<String> = ["c".to_string()].into();
    assert!(matches!(m.split_by_class(&unknown), Err(Error::UnknownClass(_))));
}
