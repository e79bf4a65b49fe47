//! Turns whole street images into per-object classes with a fixture
//! detector, then keeps only the curated object classes.
//!
//! `cargo run --release --example expansion`

use funit::dataset::{
    expand_dataset, object_keep_list, DatasetManifest, Detection, ExpansionConfig, ImageRecord, StubDetector,
};
use funit::ImageTensor;

fn main() -> funit::Result<()> {
    let root = std::env::temp_dir().join("funit-expansion-example");
    let mut records = Vec::new();
    let mut detector = StubDetector::new();
    for (i, domain) in ["sunny", "night"].into_iter().enumerate() {
        let path = format!("{domain}/street.png");
        ImageTensor::filled(3, 64, 96, i as f64 * 0.5 - 0.25).save_png(&root.join(&path))?;
        records.push(ImageRecord::new(&path, domain, 96, 64)?);
        detector = detector.with_path(
            path,
            vec![
                Detection::new([4.0, 10.0, 40.0, 50.0], "car", 0.92),
                Detection::new([50.0, 5.0, 70.0, 60.0], "person", 0.71),
                // Rejected: threshold is strict.
                Detection::new([70.0, 20.0, 95.0, 60.0], "bus", 0.5),
                // Rejected: not a street-scene class.
                Detection::new([10.0, 30.0, 90.0, 63.0], "giraffe", 0.8),
            ],
        );
    }
    let manifest = DatasetManifest::new(records, 0)?;
    let expanded = expand_dataset(
        &manifest,
        &detector,
        &ExpansionConfig::default(),
        &root,
        "crops".as_ref(),
    )?;
    println!("expanded into {} classes:", expanded.class_index().len());
    for (class, n) in expanded.class_counts() {
        println!("  {class}: {n}");
    }
    let curated = expanded.filter_classes(&object_keep_list())?;
    println!("after the keep-list: {:?}", curated.classes());
    Ok(())
}
