//! Holds out one weather domain as the unseen test set and balances the
//! remaining training classes.
//!
//! `cargo run --release --example curation`

use std::collections::BTreeSet;

use funit::dataset::{DatasetManifest, ImageRecord};

fn main() -> funit::Result<()> {
    let counts = [("cloudy", 12723), ("sunny", 10678), ("rainy", 2226), ("night", 6705)];
    let mut records = Vec::new();
    for (domain, n) in counts {
        for i in 0..n {
            records.push(ImageRecord::new(format!("{domain}/{i:05}.jpg"), domain, 1280, 720)?);
        }
    }
    let all = DatasetManifest::new(records, 42)?;
    let held_out: BTreeSet<String> = ["night".to_string()].into();
    let (train, test) = all.split_by_class(&held_out)?;
    println!("train {} / test {}", train.len(), test.len());

    let smallest = train.class_counts().into_values().min().unwrap_or(0);
    let balanced = train.balance_classes(smallest)?;
    for (class, n) in balanced.class_counts() {
        println!("  {class:<8} {n}");
    }
    Ok(())
}
