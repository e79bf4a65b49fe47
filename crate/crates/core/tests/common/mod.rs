//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use funit::dataset::{object_keep_list, DatasetManifest, ImageRecord};
use funit::model::{DiscriminatorConfig, GeneratorConfig};
use funit::ImageTensor;
use funit_autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAINS: [&str; 4] = ["cloudy", "night", "rainy", "sunny"];

/// Street-scene image counts per weather domain.
pub const DOMAIN_COUNTS: [(&str, usize); 4] = [("cloudy", 12723), ("sunny", 10678), ("rainy", 2226), ("night", 6705)];

/// 8x8 generator with two downsamplings and small widths.
pub fn micro_generator() -> GeneratorConfig {
    GeneratorConfig {
        image_size: 8,
        input_channels: 3,
        base_channels: 4,
        n_downsample: 2,
        n_content_res_blocks: 1,
        style_dim: 6,
        n_adain_res_blocks: 1,
        n_mlp_layers: 2,
    }
}

pub fn micro_discriminator(n_classes: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        image_size: 8,
        input_channels: 3,
        n_classes,
        base_channels: 4,
        n_layers: 2,
    }
}

/// 16x16 generator used where a slightly larger code helps.
pub fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        image_size: 16,
        base_channels: 4,
        n_downsample: 2,
        style_dim: 8,
        ..micro_generator()
    }
}

pub fn random_image(size: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::new(Tensor::uniform(&[3, size, size], -1.0, 1.0, rng)).unwrap()
}

pub fn random_images(n: usize, size: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_image(size, &mut rng)).collect()
}

/// A manifest with the given number of records per class (paths are
/// synthetic; no pixels exist).
pub fn manifest_with_counts(counts: &[(&str, usize)], seed: u64) -> DatasetManifest {
    let mut records = Vec::new();
    for (class, n) in counts {
        for i in 0..*n {
            records.push(ImageRecord::new(format!("{class}/{i:06}.jpg"), class, 64, 64).unwrap());
        }
    }
    DatasetManifest::new(records, seed).unwrap()
}

/// Object labels the detector "hallucinates"; none of them survive curation.
const NOISE_LABELS: [&str; 21] = [
    "giraffe",
    "boomerang",
    "zebra",
    "elephant",
    "kite",
    "surfboard",
    "frisbee",
    "teddy bear",
    "toothbrush",
    "pizza",
    "banana",
    "sheep",
    "cow",
    "horse",
    "bear",
    "skis",
    "snowboard",
    "sports ball",
    "umbrella",
    "airplane",
    "refrigerator",
];

/// 178 `"<domain> - <object>"` names: the 97 curated classes plus 81 noise
/// classes (labels curated for other domains first, then hallucinations).
pub fn expanded_class_names() -> Vec<(String, String)> {
    let keep = object_keep_list();
    let mut names: Vec<(String, String)> = keep
        .iter()
        .map(|c| {
            let (d, o) = c.split_once(" - ").unwrap();
            (d.to_string(), o.to_string())
        })
        .collect();
    let all_objects: BTreeSet<String> = names.iter().map(|(_, o)| o.clone()).collect();
    for d in DOMAINS {
        for o in &all_objects {
            if !keep.contains(&format!("{d} - {o}")) {
                names.push((d.to_string(), o.clone()));
            }
        }
    }
    'outer: for label in NOISE_LABELS {
        for d in DOMAINS {
            if names.len() == 178 {
                break 'outer;
            }
            names.push((d.to_string(), label.to_string()));
        }
    }
    names
}
