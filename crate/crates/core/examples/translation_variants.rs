//! Translates one image three ways: plain, with detected objects pasted
//! back, and with object codes merged into the latent code.
//!
//! `cargo run --release --example translation_variants`

use funit::dataset::{Detection, StubDetector};
use funit::model::{Generator, GeneratorConfig};
use funit::objective::ImageSource;
use funit::synthetic;
use funit::variants::{translate_with, MergeConfig, Variant};

fn main() -> funit::Result<()> {
    let (manifest, images) = synthetic::shapes_dataset(&synthetic::two_classes(), 3, 32, 1)?;
    let records = manifest.records();
    let content = images.load(&records[0])?;
    let styles = vec![images.load(&records[3])?, images.load(&records[4])?];
    let mut cfg = GeneratorConfig::for_image_size(32);
    cfg.base_channels = 8;
    let g = Generator::new(cfg, 3)?;
    let detector = StubDetector::fixed(vec![
        Detection::new([2.0, 3.0, 14.0, 15.0], "car", 0.9),
        Detection::new([18.0, 16.0, 30.0, 30.0], "person", 0.8),
    ]);
    let merge = MergeConfig {
        feather_width: 2,
        ..MergeConfig::default()
    };
    let out = std::env::temp_dir().join("funit-variants-example");
    let plain = translate_with(Variant::None, &content, &styles, None, &g, &merge)?;
    for variant in [Variant::None, Variant::Paste, Variant::Latent] {
        let result = translate_with(variant, &content, &styles, Some(&detector), &g, &merge)?;
        let changed = result
            .tensor()
            .data()
            .iter()
            .zip(plain.tensor().data())
            .filter(|(a, b)| a != b)
            .count();
        let path = out.join(format!("{variant:?}.png").to_lowercase());
        result.save_png(&path)?;
        println!(
            "{variant:?}: {changed} values differ from plain; wrote {}",
            path.display()
        );
    }
    Ok(())
}
