//! Scores an untrained translator and the constant baseline with the
//! few-shot protocol and prints both tables.
//!
//! `cargo run --release --example evaluation`

use funit::evaluation::{render_table, run_protocol, ConvBackbone, ConvClassifier, EvalProtocol, Metrics, Translator};
use funit::model::{Generator, GeneratorConfig};
use funit::objective::ImageSource;
use funit::{synthetic, ImageTensor};

struct Constant(ImageTensor);

impl Translator for Constant {
    fn translate(&self, _x: &ImageTensor, _ys: &[ImageTensor]) -> funit::Result<ImageTensor> {
        Ok(self.0.clone())
    }
}

fn main() -> funit::Result<()> {
    let classes = synthetic::four_classes();
    let (content, mut images) = synthetic::shapes_dataset(&classes[..3], 20, 16, 1)?;
    let (styles, style_images) = synthetic::shapes_dataset(&classes[3..], 10, 16, 2)?;
    for r in styles.records() {
        images.insert(r.path.clone(), style_images.load(r)?);
    }
    let mut cfg = GeneratorConfig::for_image_size(16);
    cfg.base_channels = 8;
    let g = Generator::new(cfg, 0)?;
    let backbone = ConvBackbone::standard();
    let classifier = ConvClassifier::standard();
    let metrics = Metrics {
        backbone: &backbone,
        classifier: &classifier,
    };
    for (id, model) in [
        ("untrained", &g as &dyn Translator),
        ("constant", &Constant(ImageTensor::filled(3, 16, 16, 0.0))),
    ] {
        let protocol = EvalProtocol {
            target_class: "yellow stripes".into(),
            model_id: id.into(),
            seed: 7,
            ..EvalProtocol::default()
        };
        let report = run_protocol(model, &content, &styles, &images, &metrics, &protocol)?;
        print!("{}", render_table(&report));
    }
    Ok(())
}
