//! Trains a small translator on synthetic shapes, checkpoints it, resumes
//! from the checkpoint and fine-tunes on a new class set.
//!
//! `cargo run --release --example training [iterations]`

use funit::model::{DiscriminatorConfig, GeneratorConfig};
use funit::objective::{fine_tune, Checkpoint, FineTuneConfig, TrainConfig, TrainOptions, Trainer};
use funit::synthetic;

fn main() -> funit::Result<()> {
    let iterations: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let (manifest, images) = synthetic::shapes_dataset(&synthetic::two_classes(), 32, 32, 7)?;
    let mut gcfg = GeneratorConfig::for_image_size(32);
    gcfg.base_channels = 8;
    let mut dcfg = DiscriminatorConfig::new(32, 2);
    dcfg.base_channels = 8;
    let cfg = TrainConfig {
        k: 1,
        max_iterations: iterations / 2,
        seed: 1,
        ..TrainConfig::default()
    };
    let classes = manifest.classes().iter().map(|c| c.to_string()).collect();
    let mut trainer = Trainer::new(gcfg, dcfg, cfg, classes)?;

    let dir = std::env::temp_dir().join("funit-training-example");
    let options = TrainOptions {
        checkpoint_dir: Some(dir.clone()),
        checkpoint_every: 50,
        log_path: None,
    };
    let first = trainer.train(&manifest, &images, &options)?;
    println!(
        "first half: recon {:.3} -> {:.3}",
        first.losses[0].recon,
        first.losses.last().unwrap().recon
    );

    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&dir.join("latest.ckpt"))?)?;
    resumed.config_mut().max_iterations = iterations;
    let second = resumed.train(&manifest, &images, &options)?;
    println!(
        "after resuming: recon {:.3} at iteration {}",
        second.losses.last().unwrap().recon,
        resumed.iteration()
    );

    let (novel, novel_images) = synthetic::shapes_dataset(&synthetic::four_classes(), 8, 32, 8)?;
    let ft = FineTuneConfig {
        iterations: 10,
        reinit_heads: true,
        ..FineTuneConfig::default()
    };
    let tuned = fine_tune(&second.checkpoint, &novel, &novel_images, &ft, &TrainOptions::default())?;
    println!(
        "fine-tuned to {} classes at lr {} (iteration {})",
        tuned.checkpoint.class_names.len(),
        tuned.checkpoint.train_config.learning_rate,
        tuned.checkpoint.iteration
    );
    Ok(())
}
