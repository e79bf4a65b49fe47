mod common;

use common::*;
use funit::dataset::DatasetManifest;
use funit::model::{Discriminator, GeneratorConfig};
use funit::objective::{
    batch_rng, fine_tune, gan_discriminator_from_logits, gan_generator_from_logit, mean_abs_diff, sample_batch,
    total_generator_loss, Batch, Checkpoint, FineTuneConfig, GanForm, MemoryImageSource, TrainConfig, TrainOptions,
    Trainer,
};
use funit::{synthetic, Error, ImageTensor};
use proptest::prelude::*;

fn micro_setup(classes: usize, seed: u64) -> (Trainer, DatasetManifest, MemoryImageSource) {
    let (manifest, source) = synthetic::shapes_dataset(&synthetic::four_classes()[..classes], 4, 8, seed).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        k: 2,
        max_iterations: 3,
        seed,
        ..TrainConfig::default()
    };
    let names = manifest.classes().iter().map(|c| c.to_string()).collect();
    let trainer = Trainer::new(micro_generator(), micro_discriminator(classes), cfg, names).unwrap();
    (trainer, manifest, source)
}

fn trained_checkpoint() -> (Checkpoint, DatasetManifest, MemoryImageSource) {
    let (mut t, m, s) = micro_setup(2, 4);
    let out = t.train(&m, &s, &TrainOptions::default()).unwrap();
    (out.checkpoint, m, s)
}

proptest! {
    #[test]
    fn total_loss_is_the_weighted_sum(g in 0.0..10.0f64, r in 0.0..10.0f64, f in 0.0..10.0f64, lr in 0.0..2.0f64, lf in 0.0..2.0f64) {
        let cfg = TrainConfig { lambda_r: lr, lambda_f: lf, ..TrainConfig::default() };
        let total = total_generator_loss(g, r, f, &cfg).unwrap();
        prop_assert!((total - (g + lr * r + lf * f)).abs() < 1e-12);
    }

    #[test]
    fn gan_losses_are_non_negative_and_monotone(real in -50.0..50.0f64, fake in -50.0..50.0f64, step in 0.01..5.0f64) {
        let d = gan_discriminator_from_logits(real, fake);
        prop_assert!(d >= 0.0);
        prop_assert!(gan_discriminator_from_logits(real + step, fake) <= d);
        prop_assert!(gan_discriminator_from_logits(real, fake - step) <= d);
        let g = gan_generator_from_logit(fake, GanForm::NonSaturating);
        prop_assert!(g >= 0.0);
        prop_assert!(gan_generator_from_logit(fake + step, GanForm::NonSaturating) <= g);
        prop_assert!(gan_generator_from_logit(fake + step, GanForm::Saturating) <= gan_generator_from_logit(fake, GanForm::Saturating));
    }

    #[test]
    fn l1_is_symmetric_and_zero_only_on_equal_inputs(a in prop::collection::vec(-3.0..3.0f64, 1..20), shift in 0.001..1.0f64) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert_eq!(mean_abs_diff(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(mean_abs_diff(&a, &b).unwrap(), mean_abs_diff(&b, &a).unwrap());
        prop_assert!((mean_abs_diff(&a, &b).unwrap() - shift).abs() < 1e-9);
    }

    #[test]
    fn sampled_styles_come_from_the_target_class(seed in any::<u64>(), iteration in 0u64..1000, k in 1usize..6) {
        let m = manifest_with_counts(&[("a", 3), ("b", 7), ("c", 1)], 0);
        let cfg = TrainConfig { k, batch_size: 5, ..TrainConfig::default() };
        let specs = sample_batch(&m, &cfg, &mut batch_rng(seed, iteration)).unwrap();
        prop_assert_eq!(&specs, &sample_batch(&m, &cfg, &mut batch_rng(seed, iteration)).unwrap());
        let classes = m.classes();
        for s in &specs {
            prop_assert_eq!(s.styles.len(), k);
            prop_assert_eq!(m.records()[s.content].class_name.as_str(), classes[s.content_class]);
            for &i in &s.styles {
                prop_assert_eq!(m.records()[i].class_name.as_str(), classes[s.style_class]);
            }
            let members = m.records_of(classes[s.style_class]).count();
            if members >= k {
                let mut distinct = s.styles.clone();
                distinct.sort_unstable();
                distinct.dedup();
                prop_assert_eq!(distinct.len(), k);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0.0..1.0f64) {
        let (ckpt, _, _) = trained_checkpoint();
        let bytes = ckpt.to_bytes().unwrap();
        let len = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(matches!(Checkpoint::from_bytes(&bytes[..len]), Err(Error::Checkpoint(_))));
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let (ckpt, _, _) = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());

    let mut extra = ckpt.to_bytes().unwrap();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut bad_magic = ckpt.to_bytes().unwrap();
    bad_magic[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());
}

#[test]
fn checkpoint_with_other_architecture_is_rejected() {
    let (ckpt, _, _) = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    assert!(Checkpoint::load_expecting(&path, &micro_generator(), &micro_discriminator(2)).is_ok());
    let wider = GeneratorConfig {
        base_channels: 8,
        ..micro_generator()
    };
    let err = Checkpoint::load_expecting(&path, &wider, &micro_discriminator(2)).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    assert!(Checkpoint::load_expecting(&path, &micro_generator(), &micro_discriminator(3)).is_err());
    assert!(matches!(
        Checkpoint::load(&dir.path().join("missing.ckpt")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn fine_tuning_defaults_to_a_tenth_of_the_learning_rate() {
    let defaults = FineTuneConfig::default();
    assert_eq!(defaults.iterations, 250_000);
    let (ckpt, m, s) = trained_checkpoint();
    assert_eq!(ckpt.train_config.learning_rate, 1e-4);
    let cfg = FineTuneConfig {
        iterations: 2,
        ..defaults
    };
    let out = fine_tune(&ckpt, &m, &s, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(out.losses.len(), 2);
    assert_eq!(out.checkpoint.iteration, 5);
    assert!((out.checkpoint.train_config.learning_rate - 1e-5).abs() < 1e-20);
    assert_eq!(out.checkpoint.metadata["fine_tune.base_iteration"], "3");
    assert_eq!(out.checkpoint.metadata["fine_tune.learning_rate"], "0.00001");
    assert_eq!(out.checkpoint.metadata["fine_tune.reinit_heads"], "false");
}

#[test]
fn fine_tuning_on_new_classes_needs_fresh_heads() {
    let (ckpt, _, _) = trained_checkpoint();
    let (_, novel, source) = micro_setup(3, 9);
    let cfg = FineTuneConfig {
        iterations: 1,
        ..FineTuneConfig::default()
    };
    assert!(matches!(
        fine_tune(&ckpt, &novel, &source, &cfg, &TrainOptions::default()),
        Err(Error::Config(_))
    ));
    let reinit = FineTuneConfig {
        reinit_heads: true,
        ..cfg
    };
    let out = fine_tune(&ckpt, &novel, &source, &reinit, &TrainOptions::default()).unwrap();
    assert_eq!(out.checkpoint.discriminator_config.n_classes, 3);
    assert_eq!(out.checkpoint.class_names.len(), 3);
    // The trunk continues from the checkpoint; only the head was replaced.
    let d = Discriminator::new(out.checkpoint.discriminator_config.clone(), 0).unwrap();
    let [head_w, head_b] = d.head_param_names();
    for (name, before) in ckpt.discriminator.iter() {
        if name != head_w && name != head_b {
            assert_eq!(
                out.checkpoint.discriminator.by_name(name).unwrap().shape(),
                before.shape()
            );
        }
    }
    assert_eq!(out.checkpoint.discriminator.by_name(head_w).unwrap().dim(0), 3);
}

#[test]
fn non_finite_losses_abort_training() {
    let (mut trainer, _, _) = micro_setup(2, 1);
    let mut content = random_images(2, 8, 3);
    content[0].data_mut()[5] = f64::NAN;
    let styles = random_images(4, 8, 4);
    let batch = Batch::from_images(&content, vec![0, 1], &styles, vec![1, 0]).unwrap();
    let before = trainer.checkpoint();
    let err = trainer.train_step(&batch).unwrap_err();
    assert!(matches!(err, Error::NonFinite { iteration: 0, .. }), "{err}");
    assert_eq!(trainer.iteration(), 0);
    assert_eq!(trainer.checkpoint().generator, before.generator);
}

#[test]
fn training_writes_loss_log_and_periodic_checkpoints() {
    let (mut trainer, m, s) = micro_setup(2, 2);
    trainer.config_mut().max_iterations = 4;
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().join("ckpt")),
        checkpoint_every: 2,
        log_path: Some(dir.path().join("losses.jsonl")),
    };
    let out = trainer.train(&m, &s, &opts).unwrap();
    let log = std::fs::read_to_string(dir.path().join("losses.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["iteration"], 4);
    assert_eq!(lines[0]["recon"].as_f64().unwrap(), out.losses[0].recon);
    for name in ["iter_00000002.ckpt", "iter_00000004.ckpt", "latest.ckpt"] {
        assert!(dir.path().join("ckpt").join(name).exists(), "{name}");
    }
}

#[test]
fn training_rejects_a_manifest_with_other_classes() {
    let (mut trainer, _, _) = micro_setup(2, 2);
    let (_, other, source) = micro_setup(3, 2);
    assert!(trainer.train(&other, &source, &TrainOptions::default()).is_err());
}

#[test]
fn batches_need_matching_style_counts() {
    let content: Vec<ImageTensor> = random_images(2, 8, 1);
    assert!(Batch::from_images(&content, vec![0, 1], &random_images(3, 8, 2), vec![0, 1]).is_err());
}
