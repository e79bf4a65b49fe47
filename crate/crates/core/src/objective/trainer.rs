use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use funit_autodiff::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::{
    batch_rng, gan_d_term, generator_pass, generator_terms, sample_batch, Batch, Checkpoint, ImageSource,
    LossBreakdown, TrainConfig,
};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::RmsProp;

const DISCRIMINATOR_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Owns both networks and their optimizers and runs alternating updates.
#[derive(Clone, Debug)]
pub struct Trainer {
    generator: Generator,
    discriminator: Discriminator,
    generator_opt: RmsProp,
    discriminator_opt: RmsProp,
    config: TrainConfig,
    class_names: Vec<String>,
    iteration: u64,
    metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where checkpoints go; none are written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Save every this many iterations (0: only at the end).
    pub checkpoint_every: u64,
    /// JSON-lines loss log, appended to.
    pub log_path: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Losses of the steps run by this call, in order.
    pub losses: Vec<LossBreakdown>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    iteration: u64,
    elapsed_secs: f64,
    #[serde(flatten)]
    losses: &'a LossBreakdown,
}

impl Trainer {
    /// Fresh networks seeded from `config.seed`; the discriminator gets one
    /// head per entry of `class_names`.
    pub fn new(
        generator_config: GeneratorConfig,
        discriminator_config: DiscriminatorConfig,
        config: TrainConfig,
        class_names: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        if discriminator_config.n_classes != class_names.len() {
            return Err(Error::Config(format!(
                "{} discriminator heads for {} classes",
                discriminator_config.n_classes,
                class_names.len()
            )));
        }
        if discriminator_config.image_size != generator_config.image_size {
            return Err(Error::Config("generator and discriminator image sizes differ".into()));
        }
        let generator = Generator::new(generator_config, config.seed)?;
        let discriminator = Discriminator::new(discriminator_config, config.seed ^ DISCRIMINATOR_SEED_SALT)?;
        Ok(Self {
            generator_opt: RmsProp::new(generator.params()),
            discriminator_opt: RmsProp::new(discriminator.params()),
            generator,
            discriminator,
            config,
            class_names,
            iteration: 0,
            metadata: BTreeMap::new(),
        })
    }

    /// Convenience constructor with default network sizes for `image_size`
    /// and the classes of `manifest`.
    pub fn for_manifest(manifest: &DatasetManifest, image_size: usize, config: TrainConfig) -> Result<Self> {
        let classes: Vec<String> = manifest.classes().iter().map(|c| c.to_string()).collect();
        Self::new(
            GeneratorConfig::for_image_size(image_size),
            DiscriminatorConfig::new(image_size, classes.len()),
            config,
            classes,
        )
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train_config.validate()?;
        let mut generator = Generator::new(ckpt.generator_config.clone(), 0)?;
        generator.load_params(ckpt.generator)?;
        let mut discriminator = Discriminator::new(ckpt.discriminator_config.clone(), 0)?;
        discriminator.load_params(ckpt.discriminator)?;
        let opt = |state: Vec<Tensor>, store: &crate::nn::ParamStore| -> Result<RmsProp> {
            let ok =
                state.len() == store.len() && state.iter().zip(store.values()).all(|(s, p)| s.shape() == p.shape());
            if !ok {
                return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
            }
            Ok(RmsProp::from_state(state))
        };
        if ckpt.class_names.len() != ckpt.discriminator_config.n_classes {
            return Err(Error::Checkpoint("class names do not match discriminator heads".into()));
        }
        Ok(Self {
            generator_opt: opt(ckpt.generator_opt, generator.params())?,
            discriminator_opt: opt(ckpt.discriminator_opt, discriminator.params())?,
            generator,
            discriminator,
            config: ckpt.train_config,
            class_names: ckpt.class_names,
            iteration: ckpt.iteration,
            metadata: ckpt.metadata,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            generator_config: self.generator.config().clone(),
            discriminator_config: self.discriminator.config().clone(),
            train_config: self.config.clone(),
            class_names: self.class_names.clone(),
            iteration: self.iteration,
            generator: self.generator.params().clone(),
            discriminator: self.discriminator.params().clone(),
            generator_opt: self.generator_opt.state().to_vec(),
            discriminator_opt: self.discriminator_opt.state().to_vec(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    fn non_finite(&self, what: &str, value: f64) -> Error {
        Error::NonFinite {
            iteration: self.iteration,
            detail: format!("{what} = {value}"),
        }
    }

    /// One discriminator update followed by one generator update against
    /// the updated discriminator. Reported losses are those the respective
    /// update descended on.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let n_classes = self.discriminator.config().n_classes;
        if batch
            .content_classes
            .iter()
            .chain(&batch.style_classes)
            .any(|&c| c >= n_classes)
        {
            return Err(Error::Config(format!("batch class index outside {n_classes} heads")));
        }
        let opt = self.config.optimizer();
        let g_tape = Tape::new();
        let gp = self.generator.params().bind(&g_tape, true);
        let pass = generator_pass(&g_tape, &self.generator, &gp, batch);

        let gan_d = {
            let d_tape = Tape::new();
            let dp = self.discriminator.params().bind(&d_tape, true);
            let real = self.discriminator.forward(&dp, d_tape.constant(batch.content.clone()));
            let fake = self
                .discriminator
                .forward(&dp, d_tape.constant(pass.fake.value().as_ref().clone()));
            let loss = gan_d_term(real.logits, &batch.content_classes, fake.logits, &batch.style_classes);
            let value = loss.item();
            if !value.is_finite() {
                return Err(self.non_finite("gan_d", value));
            }
            let grads = dp.gradients(&d_tape.backward(loss));
            self.discriminator_opt
                .step(self.discriminator.params_mut(), &grads, &opt);
            value
        };

        let dp = self.discriminator.params().bind(&g_tape, false);
        let terms = generator_terms(&pass, &self.discriminator, &dp, batch, &self.config);
        let total_g = terms.total.item();
        if !total_g.is_finite() {
            return Err(self.non_finite("total_g", total_g));
        }
        let grads = gp.gradients(&g_tape.backward(terms.total));
        self.generator_opt.step(self.generator.params_mut(), &grads, &opt);
        self.iteration += 1;
        Ok(LossBreakdown {
            gan_d,
            gan_g: terms.gan_g.item(),
            recon: terms.recon.item(),
            feat_match: terms.feat_match.item(),
            total_g,
        })
    }

    /// Draws and runs steps until `config.max_iterations`, saving
    /// checkpoints and appending loss lines as configured.
    pub fn train(
        &mut self,
        manifest: &DatasetManifest,
        source: &dyn ImageSource,
        options: &TrainOptions,
    ) -> Result<TrainOutcome> {
        let classes = manifest.classes();
        if classes != self.class_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Config(format!(
                "manifest classes {classes:?} differ from the model's {:?}",
                self.class_names
            )));
        }
        let mut log = match &options.log_path {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                Some((path.clone(), std::io::BufWriter::new(file)))
            }
            None => None,
        };
        let start = Instant::now();
        let mut losses = Vec::new();
        while self.iteration < self.config.max_iterations {
            let mut rng = batch_rng(self.config.seed, self.iteration);
            let specs = sample_batch(manifest, &self.config, &mut rng)?;
            let batch = Batch::load(manifest, &specs, source)?;
            let step = self.train_step(&batch)?;
            losses.push(step);
            if let Some((path, writer)) = log.as_mut() {
                let line = LogLine {
                    iteration: self.iteration,
                    elapsed_secs: start.elapsed().as_secs_f64(),
                    losses: &step,
                };
                let json = serde_json::to_string(&line).map_err(|e| Error::Serde(e.to_string()))?;
                writeln!(writer, "{json}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            if options.checkpoint_every > 0 && self.iteration.is_multiple_of(options.checkpoint_every) {
                self.save_checkpoint(options)?;
            }
            if self.iteration.is_multiple_of(100) {
                log::info!(
                    "iteration {}: gan_d {:.4} total_g {:.4} recon {:.4}",
                    self.iteration,
                    step.gan_d,
                    step.total_g,
                    step.recon
                );
            }
        }
        if let Some((path, writer)) = log.as_mut() {
            writer.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.save_checkpoint(options)?;
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(),
            losses,
        })
    }

    fn save_checkpoint(&self, options: &TrainOptions) -> Result<()> {
        if let Some(dir) = &options.checkpoint_dir {
            let ckpt = self.checkpoint();
            ckpt.save(&dir.join(format!("iter_{:08}.ckpt", self.iteration)))?;
            ckpt.save(&dir.join("latest.ckpt"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    /// Additional iterations on top of the checkpoint's counter.
    pub iterations: u64,
    /// Learning rate; defaults to a tenth of the checkpoint's.
    pub learning_rate: Option<f64>,
    /// Replace the discriminator heads, required when the class count
    /// changes.
    pub reinit_heads: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            iterations: 250_000,
            learning_rate: None,
            reinit_heads: false,
        }
    }
}

/// Continues training `checkpoint` on `manifest` with a reduced learning
/// rate. Optimizer state and the iteration counter carry over; replaced
/// heads start from a fresh initialization and zero optimizer state.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    source: &dyn ImageSource,
    config: &FineTuneConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::from_checkpoint(checkpoint.clone())?;
    let classes: Vec<String> = manifest.classes().iter().map(|c| c.to_string()).collect();
    if config.reinit_heads {
        let seed = trainer.config.seed ^ DISCRIMINATOR_SEED_SALT ^ trainer.iteration;
        let old_state: BTreeMap<String, Tensor> = trainer
            .discriminator
            .params()
            .names()
            .iter()
            .cloned()
            .zip(trainer.discriminator_opt.state().iter().cloned())
            .collect();
        trainer.discriminator.reinit_head(classes.len(), seed)?;
        let state = trainer
            .discriminator
            .params()
            .iter()
            .map(|(name, p)| match old_state.get(name) {
                Some(s) if s.shape() == p.shape() && !trainer.discriminator.head_param_names().contains(&name) => {
                    s.clone()
                }
                _ => Tensor::zeros(p.shape()),
            })
            .collect();
        trainer.discriminator_opt = RmsProp::from_state(state);
        trainer.class_names = classes;
    } else if classes.len() != trainer.class_names.len() {
        return Err(Error::Config(format!(
            "fine-tuning set has {} classes but the checkpoint has {} heads; enable head reinitialization",
            classes.len(),
            trainer.class_names.len()
        )));
    } else {
        trainer.class_names = classes;
    }
    let base_lr = trainer.config.learning_rate;
    let lr = config.learning_rate.unwrap_or(base_lr / 10.0);
    trainer.config.learning_rate = lr;
    trainer.config.max_iterations = trainer.iteration + config.iterations;
    trainer.config.validate()?;
    let meta = &mut trainer.metadata;
    meta.insert("fine_tune.base_iteration".into(), trainer.iteration.to_string());
    meta.insert("fine_tune.iterations".into(), config.iterations.to_string());
    meta.insert("fine_tune.learning_rate".into(), lr.to_string());
    meta.insert("fine_tune.reinit_heads".into(), config.reinit_heads.to_string());
    trainer.train(manifest, source, options)
}
