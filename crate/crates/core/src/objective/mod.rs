//! Adversarial objective: the class-conditional GAN loss, content
//! reconstruction loss and discriminator feature matching loss, combined as
//! `L_gan + lambda_r * L_recon + lambda_f * L_fm`, plus the alternating
//! training loop built on them.

mod checkpoint;
mod sampling;
mod trainer;

use funit_autodiff::{kernels, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::model::{Discriminator, Generator, Translator};
use crate::nn::{Bound, RmsPropConfig};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use sampling::{batch_rng, sample_batch, Batch, FileImageSource, ImageSource, MemoryImageSource, SampleSpec};
pub use trainer::{fine_tune, FineTuneConfig, TrainOptions, TrainOutcome, Trainer};

/// Which generator adversarial term to minimize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanForm {
    /// `-log sigmoid(D(fake))`.
    #[default]
    NonSaturating,
    /// `log(1 - sigmoid(D(fake)))`, the literal minimax term.
    Saturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_r: f64,
    pub lambda_f: f64,
    pub batch_size: usize,
    /// Style images per sample.
    pub k: usize,
    /// Total iteration count a run stops at (absolute, so resumed runs
    /// continue towards the same target).
    pub max_iterations: u64,
    pub seed: u64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub gan_form: GanForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lambda_r: 0.1,
            lambda_f: 1.0,
            batch_size: 4,
            k: 1,
            max_iterations: 500_000,
            seed: 0,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            gan_form: GanForm::NonSaturating,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_f >= 0.0) {
            return Err(Error::Config("lambda_r and lambda_f must be >= 0".into()));
        }
        if self.k == 0 || self.batch_size == 0 {
            return Err(Error::Config("k and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || self.rmsprop_eps <= 0.0 {
            return Err(Error::Config("rmsprop decay must be in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            eps: self.rmsprop_eps,
        }
    }
}

/// Loss values of one training step, taken before the respective update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_d: f64,
    pub gan_g: f64,
    pub recon: f64,
    pub feat_match: f64,
    pub total_g: f64,
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            iteration: 0,
            detail: format!("{what} = {value}"),
        })
    }
}

/// `gan_g + lambda_r * recon + lambda_f * feat_match`.
pub fn total_generator_loss(gan_g: f64, recon: f64, feat_match: f64, cfg: &TrainConfig) -> Result<f64> {
    for (v, name) in [(gan_g, "gan_g"), (recon, "recon"), (feat_match, "feat_match")] {
        finite(v, name)?;
    }
    finite(gan_g + cfg.lambda_r * recon + cfg.lambda_f * feat_match, "total_g")
}

// ---- scalar losses on single images ------------------------------------

/// `-log sigmoid(D_cx(real)) - log(1 - sigmoid(D_cy(fake)))` from logits.
pub fn gan_discriminator_from_logits(real_logit: f64, fake_logit: f64) -> f64 {
    kernels::softplus(-real_logit) + kernels::softplus(fake_logit)
}

pub fn gan_generator_from_logit(fake_logit: f64, form: GanForm) -> f64 {
    match form {
        GanForm::NonSaturating => kernels::softplus(-fake_logit),
        GanForm::Saturating => -kernels::softplus(fake_logit),
    }
}

/// Discriminator GAN loss on one real image of class `c_x` and one
/// translation towards class `c_y`; only heads `c_x` and `c_y` are read.
pub fn gan_loss_discriminator(
    d: &Discriminator,
    real_x: &ImageTensor,
    c_x: usize,
    fake_xbar: &ImageTensor,
    c_y: usize,
) -> Result<f64> {
    let real = d.realness(real_x, c_x)?;
    let fake = d.realness(fake_xbar, c_y)?;
    finite(gan_discriminator_from_logits(real, fake), "gan_d")
}

/// Non-saturating generator GAN loss `-log sigmoid(D_cy(fake))`.
pub fn gan_loss_generator(d: &Discriminator, fake_xbar: &ImageTensor, c_y: usize) -> Result<f64> {
    let fake = d.realness(fake_xbar, c_y)?;
    finite(gan_generator_from_logit(fake, GanForm::NonSaturating), "gan_g")
}

/// Mean absolute elementwise difference.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("{} elements", a.len()), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Mean |x - G(x, {x})|.
pub fn reconstruction_loss(x: &ImageTensor, g: &dyn Translator) -> Result<f64> {
    let recon = g.translate(x, std::slice::from_ref(x))?;
    mean_abs_diff(x.tensor().data(), recon.tensor().data())
}

/// Mean |D_f(xbar) - mean_k D_f(y_k)|.
pub fn feature_matching_loss(xbar: &ImageTensor, ys: &[ImageTensor], d: &Discriminator) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::Config("feature matching needs at least one style image".into()));
    }
    let target = mean_features(&ys.iter().map(|y| d.extract_features(y)).collect::<Result<Vec<_>>>()?)?;
    mean_abs_diff(&d.extract_features(xbar)?, &target)
}

/// Elementwise mean of equal-length feature vectors.
pub fn mean_features(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::Config("no feature vectors".into()))?;
    let mut acc = vec![0.0; first.len()];
    for f in features {
        if f.len() != acc.len() {
            return Err(Error::shape(acc.len(), f.len()));
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let k = features.len() as f64;
    Ok(acc.into_iter().map(|v| v / k).collect())
}

// ---- differentiable batch losses ---------------------------------------

/// Batch mean of the discriminator GAN loss from `(N, n_classes)` logits.
pub fn gan_d_term<'t>(real_logits: Var<'t>, c_x: &[usize], fake_logits: Var<'t>, c_y: &[usize]) -> Var<'t> {
    let real = (-real_logits.select_per_row(c_x)).softplus();
    let fake = fake_logits.select_per_row(c_y).softplus();
    (real + fake).mean()
}

pub fn gan_g_term<'t>(fake_logits: Var<'t>, c_y: &[usize], form: GanForm) -> Var<'t> {
    let z = fake_logits.select_per_row(c_y);
    match form {
        GanForm::NonSaturating => (-z).softplus().mean(),
        GanForm::Saturating => (-z.softplus()).mean(),
    }
}

pub fn l1_term<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    (a - b).abs().mean()
}

/// Generator activations for one batch: the translation of every content
/// image with its class style code and the reconstruction with its own.
pub struct GeneratorPass<'t> {
    pub content: Var<'t>,
    pub styles: Var<'t>,
    pub fake: Var<'t>,
    pub reconstruction: Var<'t>,
}

pub fn generator_pass<'t>(tape: &'t Tape, g: &Generator, gp: &Bound<'t>, batch: &Batch) -> GeneratorPass<'t> {
    let content = tape.constant(batch.content.clone());
    let styles = tape.constant(batch.styles.clone());
    let code = g.content_forward(gp, content);
    let style = g.style_forward(gp, styles).group_mean(batch.k);
    let fake = g.decode_forward(gp, code, g.mlp_forward(gp, style));
    let self_style = g.style_forward(gp, content);
    let reconstruction = g.decode_forward(gp, code, g.mlp_forward(gp, self_style));
    GeneratorPass {
        content,
        styles,
        fake,
        reconstruction,
    }
}

/// The generator loss terms of one batch.
pub struct GeneratorTerms<'t> {
    pub gan_g: Var<'t>,
    pub recon: Var<'t>,
    pub feat_match: Var<'t>,
    pub total: Var<'t>,
}

/// Scores a generator pass with the discriminator bound as `dp`.
pub fn generator_terms<'t>(
    pass: &GeneratorPass<'t>,
    d: &Discriminator,
    dp: &Bound<'t>,
    batch: &Batch,
    cfg: &TrainConfig,
) -> GeneratorTerms<'t> {
    let recon = l1_term(pass.reconstruction, pass.content);
    let fake_out = d.forward(dp, pass.fake);
    let gan_g = gan_g_term(fake_out.logits, &batch.style_classes, cfg.gan_form);
    let target = d.forward(dp, pass.styles).features.group_mean(batch.k);
    let feat_match = l1_term(fake_out.features, target);
    let total = gan_g + recon.scale(cfg.lambda_r) + feat_match.scale(cfg.lambda_f);
    GeneratorTerms {
        gan_g,
        recon,
        feat_match,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        assert_eq!(gan_discriminator_from_logits(f64::INFINITY, f64::NEG_INFINITY), 0.0);
        assert_eq!(gan_discriminator_from_logits(1000.0, -1000.0), 0.0);
    }

    #[test]
    fn undecided_discriminator() {
        let v = gan_discriminator_from_logits(0.0, 0.0);
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 1.386).abs() < 1e-3);
    }

    #[test]
    fn generator_loss_probe_values() {
        assert_eq!(gan_generator_from_logit(1000.0, GanForm::NonSaturating), 0.0);
        assert!((gan_generator_from_logit(0.0, GanForm::NonSaturating) - 2f64.ln()).abs() < 1e-15);
        // sigma in {0.1, 0.5, 0.9} via logit = ln(p / (1 - p)).
        let losses: Vec<f64> = [0.1f64, 0.5, 0.9]
            .iter()
            .map(|p| gan_generator_from_logit((p / (1.0 - p)).ln(), GanForm::NonSaturating))
            .collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2]);
        for (l, p) in losses.iter().zip([0.1f64, 0.5, 0.9]) {
            assert!((l + p.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let cfg = TrainConfig::default();
        assert!((total_generator_loss(1.0, 2.0, 3.0, &cfg).unwrap() - 4.2).abs() < 1e-12);
        let ablated = TrainConfig {
            lambda_r: 0.0,
            lambda_f: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(total_generator_loss(1.7, 2.0, 3.0, &ablated).unwrap(), 1.7);
        assert_eq!(total_generator_loss(0.0, 0.0, 0.0, &cfg).unwrap(), 0.0);
        assert!(total_generator_loss(f64::NAN, 0.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn feature_mean_of_two_vectors() {
        let u = vec![1.0, -2.0, 0.5, 4.0];
        let v = vec![3.0, 2.0, -0.5, 0.0];
        let w = vec![0.0, 1.0, 1.0, 1.0];
        let mean = mean_features(&[u, v]).unwrap();
        assert_eq!(mean, vec![2.0, 0.0, 0.0, 2.0]);
        // |0-2| + |1-0| + |1-0| + |1-2| = 5, over 4 elements.
        assert_eq!(mean_abs_diff(&w, &mean).unwrap(), 1.25);
    }

    #[test]
    fn config_defaults_match_published_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 0.0001);
        assert_eq!(cfg.lambda_r, 0.1);
        assert_eq!(cfg.lambda_f, 1.0);
        assert!(cfg.validate().is_ok());
        assert!(TrainConfig { k: 0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { lambda_r: -1.0, ..cfg }.validate().is_err());
    }
}
