use funit_autodiff::{Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generator::check_same_layout;
use super::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::nn::{Bound, Conv2d, ParamStore};

const LEAK: f64 = 0.2;

/// Class-conditional discriminator: a shared convolutional trunk and a 1x1
/// prediction head with one real/fake logit per class, spatially averaged.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    stem: Conv2d,
    down: Vec<Conv2d>,
    head: Conv2d,
}

/// Output of one discriminator pass over a batch.
pub struct DiscriminatorOutput<'t> {
    /// Pooled penultimate activations, `(N, feature_width)`.
    pub features: Var<'t>,
    /// Per-class realness logits, `(N, n_classes)`.
    pub logits: Var<'t>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let base = config.base_channels;
        let stem = Conv2d::new(
            &mut params,
            "trunk.stem",
            config.input_channels,
            base,
            3,
            1,
            1,
            &mut rng,
        );
        let down = (0..config.n_layers)
            .map(|i| {
                let c = base << i;
                Conv2d::new(&mut params, &format!("trunk.down{i}"), c, 2 * c, 4, 2, 1, &mut rng)
            })
            .collect();
        let head = Conv2d::new(
            &mut params,
            "head",
            config.feature_width(),
            config.n_classes,
            1,
            1,
            0,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            stem,
            down,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Names of the prediction-head parameters.
    pub fn head_param_names(&self) -> [&str; 2] {
        ["head.weight", "head.bias"]
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> DiscriminatorOutput<'t> {
        let mut h = self.stem.forward(p, x).leaky_relu(LEAK);
        for conv in &self.down {
            h = conv.forward(p, h).leaky_relu(LEAK);
        }
        DiscriminatorOutput {
            features: h.spatial_mean(),
            logits: self.head.forward(p, h).spatial_mean(),
        }
    }

    fn run(&self, x: &ImageTensor) -> Result<(Vec<f64>, Vec<f64>)> {
        self.config.check_image(x)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let batch = tape.constant(ImageTensor::batch(std::slice::from_ref(x))?);
        let out = self.forward(&p, batch);
        Ok((out.features.value().data().to_vec(), out.logits.value().data().to_vec()))
    }

    /// One realness logit per class.
    pub fn discriminate(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.run(x)?.1)
    }

    pub fn realness(&self, x: &ImageTensor, class: usize) -> Result<f64> {
        if class >= self.config.n_classes {
            return Err(Error::Config(format!(
                "class index {class} out of range for {} heads",
                self.config.n_classes
            )));
        }
        Ok(self.discriminate(x)?[class])
    }

    /// Penultimate features with global average pooling; independent of the
    /// prediction head.
    pub fn extract_features(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.run(x)?.0)
    }

    pub fn feature_width(&self) -> usize {
        self.config.feature_width()
    }

    /// Replaces the prediction head with a freshly initialized one for a new
    /// class count, keeping the trunk.
    pub fn reinit_head(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        let mut config = self.config.clone();
        config.n_classes = n_classes;
        let mut fresh = Discriminator::new(config.clone(), seed)?;
        for (name, value) in self.params.iter() {
            if !self.head_param_names().contains(&name) {
                *fresh.params.by_name_mut(name).expect("same trunk layout") = value.clone();
            }
        }
        *self = fresh;
        Ok(())
    }
}
