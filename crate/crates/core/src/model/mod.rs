//! Two-encoder generator with an AdaIN decoder, and the multi-head
//! class-conditional discriminator.

mod discriminator;
mod generator;

use funit_autodiff::{kernels, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

pub use discriminator::{Discriminator, DiscriminatorOutput};
pub use generator::Generator;

/// Anything that maps a content image and a style set to an image.
pub trait Translator {
    fn translate(&self, x: &ImageTensor, ys: &[ImageTensor]) -> Result<ImageTensor>;
}

impl Translator for Generator {
    fn translate(&self, x: &ImageTensor, ys: &[ImageTensor]) -> Result<ImageTensor> {
        Generator::translate(self, x, ys)
    }
}

/// Epsilon used by every instance normalization, AdaIN included.
pub const NORM_EPS: f64 = 1e-5;

/// Layer counts and widths of the generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub input_channels: usize,
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_content_res_blocks: usize,
    pub style_dim: usize,
    pub n_adain_res_blocks: usize,
    pub n_mlp_layers: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::for_image_size(64)
    }
}

impl GeneratorConfig {
    /// Default widths; three downsamplings from 128 px up, two below.
    pub fn for_image_size(image_size: usize) -> Self {
        Self {
            image_size,
            input_channels: 3,
            base_channels: 32,
            n_downsample: if image_size >= 128 { 3 } else { 2 },
            n_content_res_blocks: 2,
            style_dim: 64,
            n_adain_res_blocks: 2,
            n_mlp_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("image_size", self.image_size),
            ("input_channels", self.input_channels),
            ("base_channels", self.base_channels),
            ("n_downsample", self.n_downsample),
            ("n_content_res_blocks", self.n_content_res_blocks),
            ("style_dim", self.style_dim),
            ("n_adain_res_blocks", self.n_adain_res_blocks),
            ("n_mlp_layers", self.n_mlp_layers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("generator {name} must be >= 1")));
        }
        if !self.image_size.is_multiple_of(1 << self.n_downsample) {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size, self.n_downsample
            )));
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.n_downsample
    }

    pub fn code_size(&self) -> usize {
        self.image_size / self.downsample_factor()
    }

    pub fn content_channels(&self) -> usize {
        self.base_channels << self.n_downsample
    }

    /// Number of AdaIN-normalized layers in the decoder (two per block).
    pub fn adain_layers(&self) -> usize {
        2 * self.n_adain_res_blocks
    }

    /// Width of the flat AdaIN parameter vector regressed by the MLP.
    pub fn adain_param_len(&self) -> usize {
        self.adain_layers() * 2 * self.content_channels()
    }

    pub fn mlp_hidden(&self) -> usize {
        self.content_channels()
    }

    pub(crate) fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let expected = [self.input_channels, self.image_size, self.image_size];
        let found = [image.channels(), image.height(), image.width()];
        if expected != found {
            return Err(Error::shape(format!("image {expected:?}"), format!("{found:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub input_channels: usize,
    pub n_classes: usize,
    pub base_channels: usize,
    pub n_layers: usize,
}

impl DiscriminatorConfig {
    pub fn new(image_size: usize, n_classes: usize) -> Self {
        Self {
            image_size,
            input_channels: 3,
            n_classes,
            base_channels: 32,
            n_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "discriminator needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.base_channels == 0 || self.n_layers == 0 || self.input_channels == 0 {
            return Err(Error::Config("discriminator counts must be >= 1".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << self.n_layers) {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size, self.n_layers
            )));
        }
        Ok(())
    }

    /// Channel count of the penultimate feature map.
    pub fn feature_width(&self) -> usize {
        self.base_channels << self.n_layers
    }

    pub(crate) fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let expected = [self.input_channels, self.image_size, self.image_size];
        let found = [image.channels(), image.height(), image.width()];
        if expected != found {
            return Err(Error::shape(format!("image {expected:?}"), format!("{found:?}")));
        }
        Ok(())
    }
}

/// Spatial structure latent, `(channels, s, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCode(pub Tensor);

impl ContentCode {
    pub fn channels(&self) -> usize {
        self.0.dim(0)
    }

    pub fn height(&self) -> usize {
        self.0.dim(1)
    }

    pub fn width(&self) -> usize {
        self.0.dim(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode(pub Vec<f64>);

impl StyleCode {
    /// Mean of `codes` computed so the result does not depend on their
    /// order: each coordinate's values are sorted before summation.
    pub fn mean_of(codes: &[StyleCode]) -> Result<StyleCode> {
        let first = codes
            .first()
            .ok_or_else(|| Error::Config("style set must contain at least one image".into()))?;
        let dim = first.0.len();
        if codes.iter().any(|c| c.0.len() != dim) {
            return Err(Error::shape(format!("style codes of length {dim}"), "mixed lengths"));
        }
        let mut column = Vec::with_capacity(codes.len());
        let mean = (0..dim)
            .map(|d| {
                column.clear();
                column.extend(codes.iter().map(|c| c.0[d]));
                column.sort_by(f64::total_cmp);
                column.iter().sum::<f64>() / codes.len() as f64
            })
            .collect();
        Ok(StyleCode(mean))
    }
}

/// One `(scale, shift)` pair per AdaIN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaInParams {
    pub layers: Vec<AdaInLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaInLayer {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AdaInParams {
    /// Splits the flat MLP output `[scale_0, shift_0, scale_1, shift_1, ...]`.
    pub fn from_flat(flat: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || !flat.len().is_multiple_of(2 * channels) {
            return Err(Error::shape(format!("multiple of {}", 2 * channels), flat.len()));
        }
        let layers = flat
            .chunks(2 * channels)
            .map(|c| AdaInLayer {
                scale: c[..channels].to_vec(),
                shift: c[channels..].to_vec(),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.scale.iter().chain(&l.shift).copied())
            .collect()
    }
}

/// Adaptive instance normalization of a `(C, H, W)` or `(N, C, H, W)` tensor:
/// per sample and channel, `scale_c * (x - mean) / sqrt(var + eps) + shift_c`
/// with statistics over spatial positions and `eps = 1e-5`. The same scale and
/// shift apply to every sample of a batch.
pub fn adain(features: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
    let batched = match features.rank() {
        3 => features
            .reshape(&[1, features.dim(0), features.dim(1), features.dim(2)])
            .expect("rank-3 reshape"),
        4 => features.clone(),
        _ => {
            return Err(Error::shape(
                "(C, H, W) or (N, C, H, W)",
                format!("{:?}", features.shape()),
            ))
        }
    };
    let channels = batched.dim(1);
    if scale.len() != channels || shift.len() != channels {
        return Err(Error::shape(
            format!("{channels} scale/shift entries"),
            format!("{}/{}", scale.len(), shift.len()),
        ));
    }
    let (normalized, _) = kernels::instance_norm_forward(&batched, NORM_EPS);
    let plane = batched.dim(2) * batched.dim(3);
    let mut out = normalized.into_data();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let c = i % channels;
        for v in chunk {
            *v = scale[c] * *v + shift[c];
        }
    }
    Ok(Tensor::from_vec(features.shape(), out).expect("adain shape"))
}
