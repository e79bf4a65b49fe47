//! Translation quality metrics and the few-shot evaluation protocol.
//!
//! LPIPS compares channel-normalized feature maps of a [`Backbone`]; the
//! Inception Score measures how confidently and diversely a [`Classifier`]
//! labels a set of images. Both are pluggable; the bundled implementations
//! are small fixed-seed networks that keep results deterministic without
//! pretrained weights.

mod protocol;
mod report;

use funit_autodiff::{kernels, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::nn::fan_in_normal;

pub use crate::model::Translator;
pub use protocol::{class_seed, run_protocol, EvalProtocol, Metrics};
pub use report::{read_report, render_table, write_report, ClassMetrics, MetricReport, REPORT_VERSION};

/// Guards the channel normalization against all-zero feature vectors.
pub const LPIPS_EPS: f64 = 1e-10;

/// Feature extractor for LPIPS.
pub trait Backbone {
    /// `(C_l, H_l, W_l)` feature maps, one per layer.
    fn features(&self, x: &ImageTensor) -> Result<Vec<Tensor>>;

    /// Non-negative per-channel weights of layer `layer`.
    fn channel_weights(&self, layer: usize) -> &[f64];
}

/// Scales every spatial feature vector to unit length.
pub fn normalize_channels(features: &Tensor) -> Tensor {
    let (c, plane) = (features.dim(0), features.dim(1) * features.dim(2));
    let mut out = features.clone();
    let data = out.data_mut();
    for p in 0..plane {
        let norm = (0..c).map(|k| data[k * plane + p].powi(2)).sum::<f64>().sqrt();
        for k in 0..c {
            data[k * plane + p] /= norm + LPIPS_EPS;
        }
    }
    out
}

/// Sum over layers of the spatial mean of `sum_c w_c (f_a - f_b)^2` on
/// channel-normalized features.
pub fn lpips(a: &ImageTensor, b: &ImageTensor, backbone: &dyn Backbone) -> Result<f64> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::shape(
            format!("{:?}", a.tensor().shape()),
            format!("{:?}", b.tensor().shape()),
        ));
    }
    let fa = backbone.features(a)?;
    let fb = backbone.features(b)?;
    let mut total = 0.0;
    for (layer, (x, y)) in fa.iter().zip(&fb).enumerate() {
        let (x, y) = (normalize_channels(x), normalize_channels(y));
        let weights = backbone.channel_weights(layer);
        let (c, plane) = (x.dim(0), x.dim(1) * x.dim(2));
        if weights.len() != c {
            return Err(Error::shape(format!("{c} channel weights"), weights.len()));
        }
        let mut sum = 0.0;
        for p in 0..plane {
            for (k, w) in weights.iter().enumerate() {
                let d = x.data()[k * plane + p] - y.data()[k * plane + p];
                sum += w * d * d;
            }
        }
        total += sum / plane as f64;
    }
    Ok(total)
}

/// One 3x3 convolution followed by ReLU.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl ConvLayer {
    fn forward(&self, x: &Tensor) -> Tensor {
        kernels::conv2d_forward(x, &self.weight, Some(&self.bias), self.stride, self.weight.dim(2) / 2)
            .map(|v| v.max(0.0))
    }
}

/// A stack of ReLU convolutions whose every activation is an LPIPS layer.
#[derive(Clone, Debug)]
pub struct ConvBackbone {
    layers: Vec<ConvLayer>,
    weights: Vec<Vec<f64>>,
}

impl ConvBackbone {
    pub fn from_layers(layers: Vec<ConvLayer>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if layers.len() != weights.len() {
            return Err(Error::shape(format!("{} weight vectors", layers.len()), weights.len()));
        }
        for (l, w) in layers.iter().zip(&weights) {
            if w.len() != l.weight.dim(0) || w.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::Config(
                    "channel weights must be non-negative, one per channel".into(),
                ));
            }
        }
        Ok(Self { layers, weights })
    }

    /// Random 3x3 layers of the given widths (the first at stride 1, the rest
    /// at stride 2) with channel weights uniform in `[0, 1)`.
    pub fn random(in_channels: usize, widths: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut weights = Vec::new();
        let mut c_in = in_channels;
        for (i, &c) in widths.iter().enumerate() {
            layers.push(ConvLayer {
                weight: fan_in_normal(&[c, c_in, 3, 3], c_in * 9, &mut rng),
                bias: Tensor::uniform(&[c], -0.1, 0.1, &mut rng),
                stride: if i == 0 { 1 } else { 2 },
            });
            weights.push(Tensor::uniform(&[c], 0.0, 1.0, &mut rng).into_data());
            c_in = c;
        }
        Self { layers, weights }
    }

    /// The default evaluation backbone for RGB images.
    pub fn standard() -> Self {
        Self::random(3, &[16, 32, 32], 0x1b1b5)
    }
}

impl Backbone for ConvBackbone {
    fn features(&self, x: &ImageTensor) -> Result<Vec<Tensor>> {
        let mut h = ImageTensor::batch(std::slice::from_ref(x))?;
        let mut out = Vec::new();
        for layer in &self.layers {
            if h.dim(1) != layer.weight.dim(1) {
                return Err(Error::shape(layer.weight.dim(1), h.dim(1)));
            }
            h = layer.forward(&h);
            out.push(h.index_axis0(0));
        }
        Ok(out)
    }

    fn channel_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }
}

/// Image classifier producing a probability vector per image.
pub trait Classifier {
    fn probabilities(&self, x: &ImageTensor) -> Result<Vec<f64>>;
}

/// ReLU convolutions, global average pooling and a softmax linear layer.
#[derive(Clone, Debug)]
pub struct ConvClassifier {
    layers: Vec<ConvLayer>,
    weight: Tensor,
    bias: Tensor,
}

impl ConvClassifier {
    pub fn random(in_channels: usize, widths: &[usize], n_classes: usize, seed: u64) -> Self {
        let backbone = ConvBackbone::random(in_channels, widths, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a55);
        let width = widths.last().copied().unwrap_or(in_channels);
        Self {
            layers: backbone.layers,
            weight: fan_in_normal(&[n_classes, width], width, &mut rng),
            bias: Tensor::zeros(&[n_classes]),
        }
    }

    /// The default evaluation classifier for RGB images, with 10 classes.
    pub fn standard() -> Self {
        Self::random(3, &[16, 32], 10, 0x15c0)
    }
}

impl Classifier for ConvClassifier {
    fn probabilities(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        let mut h = ImageTensor::batch(std::slice::from_ref(x))?;
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        let (c, plane) = (h.dim(1), h.dim(2) * h.dim(3));
        let pooled: Vec<f64> = h
            .data()
            .chunks(plane)
            .take(c)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let logits: Vec<f64> = self
            .weight
            .data()
            .chunks(c)
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(&pooled).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        Ok(softmax(&logits))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `KL(p || q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

fn check_distribution(p: &[f64], classes: usize) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.len() != classes || p.iter().any(|v| v.is_nan() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "classifier output is not a probability vector over {classes} classes (sum {sum})"
        )));
    }
    Ok(())
}

/// Standard Inception Score from per-image class distributions: for each of
/// `n_splits` contiguous splits, `exp(mean_i KL(p_i || mean_j p_j))`,
/// averaged over splits. Always at least 1.
pub fn inception_score_from_probabilities(probs: &[Vec<f64>], n_splits: usize) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Config("inception score of an empty image set".into()));
    }
    if n_splits == 0 || n_splits > probs.len() {
        return Err(Error::Config(format!(
            "cannot split {} images into {n_splits} parts",
            probs.len()
        )));
    }
    let classes = probs[0].len();
    for p in probs {
        check_distribution(p, classes)?;
    }
    let (base, extra) = (probs.len() / n_splits, probs.len() % n_splits);
    let mut start = 0;
    let mut total = 0.0;
    for s in 0..n_splits {
        let part = &probs[start..start + base + usize::from(s < extra)];
        start += part.len();
        let mut marginal = vec![0.0; classes];
        for p in part {
            for (m, v) in marginal.iter_mut().zip(p) {
                *m += v;
            }
        }
        marginal.iter_mut().for_each(|m| *m /= part.len() as f64);
        let mean_kl = part.iter().map(|p| kl_divergence(p, &marginal)).sum::<f64>() / part.len() as f64;
        total += mean_kl.exp();
    }
    Ok(total / n_splits as f64)
}

pub fn inception_score(images: &[ImageTensor], classifier: &dyn Classifier, n_splits: usize) -> Result<f64> {
    let probs = images
        .iter()
        .map(|x| classifier.probabilities(x))
        .collect::<Result<Vec<_>>>()?;
    inception_score_from_probabilities(&probs, n_splits)
}
