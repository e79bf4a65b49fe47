use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{inception_score, lpips, Backbone, ClassMetrics, Classifier, MetricReport, REPORT_VERSION};
use crate::dataset::{normalize_class_name, DatasetManifest};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::model::Translator;
use crate::objective::ImageSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub n_content_per_class: usize,
    /// Translation pairs per content image.
    pub n_pairs: usize,
    /// Style images per translation.
    pub k_style: usize,
    pub target_class: String,
    pub seed: u64,
    pub is_splits: usize,
    /// Free-form identifier echoed in the report.
    pub model_id: String,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            n_content_per_class: 20,
            n_pairs: 5,
            k_style: 2,
            target_class: String::new(),
            seed: 0,
            is_splits: 1,
            model_id: String::new(),
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_content_per_class == 0 || self.n_pairs == 0 || self.k_style == 0 || self.is_splits == 0 {
            return Err(Error::Config("evaluation counts must all be >= 1".into()));
        }
        if self.target_class.trim().is_empty() {
            return Err(Error::Config("evaluation needs a target class".into()));
        }
        Ok(())
    }
}

/// The metric networks used by [`run_protocol`].
pub struct Metrics<'a> {
    pub backbone: &'a dyn Backbone,
    pub classifier: &'a dyn Classifier,
}

/// Seed for one source class, derived from the run seed and the class name
/// only, so results do not depend on the order classes are processed in.
pub fn class_seed(seed: u64, class: &str) -> u64 {
    // FNV-1a over the name, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in class.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

/// `n` distinct indices below `len`, or `n` draws with replacement when
/// `len < n`.
fn pick<R: Rng>(rng: &mut R, len: usize, n: usize, what: &str) -> Vec<usize> {
    if len >= n {
        index::sample(rng, len, n).into_vec()
    } else {
        log::warn!("only {len} images for {n} {what}; sampling with replacement");
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Few-shot evaluation: for every class of `content`, pick
/// `n_content_per_class` images; for each, make `n_pairs` pairs of
/// translations, the two sides of a pair using independently drawn style
/// sets of `k_style` images of the target class from `styles`. Reports the
/// mean LPIPS within pairs and the Inception Score of all translations, per
/// source class.
pub fn run_protocol(
    model: &dyn Translator,
    content: &DatasetManifest,
    styles: &DatasetManifest,
    images: &dyn ImageSource,
    metrics: &Metrics,
    p: &EvalProtocol,
) -> Result<MetricReport> {
    p.validate()?;
    let target = normalize_class_name(&p.target_class);
    let style_pool: Vec<_> = styles.records_of(&target).collect();
    if style_pool.is_empty() {
        return Err(Error::UnknownClass(target));
    }
    let mut rows = Vec::new();
    for class in content.classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed(p.seed, class));
        let pool: Vec<_> = content.records_of(class).collect();
        let mut translations = Vec::with_capacity(2 * p.n_content_per_class * p.n_pairs);
        let mut distances = Vec::with_capacity(p.n_content_per_class * p.n_pairs);
        for ci in pick(&mut rng, pool.len(), p.n_content_per_class, "content images") {
            let x = images.load(pool[ci])?;
            for _ in 0..p.n_pairs {
                let mut side = || -> Result<ImageTensor> {
                    let ys = pick(&mut rng, style_pool.len(), p.k_style, "style images")
                        .into_iter()
                        .map(|i| images.load(style_pool[i]))
                        .collect::<Result<Vec<_>>>()?;
                    model.translate(&x, &ys)
                };
                let a = side()?;
                let b = side()?;
                distances.push(lpips(&a, &b, metrics.backbone)?);
                translations.push(a);
                translations.push(b);
            }
        }
        rows.push(ClassMetrics {
            class: class.to_string(),
            lpips: distances.iter().sum::<f64>() / distances.len() as f64,
            inception_score: inception_score(&translations, metrics.classifier, p.is_splits)?,
            pairs: distances.len(),
            translations: translations.len(),
        });
    }
    Ok(MetricReport::new(
        rows,
        p.k_style,
        p.seed,
        &target,
        &p.model_id,
        REPORT_VERSION,
    ))
}
