use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use funit_autodiff::Tensor;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::dataset::{DatasetManifest, ImageRecord};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Supplies the pixels of manifest records at the training resolution.
pub trait ImageSource {
    fn load(&self, record: &ImageRecord) -> Result<ImageTensor>;
}

/// Reads images from disk below `root`, resized to `size x size`, with an
/// in-memory cache.
pub struct FileImageSource {
    root: PathBuf,
    size: usize,
    cache: Mutex<HashMap<String, ImageTensor>>,
}

impl FileImageSource {
    pub fn new(root: impl Into<PathBuf>, size: usize) -> Self {
        Self {
            root: root.into(),
            size,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl ImageSource for FileImageSource {
    fn load(&self, record: &ImageRecord) -> Result<ImageTensor> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(image) = cache.get(&record.path) {
            return Ok(image.clone());
        }
        let image = ImageTensor::load_square(&self.root.join(&record.path), self.size)?;
        cache.insert(record.path.clone(), image.clone());
        Ok(image)
    }
}

/// Images held in memory, keyed by record path.
#[derive(Clone, Debug, Default)]
pub struct MemoryImageSource {
    images: HashMap<String, ImageTensor>,
}

impl MemoryImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, image: ImageTensor) {
        self.images.insert(path.into(), image);
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, record: &ImageRecord) -> Result<ImageTensor> {
        self.images
            .get(&record.path)
            .cloned()
            .ok_or_else(|| Error::Manifest(format!("no image loaded for {}", record.path)))
    }
}

/// Random stream for one training iteration; depends only on the run seed
/// and the iteration, so resumed runs draw the same batches.
pub fn batch_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// One training sample as manifest record indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSpec {
    pub content: usize,
    pub content_class: usize,
    /// `k` images of `style_class`.
    pub styles: Vec<usize>,
    pub style_class: usize,
}

/// Draws `cfg.batch_size` samples: a uniformly random content image, a
/// uniformly random target class and `cfg.k` images of that class (without
/// replacement when the class has at least `k` images). Class indices follow
/// [`DatasetManifest::classes`].
pub fn sample_batch<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<SampleSpec>> {
    if manifest.is_empty() {
        return Err(Error::Manifest("cannot sample from an empty manifest".into()));
    }
    if cfg.k == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("k and batch_size must be >= 1".into()));
    }
    let by_class: Vec<&Vec<usize>> = manifest.class_index().values().collect();
    let class_of = |record: usize| {
        manifest
            .class_position(&manifest.records()[record].class_name)
            .expect("indexed class")
    };
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let content = rng.random_range(0..manifest.len());
        let style_class = rng.random_range(0..by_class.len());
        let members = by_class[style_class];
        let styles = if members.len() >= cfg.k {
            index::sample(rng, members.len(), cfg.k)
                .into_iter()
                .map(|i| members[i])
                .collect()
        } else {
            (0..cfg.k)
                .map(|_| members[rng.random_range(0..members.len())])
                .collect()
        };
        batch.push(SampleSpec {
            content,
            content_class: class_of(content),
            styles,
            style_class,
        });
    }
    Ok(batch)
}

/// A materialized training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `(N, C, S, S)` content images.
    pub content: Tensor,
    pub content_classes: Vec<usize>,
    /// `(N * k, C, S, S)` style images, grouped per sample.
    pub styles: Tensor,
    pub style_classes: Vec<usize>,
    pub k: usize,
}

impl Batch {
    pub fn load(manifest: &DatasetManifest, specs: &[SampleSpec], source: &dyn ImageSource) -> Result<Self> {
        let k = specs
            .first()
            .map(|s| s.styles.len())
            .ok_or_else(|| Error::Config("empty batch".into()))?;
        if specs.iter().any(|s| s.styles.len() != k) || k == 0 {
            return Err(Error::Config(
                "every sample needs the same number of style images".into(),
            ));
        }
        let load = |i: usize| -> Result<ImageTensor> {
            let record = manifest
                .records()
                .get(i)
                .ok_or_else(|| Error::Manifest(format!("record index {i} out of range")))?;
            source.load(record)
        };
        let content = specs.iter().map(|s| load(s.content)).collect::<Result<Vec<_>>>()?;
        let styles = specs
            .iter()
            .flat_map(|s| s.styles.iter().map(|&i| load(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(
            &content,
            specs.iter().map(|s| s.content_class).collect(),
            &styles,
            specs.iter().map(|s| s.style_class).collect(),
        )
    }

    /// Builds a batch from images; `styles` holds `k` images per content image.
    pub fn from_images(
        content: &[ImageTensor],
        content_classes: Vec<usize>,
        styles: &[ImageTensor],
        style_classes: Vec<usize>,
    ) -> Result<Self> {
        let n = content.len();
        if n == 0 || styles.is_empty() || !styles.len().is_multiple_of(n) {
            return Err(Error::shape(format!("a multiple of {n} style images"), styles.len()));
        }
        if content_classes.len() != n || style_classes.len() != n {
            return Err(Error::shape(
                format!("{n} class labels"),
                content_classes.len().min(style_classes.len()),
            ));
        }
        Ok(Self {
            content: ImageTensor::batch(content)?,
            content_classes,
            styles: ImageTensor::batch(styles)?,
            style_classes,
            k: styles.len() / n,
        })
    }

    pub fn len(&self) -> usize {
        self.content_classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content_classes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        let mut records = Vec::new();
        for (class, n) in [("a", 5), ("b", 2), ("c", 3)] {
            for i in 0..n {
                records.push(ImageRecord::new(format!("{class}/{i}.png"), class, 8, 8).unwrap());
            }
        }
        DatasetManifest::new(records, 3).unwrap()
    }

    #[test]
    fn same_seed_and_iteration_same_batch() {
        let m = manifest();
        let cfg = TrainConfig {
            batch_size: 6,
            k: 2,
            ..TrainConfig::default()
        };
        let a = sample_batch(&m, &cfg, &mut batch_rng(9, 17)).unwrap();
        let b = sample_batch(&m, &cfg, &mut batch_rng(9, 17)).unwrap();
        let c = sample_batch(&m, &cfg, &mut batch_rng(9, 18)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn styles_come_from_the_target_class() {
        let m = manifest();
        let cfg = TrainConfig {
            batch_size: 32,
            k: 3,
            ..TrainConfig::default()
        };
        let classes = m.classes();
        for spec in sample_batch(&m, &cfg, &mut batch_rng(1, 0)).unwrap() {
            assert_eq!(spec.styles.len(), 3);
            for &s in &spec.styles {
                assert_eq!(m.records()[s].class_name, classes[spec.style_class]);
            }
            assert_eq!(m.records()[spec.content].class_name, classes[spec.content_class]);
            // Class "b" has two images, fewer than k, so it is drawn with
            // replacement; larger classes never repeat an image.
            if classes[spec.style_class] != "b" {
                let mut s = spec.styles.clone();
                s.dedup();
                s.sort();
                s.dedup();
                assert_eq!(s.len(), 3);
            }
        }
    }

    #[test]
    fn memory_source_reports_missing_images() {
        let m = manifest();
        let mut src = MemoryImageSource::new();
        src.insert("a/0.png", ImageTensor::filled(3, 8, 8, 0.5));
        assert!(src.load(&m.records()[0]).is_ok());
        assert!(src.load(&m.records()[1]).is_err());
    }
}
