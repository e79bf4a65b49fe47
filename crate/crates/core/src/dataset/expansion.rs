use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{detect_record, normalize_class_name, DatasetManifest, Detector, ImageRecord};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, PixelRect};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorErrorPolicy {
    #[default]
    Abort,
    /// Log the failure and continue with the next image.
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Detections must score strictly above this value.
    pub confidence_threshold: f64,
    /// When set, only object classes in the list are produced.
    pub keep_list: Option<BTreeSet<String>>,
    /// Keep the source records alongside the object crops.
    pub include_whole_images: bool,
    /// Minimum side, in pixels, of the rounded crop rectangle.
    pub min_box_side: usize,
    pub on_detector_error: DetectorErrorPolicy,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            keep_list: None,
            include_whole_images: false,
            min_box_side: 16,
            on_detector_error: DetectorErrorPolicy::Abort,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

/// `"<domain> - <object>"`, normalized.
pub fn object_class_name(domain: &str, object: &str) -> String {
    normalize_class_name(&format!("{domain} - {object}"))
}

fn file_stem(path: &str) -> &str {
    Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or(path)
}

/// Expands `manifest` with one record per confident detection.
///
/// Images are read from `image_root/<record path>`. Each detection scoring
/// strictly above the threshold, whose covering pixel rectangle has both
/// sides at least `min_box_side`, is cropped and written losslessly to
/// `image_root/crop_subdir/<class>/<stem>_<x0>_<y0>_<x1>_<y1>.png`, and
/// recorded under the class `"<domain> - <object>"`. Output records follow
/// source order, then detection confidence order.
pub fn expand_dataset(
    manifest: &DatasetManifest,
    detector: &dyn Detector,
    cfg: &ExpansionConfig,
    image_root: &Path,
    crop_subdir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let crop_root = image_root.join(crop_subdir);
    std::fs::create_dir_all(&crop_root).map_err(|e| Error::io(&crop_root, e))?;
    let keep_list: Option<BTreeSet<String>> = cfg
        .keep_list
        .as_ref()
        .map(|k| k.iter().map(|c| normalize_class_name(c)).collect());
    let subdir = crop_subdir.to_string_lossy().replace('\\', "/");
    let subdir = subdir.trim_end_matches('/');

    let mut records = Vec::new();
    for record in manifest.records() {
        if cfg.include_whole_images {
            records.push(record.clone());
        }
        let image = ImageTensor::load(&image_root.join(&record.path))?;
        let detections = match detect_record(detector, record, &image) {
            Ok(d) => d,
            Err(e) => match cfg.on_detector_error {
                DetectorErrorPolicy::Abort => return Err(e),
                DetectorErrorPolicy::Skip => {
                    log::warn!("skipping {}: {e}", record.path);
                    continue;
                }
            },
        };
        for det in detections {
            if det.confidence <= cfg.confidence_threshold {
                continue;
            }
            let Some(rect) = PixelRect::covering(det.bbox, image.width(), image.height()) else {
                continue;
            };
            if rect.width() < cfg.min_box_side || rect.height() < cfg.min_box_side {
                continue;
            }
            let class = object_class_name(&record.class_name, &det.label);
            if keep_list.as_ref().is_some_and(|k| !k.contains(&class)) {
                continue;
            }
            let file = format!(
                "{}_{}_{}_{}_{}.png",
                file_stem(&record.path),
                rect.x0,
                rect.y0,
                rect.x1,
                rect.y1
            );
            let rel = if subdir.is_empty() {
                format!("{class}/{file}")
            } else {
                format!("{subdir}/{class}/{file}")
            };
            image.crop(rect)?.save_png(&image_root.join(&rel))?;
            records.push(ImageRecord::new(
                rel,
                &class,
                rect.width() as u32,
                rect.height() as u32,
            )?);
        }
    }
    DatasetManifest::new(records, manifest.seed())
}
