//! Instance-aware translation built on a trained generator and a detector.
//!
//! * Paste-back merge: translate the whole image, translate every detected
//!   object crop on its own and paste it back at its box.
//! * Latent merge: write the content code of every object crop into the
//!   matching region of the global content code and decode once.
//!
//! Both use the mean style code of the style set for every part.

use funit_autodiff::kernels::resize_bilinear;
use serde::{Deserialize, Serialize};

use crate::dataset::{detect, Detection, Detector};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, PixelRect};
use crate::model::{AdaInParams, ContentCode, Generator};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Width in pixels of the linear blend ramp at the inside of pasted
    /// boxes; 0 pastes hard edges.
    pub feather_width: usize,
    /// Highest-confidence detections used per image.
    pub max_objects: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            feather_width: 0,
            max_objects: 8,
        }
    }
}

/// Which merge to apply after plain translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    None,
    Paste,
    Latent,
}

/// The detections used for merging, lowest confidence first so that the
/// most confident object is written last.
fn merge_order(detector: &dyn Detector, x: &ImageTensor, cfg: &MergeConfig) -> Result<Vec<Detection>> {
    let mut found = detect(detector, x)?;
    found.truncate(cfg.max_objects);
    found.reverse();
    Ok(found)
}

fn style_params(g: &Generator, ys: &[ImageTensor]) -> Result<AdaInParams> {
    g.compute_adain_params(&g.encode_style(ys)?)
}

/// Resizes `crop` to the generator input size.
fn to_generator_input(g: &Generator, crop: &ImageTensor) -> ImageTensor {
    let s = g.config().image_size;
    crop.resize(s, s)
}

/// Plain translation with every detected object re-translated from its own
/// crop and pasted over the result.
pub fn translate_detect_merge(
    x: &ImageTensor,
    ys: &[ImageTensor],
    detector: &dyn Detector,
    g: &Generator,
    cfg: &MergeConfig,
) -> Result<ImageTensor> {
    let params = style_params(g, ys)?;
    let mut out = g.decode(&g.encode_content(x)?, &params)?;
    for det in merge_order(detector, x, cfg)? {
        let Some(rect) = PixelRect::covering(det.bbox, x.width(), x.height()) else {
            continue;
        };
        let crop = to_generator_input(g, &x.crop(rect)?);
        let object = g
            .decode(&g.encode_content(&crop)?, &params)?
            .resize(rect.height(), rect.width());
        if cfg.feather_width == 0 {
            out.paste(&object, rect)?;
        } else {
            blend(&mut out, &object, rect, cfg.feather_width);
        }
    }
    Ok(out)
}

/// Pastes `patch` with weight ramping from `1 / (feather + 1)` at the box
/// border to 1 at `feather` pixels inside.
fn blend(out: &mut ImageTensor, patch: &ImageTensor, rect: PixelRect, feather: usize) {
    let (h, w) = (out.height(), out.width());
    let channels = out.channels();
    let data = out.data_mut();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let edge = (x - rect.x0).min(rect.x1 - 1 - x).min(y - rect.y0).min(rect.y1 - 1 - y);
            let alpha = ((edge + 1) as f64 / (feather + 1) as f64).min(1.0);
            for c in 0..channels {
                let i = (c * h + y) * w + x;
                data[i] = alpha * patch.get(c, y - rect.y0, x - rect.x0) + (1.0 - alpha) * data[i];
            }
        }
    }
}

/// Latent cells covered by a pixel box: floor the scaled minimum, ceil the
/// scaled maximum, clamp to the code. `None` when nothing remains.
pub fn latent_region(bbox: [f64; 4], factor: usize, code_height: usize, code_width: usize) -> Option<PixelRect> {
    let f = factor as f64;
    PixelRect::covering(
        [bbox[0] / f, bbox[1] / f, bbox[2] / f, bbox[3] / f],
        code_width,
        code_height,
    )
}

/// The global content code of `x` with each detection's crop code resized
/// into its latent region, in the given order. Also returns the regions
/// written.
pub fn merge_content_code(
    x: &ImageTensor,
    detections: &[Detection],
    g: &Generator,
) -> Result<(ContentCode, Vec<PixelRect>)> {
    let mut code = g.encode_content(x)?;
    let (channels, h, w) = (code.channels(), code.height(), code.width());
    let factor = g.config().downsample_factor();
    let mut regions = Vec::new();
    for det in detections {
        let Some(region) = latent_region(det.bbox, factor, h, w) else {
            log::warn!("detection {:?} collapses to an empty latent region; skipped", det.bbox);
            continue;
        };
        let Some(rect) = PixelRect::covering(det.bbox, x.width(), x.height()) else {
            continue;
        };
        let object = g.encode_content(&to_generator_input(g, &x.crop(rect)?))?;
        let resized = resize_bilinear(&object.0, region.height(), region.width());
        let data = code.0.data_mut();
        for c in 0..channels {
            for y in region.y0..region.y1 {
                for xx in region.x0..region.x1 {
                    let src = (c * region.height() + y - region.y0) * region.width() + xx - region.x0;
                    data[(c * h + y) * w + xx] = resized.data()[src];
                }
            }
        }
        regions.push(region);
    }
    Ok((code, regions))
}

/// Translation decoded once from the merged content code.
pub fn translate_latent_merge(
    x: &ImageTensor,
    ys: &[ImageTensor],
    detector: &dyn Detector,
    g: &Generator,
    cfg: &MergeConfig,
) -> Result<ImageTensor> {
    let params = style_params(g, ys)?;
    let detections = merge_order(detector, x, cfg)?;
    let (code, _) = merge_content_code(x, &detections, g)?;
    g.decode(&code, &params)
}

/// Dispatches on `variant`; a detector is required for the merges.
pub fn translate_with(
    variant: Variant,
    x: &ImageTensor,
    ys: &[ImageTensor],
    detector: Option<&dyn Detector>,
    g: &Generator,
    cfg: &MergeConfig,
) -> Result<ImageTensor> {
    let need = || Error::Config(format!("the {variant:?} variant needs a detector"));
    match variant {
        Variant::None => g.translate(x, ys),
        Variant::Paste => translate_detect_merge(x, ys, detector.ok_or_else(need)?, g, cfg),
        Variant::Latent => translate_latent_merge(x, ys, detector.ok_or_else(need)?, g, cfg),
    }
}
