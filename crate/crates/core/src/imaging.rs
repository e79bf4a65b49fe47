//! Image tensors and pixel-space helpers.
//!
//! Images are `(C, H, W)` tensors with values in `[-1, 1]`. Files are decoded
//! from 8-bit RGB and mapped with `v / 127.5 - 1`.

use std::path::Path;

use funit_autodiff::kernels::resize_bilinear;
use funit_autodiff::Tensor;
use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{Error, Result};

/// A single `(C, H, W)` image in the `[-1, 1]` convention.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

/// Half-open integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Covering integer rectangle of a real-valued box: floor the minimum,
    /// ceil the maximum, clamp to `width x height`. `None` if empty.
    pub fn covering(bbox: [f64; 4], width: usize, height: usize) -> Option<Self> {
        let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
        let rect = Self {
            x0: clamp(bbox[0].floor(), width),
            y0: clamp(bbox[1].floor(), height),
            x1: clamp(bbox[2].ceil(), width),
            y1: clamp(bbox[3].ceil(), height),
        };
        (rect.x1 > rect.x0 && rect.y1 > rect.y0).then_some(rect)
    }
}

impl ImageTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 3 || tensor.is_empty() {
            return Err(Error::shape("(C, H, W) image", format!("{:?}", tensor.shape())));
        }
        Ok(Self(tensor))
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self(Tensor::full(&[channels, height, width], value))
    }

    pub fn channels(&self) -> usize {
        self.0.dim(0)
    }

    pub fn height(&self) -> usize {
        self.0.dim(1)
    }

    pub fn width(&self) -> usize {
        self.0.dim(2)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Pixel values, channel-major.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 127.5 - 1.0;
            }
        }
        Self(Tensor::from_vec(&[3, h, w], data).expect("rgb image shape"))
    }

    /// Quantizes to 8-bit RGB. Single-channel images are replicated.
    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let c = c.min(self.channels() - 1);
                let v = self.get(c, y as usize, x as usize);
                ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Decodes and resizes to a `size x size` square.
    pub fn load_square(path: &Path, size: usize) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        if rgb.width() as usize == size && rgb.height() as usize == size {
            return Ok(Self::from_rgb8(&rgb));
        }
        let resized = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
        Ok(Self::from_rgb8(&resized))
    }

    /// Writes a lossless PNG, creating parent directories.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn crop(&self, rect: PixelRect) -> Result<Self> {
        if rect.x1 > self.width() || rect.y1 > self.height() || rect.width() == 0 || rect.height() == 0 {
            return Err(Error::shape(
                format!("rectangle inside {}x{}", self.width(), self.height()),
                format!("{rect:?}"),
            ));
        }
        let mut data = Vec::with_capacity(self.channels() * rect.width() * rect.height());
        for c in 0..self.channels() {
            for y in rect.y0..rect.y1 {
                let row = (c * self.height() + y) * self.width();
                data.extend_from_slice(&self.0.data()[row + rect.x0..row + rect.x1]);
            }
        }
        Ok(Self(
            Tensor::from_vec(&[self.channels(), rect.height(), rect.width()], data).expect("crop shape"),
        ))
    }

    /// Bilinear resize with half-pixel centres; same-size resize is exact.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        Self(resize_bilinear(&self.0, height, width))
    }

    /// Overwrites `rect` with `patch`, which must have the rectangle's size.
    pub fn paste(&mut self, patch: &ImageTensor, rect: PixelRect) -> Result<()> {
        if patch.channels() != self.channels()
            || patch.width() != rect.width()
            || patch.height() != rect.height()
            || rect.x1 > self.width()
            || rect.y1 > self.height()
        {
            return Err(Error::shape(
                format!("{}x{}x{} patch", self.channels(), rect.height(), rect.width()),
                format!("{}x{}x{}", patch.channels(), patch.height(), patch.width()),
            ));
        }
        let (h, w) = (self.height(), self.width());
        let data = self.0.data_mut();
        for c in 0..patch.channels() {
            for y in rect.y0..rect.y1 {
                let dst = (c * h + y) * w;
                for x in rect.x0..rect.x1 {
                    data[dst + x] = patch.get(c, y - rect.y0, x - rect.x0);
                }
            }
        }
        Ok(())
    }

    /// Stacks images into an `(N, C, H, W)` batch tensor.
    pub fn batch(images: &[ImageTensor]) -> Result<Tensor> {
        let tensors: Vec<Tensor> = images.iter().map(|i| i.0.clone()).collect();
        Tensor::stack(&tensors).map_err(|e| Error::shape("equal-shaped images", e))
    }
}
