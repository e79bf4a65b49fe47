//! Procedural datasets for tests, examples and smoke runs: coloured shapes on
//! a textured background, one shape and tint per class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetManifest, ImageRecord};
use crate::error::Result;
use crate::imaging::ImageTensor;
use crate::objective::MemoryImageSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Disc,
    Square,
    Cross,
    Stripe,
}

/// Appearance of one synthetic class.
#[derive(Clone, Debug)]
pub struct ShapeClass {
    pub name: String,
    pub shape: Shape,
    /// RGB in `[-1, 1]`.
    pub tint: [f64; 3],
}

impl ShapeClass {
    pub fn new(name: &str, shape: Shape, tint: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            shape,
            tint,
        }
    }
}

/// Red discs and blue squares.
pub fn two_classes() -> Vec<ShapeClass> {
    vec![
        ShapeClass::new("red discs", Shape::Disc, [0.9, -0.6, -0.6]),
        ShapeClass::new("blue squares", Shape::Square, [-0.6, -0.4, 0.9]),
    ]
}

/// Four classes, usable for seen/unseen splits.
pub fn four_classes() -> Vec<ShapeClass> {
    let mut classes = two_classes();
    classes.push(ShapeClass::new("green crosses", Shape::Cross, [-0.5, 0.8, -0.5]));
    classes.push(ShapeClass::new("yellow stripes", Shape::Stripe, [0.8, 0.8, -0.7]));
    classes
}

fn inside(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Disc => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Cross => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        Shape::Stripe => dy.abs() <= r / 2.5 && dx.abs() <= 1.4 * r,
    }
}

/// Renders one `size x size` image of `class` from `rng`.
pub fn render<R: Rng + ?Sized>(class: &ShapeClass, size: usize, rng: &mut R) -> ImageTensor {
    let s = size as f64;
    let r = rng.random_range(0.18..0.3) * s;
    let cx = rng.random_range(r..s - r);
    let cy = rng.random_range(r..s - r);
    let background = rng.random_range(-0.3..0.1);
    let mut img = ImageTensor::filled(3, size, size, 0.0);
    let plane = size * size;
    let data = img.data_mut();
    for y in 0..size {
        for x in 0..size {
            let noise = rng.random_range(-0.05..0.05);
            let hit = inside(class.shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r);
            for c in 0..3 {
                data[c * plane + y * size + x] = if hit {
                    class.tint[c] + noise
                } else {
                    background + 0.3 * class.tint[c] + noise
                }
                .clamp(-1.0, 1.0);
            }
        }
    }
    img
}

/// `per_class` images of every class, held in memory. Record paths are
/// `<class>/<index>.png`.
pub fn shapes_dataset(
    classes: &[ShapeClass],
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<(DatasetManifest, MemoryImageSource)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut source = MemoryImageSource::new();
    for class in classes {
        for i in 0..per_class {
            let path = format!("{}/{i:03}.png", class.name.replace(' ', "_"));
            source.insert(path.clone(), render(class, size, &mut rng));
            records.push(ImageRecord::new(path, &class.name, size as u32, size as u32)?);
        }
    }
    Ok((DatasetManifest::new(records, seed)?, source))
}
