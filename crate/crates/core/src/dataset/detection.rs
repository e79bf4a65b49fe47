use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImageRecord;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// A detected object: pixel box `(x_min, y_min, x_max, y_max)`, label and
/// confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [f64; 4],
    pub label: String,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: [f64; 4], label: impl Into<String>, confidence: f64) -> Self {
        Self {
            bbox,
            label: label.into(),
            confidence,
        }
    }

    /// Checks the box lies inside a `width x height` image and the
    /// confidence is a probability.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let [x0, y0, x1, y1] = self.bbox;
        let ok = 0.0 <= x0 && x0 < x1 && x1 <= width as f64 && 0.0 <= y0 && y0 < y1 && y1 <= height as f64;
        if !ok {
            return Err(Error::Detector(format!(
                "box {:?} outside {width}x{height} image",
                self.bbox
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Detector(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if self.label.trim().is_empty() {
            return Err(Error::Detector("empty detection label".into()));
        }
        Ok(())
    }
}

/// Object detector backend.
pub trait Detector: Send + Sync {
    fn detect(&self, image: &ImageTensor) -> Result<Vec<Detection>>;

    /// Detection on a manifest image; backends that key on the source file
    /// override this.
    fn detect_record(&self, _record: &ImageRecord, image: &ImageTensor) -> Result<Vec<Detection>> {
        self.detect(image)
    }
}

fn finish(mut found: Vec<Detection>, image: &ImageTensor) -> Result<Vec<Detection>> {
    for d in &found {
        d.validate(image.width(), image.height())?;
    }
    found.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(found)
}

/// Runs `detector` and returns validated detections by descending confidence.
pub fn detect(detector: &dyn Detector, image: &ImageTensor) -> Result<Vec<Detection>> {
    finish(detector.detect(image)?, image)
}

pub fn detect_record(detector: &dyn Detector, record: &ImageRecord, image: &ImageTensor) -> Result<Vec<Detection>> {
    finish(detector.detect_record(record, image)?, image)
}

/// Deterministic detector that echoes configured fixture boxes.
///
/// Boxes can be given per manifest path; images without an entry get the
/// default list. Paths marked as failing return a detector error.
#[derive(Clone, Debug, Default)]
pub struct StubDetector {
    default: Vec<Detection>,
    by_path: HashMap<String, Vec<Detection>>,
    failing: HashSet<String>,
}

impl StubDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `detections` for every image.
    pub fn fixed(detections: Vec<Detection>) -> Self {
        Self {
            default: detections,
            ..Self::default()
        }
    }

    pub fn with_path(mut self, path: impl Into<String>, detections: Vec<Detection>) -> Self {
        self.by_path.insert(path.into(), detections);
        self
    }

    pub fn failing_on(mut self, path: impl Into<String>) -> Self {
        self.failing.insert(path.into());
        self
    }

    /// Reads a fixture file with one detection per line, tab separated:
    /// `path`, `label`, `confidence`, `x_min`, `y_min`, `x_max`, `y_max`.
    /// `#` lines are comments.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut stub = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 tab-separated fields, found {}", f.len())));
            }
            let num = |s: &str| -> Result<f64> { s.trim().parse().map_err(|e| err(format!("bad number {s:?}: {e}"))) };
            let det = Detection::new(
                [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?],
                f[1].trim(),
                num(f[2])?,
            );
            stub.by_path.entry(f[0].to_string()).or_default().push(det);
        }
        Ok(stub)
    }
}

impl Detector for StubDetector {
    fn detect(&self, _image: &ImageTensor) -> Result<Vec<Detection>> {
        Ok(self.default.clone())
    }

    fn detect_record(&self, record: &ImageRecord, _image: &ImageTensor) -> Result<Vec<Detection>> {
        if self.failing.contains(&record.path) {
            return Err(Error::Detector(format!("stub failure on {}", record.path)));
        }
        Ok(self
            .by_path
            .get(&record.path)
            .cloned()
            .unwrap_or_else(|| self.default.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ImageTensor {
        ImageTensor::filled(3, 40, 60, 0.0)
    }

    #[test]
    fn stub_echoes_fixture_boxes() {
        let boxes = vec![
            Detection::new([0.0, 0.0, 10.0, 10.0], "car", 0.9),
            Detection::new([5.0, 5.0, 30.0, 20.0], "person", 0.4),
        ];
        let stub = StubDetector::fixed(boxes.clone());
        assert_eq!(detect(&stub, &image()).unwrap(), boxes);
    }

    #[test]
    fn blank_image_without_boxes() {
        assert!(detect(&StubDetector::new(), &image()).unwrap().is_empty());
    }

    #[test]
    fn output_sorted_by_descending_confidence() {
        let stub = StubDetector::fixed(vec![
            Detection::new([0.0, 0.0, 10.0, 10.0], "a", 0.2),
            Detection::new([0.0, 0.0, 10.0, 10.0], "b", 0.95),
            Detection::new([0.0, 0.0, 10.0, 10.0], "c", 0.6),
        ]);
        let labels: Vec<_> = detect(&stub, &image()).unwrap().into_iter().map(|d| d.label).collect();
        assert_eq!(labels, ["b", "c", "a"]);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        let outside = StubDetector::fixed(vec![Detection::new([0.0, 0.0, 61.0, 10.0], "a", 0.5)]);
        assert!(detect(&outside, &image()).is_err());
        let inverted = StubDetector::fixed(vec![Detection::new([5.0, 0.0, 5.0, 10.0], "a", 0.5)]);
        assert!(detect(&inverted, &image()).is_err());
        let bad_conf = StubDetector::fixed(vec![Detection::new([0.0, 0.0, 5.0, 10.0], "a", 1.5)]);
        assert!(detect(&bad_conf, &image()).is_err());
    }

    #[test]
    fn keyed_fixtures_and_failures() {
        let rec = |p: &str| ImageRecord::new(p, "sunny", 60, 40).unwrap();
        let stub = StubDetector::new()
            .with_path("x.png", vec![Detection::new([1.0, 1.0, 9.0, 9.0], "car", 0.7)])
            .failing_on("bad.png");
        assert_eq!(detect_record(&stub, &rec("x.png"), &image()).unwrap().len(), 1);
        assert!(detect_record(&stub, &rec("y.png"), &image()).unwrap().is_empty());
        assert!(detect_record(&stub, &rec("bad.png"), &image()).is_err());
    }
}
