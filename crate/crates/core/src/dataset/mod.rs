//! Image manifests and the curation steps applied to them: unseen-class
//! splits, class balancing, detection-driven class expansion and keep-list
//! filtering.
//!
//! # Manifest format
//!
//! One record per line, tab separated: `path`, `class_name`, `width`,
//! `height`. Lines starting with `#` are comments; a `# seed=<n>` comment
//! carries the sampling seed. Class names are normalized on load (lowercase,
//! single spaces).

mod detection;
mod expansion;
mod keep_list;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use detection::{detect, detect_record, Detection, Detector, StubDetector};
pub use expansion::{expand_dataset, object_class_name, DetectorErrorPolicy, ExpansionConfig};
pub use keep_list::{load_keep_list, object_keep_list};

/// Lowercases and collapses runs of whitespace into single spaces.
pub fn normalize_class_name(name: &str) -> String {
    name.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub class_name: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    /// Builds a record with a normalized class name, checking its invariants.
    pub fn new(path: impl Into<String>, class_name: &str, width: u32, height: u32) -> Result<Self> {
        let record = Self {
            path: path.into(),
            class_name: normalize_class_name(class_name),
            width,
            height,
        };
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<()> {
        if self.path.is_empty() {
            return Err(Error::Manifest("empty record path".into()));
        }
        if self.path.contains(['\t', '\n']) {
            return Err(Error::Manifest(format!(
                "record path {:?} contains a tab or newline",
                self.path
            )));
        }
        if self.class_name.is_empty() {
            return Err(Error::Manifest(format!("record {} has an empty class name", self.path)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Manifest(format!("record {} has a zero dimension", self.path)));
        }
        Ok(())
    }
}

/// Ordered catalog of image records with a class index.
///
/// Every class in the index has at least one record; an empty manifest (no
/// records, no classes) is a valid value used for empty split sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    class_index: BTreeMap<String, Vec<usize>>,
    seed: u64,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>, seed: u64) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            r.validate()?;
            if normalize_class_name(&r.class_name) != r.class_name {
                return Err(Error::Manifest(format!(
                    "record {} has a non-normalized class name {:?}",
                    r.path, r.class_name
                )));
            }
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Manifest(format!("duplicate path {}", r.path)));
            }
            class_index.entry(r.class_name.clone()).or_default().push(i);
        }
        Ok(Self {
            records,
            class_index,
            seed,
        })
    }

    pub fn empty(seed: u64) -> Self {
        Self {
            records: Vec::new(),
            class_index: BTreeMap::new(),
            seed,
        }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.class_index
    }

    /// Class names in sorted order; a class's position is its discriminator
    /// head index.
    pub fn classes(&self) -> Vec<&str> {
        self.class_index.keys().map(String::as_str).collect()
    }

    pub fn class_position(&self, class: &str) -> Option<usize> {
        self.class_index.keys().position(|c| c == class)
    }

    pub fn records_of<'a>(&'a self, class: &str) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.class_index
            .get(class)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        self.class_index.iter().map(|(c, idx)| (c.clone(), idx.len())).collect()
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            msg,
        };
        let mut seed = 0;
        let mut records = Vec::new();
        let mut paths = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(value) = comment.trim().strip_prefix("seed=") {
                    seed = value
                        .trim()
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("bad seed {value:?}: {e}")))?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(
                    line_no,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let dim = |s: &str, what: &str| -> Result<u32> {
                s.trim()
                    .parse::<u32>()
                    .map_err(|e| parse_err(line_no, format!("bad {what} {s:?}: {e}")))
            };
            let record = ImageRecord::new(
                fields[0],
                fields[1],
                dim(fields[2], "width")?,
                dim(fields[3], "height")?,
            )
            .map_err(|e| parse_err(line_no, e.to_string()))?;
            if !paths.insert(record.path.clone()) {
                return Err(parse_err(line_no, format!("duplicate path {}", record.path)));
            }
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::Manifest(format!("{}: no records", source.display())));
        }
        Self::new(records, seed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = format!("# seed={}\n", self.seed);
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.path, r.class_name, r.width, r.height);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_manifest_string()).map_err(|e| Error::io(path, e))
    }

    fn subset(&self, keep: impl Fn(usize, &ImageRecord) -> bool) -> Self {
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, r)| keep(*i, r))
            .map(|(_, r)| r.clone())
            .collect();
        Self::new(records, self.seed).expect("subset of a valid manifest is valid")
    }

    /// Partitions records so `test_classes` appear only in the test side.
    /// An empty `test_classes` yields `(self, empty)`.
    pub fn split_by_class(&self, test_classes: &BTreeSet<String>) -> Result<(Self, Self)> {
        let test: BTreeSet<String> = test_classes.iter().map(|c| normalize_class_name(c)).collect();
        if let Some(unknown) = test.iter().find(|c| !self.class_index.contains_key(*c)) {
            return Err(Error::UnknownClass(unknown.clone()));
        }
        if !self.is_empty() && test.len() == self.class_index.len() {
            return Err(Error::Manifest(
                "every class is in the test set; the train split would be empty".into(),
            ));
        }
        if test.is_empty() {
            return Ok((self.clone(), Self::empty(self.seed)));
        }
        let train = self.subset(|_, r| !test.contains(&r.class_name));
        let test = self.subset(|_, r| test.contains(&r.class_name));
        Ok((train, test))
    }

    /// Caps every class at `per_class` records chosen by seeded uniform
    /// sampling without replacement; smaller classes are kept whole and the
    /// original record order is preserved.
    pub fn balance_classes(&self, per_class: usize) -> Result<Self> {
        if per_class == 0 {
            return Err(Error::Config("per_class must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut keep = vec![false; self.records.len()];
        for indices in self.class_index.values() {
            if indices.len() <= per_class {
                indices.iter().for_each(|&i| keep[i] = true);
            } else {
                for pick in rand::seq::index::sample(&mut rng, indices.len(), per_class) {
                    keep[indices[pick]] = true;
                }
            }
        }
        Ok(self.subset(|i, _| keep[i]))
    }

    /// Keeps only records whose class is in `keep_list`.
    pub fn filter_classes(&self, keep_list: &BTreeSet<String>) -> Result<Self> {
        let keep: BTreeSet<String> = keep_list.iter().map(|c| normalize_class_name(c)).collect();
        let out = self.subset(|_, r| keep.contains(&r.class_name));
        if out.is_empty() {
            return Err(Error::Manifest("class filter removed every record".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(counts: &[(&str, usize)], seed: u64) -> DatasetManifest {
        let records = counts
            .iter()
            .flat_map(|&(class, n)| {
                (0..n).map(move |i| ImageRecord::new(format!("{class}/{i}.png"), class, 32, 32).unwrap())
            })
            .collect();
        DatasetManifest::new(records, seed).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_four_lines_two_classes() {
        let text = "# comment\na.png\ta\t10\t12\nb.png\tb\t10\t12\nc.png\ta\t1\t1\n\nd.png\tB\t3\t4\n";
        let m = DatasetManifest::parse(text, Path::new("m.tsv")).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.classes(), vec!["a", "b"]);
        assert_eq!(m.records()[3].class_name, "b");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = DatasetManifest::parse("a.png\ta\t1\t1\nb.png\tb\t1\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = DatasetManifest::parse("a.png\ta\t1\t1\na.png\tb\t1\t1\n", Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("duplicate path"), "{err}");
        let err = DatasetManifest::parse("a.png\ta\t0\t1\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = DatasetManifest::parse("# only comments\n", Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("no records"));
        let err = DatasetManifest::parse("", Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("no records"));
    }

    #[test]
    fn seed_comment_round_trips() {
        let m = manifest(&[("a", 2), ("b", 1)], 99);
        let back = DatasetManifest::parse(&m.to_manifest_string(), Path::new("m")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_class_name("  Sunny  -   Car "), "sunny - car");
        assert_eq!(normalize_class_name("night\t-\tbus"), "night - bus");
    }

    #[test]
    fn split_small_manifest() {
        let m = manifest(&[("a", 2), ("b", 3)], 1);
        let (train, test) = m.split_by_class(&set(&["b"])).unwrap();
        assert_eq!(train.class_counts(), BTreeMap::from([("a".to_string(), 2)]));
        assert_eq!(test.class_counts(), BTreeMap::from([("b".to_string(), 3)]));
    }

    #[test]
    fn split_edge_cases() {
        let m = manifest(&[("a", 2), ("b", 3)], 1);
        let (train, test) = m.split_by_class(&BTreeSet::new()).unwrap();
        assert_eq!(train, m);
        assert!(test.is_empty() && test.classes().is_empty());
        assert!(matches!(
            m.split_by_class(&set(&["zebra"])),
            Err(Error::UnknownClass(_))
        ));
        assert!(m.split_by_class(&set(&["a", "b"])).is_err());
    }

    #[test]
    fn balance_small_manifest() {
        let m = manifest(&[("a", 5), ("b", 3)], 11);
        let balanced = m.balance_classes(3).unwrap();
        assert_eq!(
            balanced.class_counts().values().copied().collect::<Vec<_>>(),
            vec![3, 3]
        );
        assert_eq!(balanced, m.balance_classes(3).unwrap());
        assert!(m.records_of("b").eq(balanced.records_of("b")));
        assert!(m.balance_classes(0).is_err());
        let other_seed = m.clone().with_seed(12).balance_classes(3).unwrap();
        assert_eq!(other_seed.class_counts(), balanced.class_counts());
    }

    #[test]
    fn balance_already_balanced_is_identity() {
        let m = manifest(&[("a", 3), ("b", 3)], 5);
        assert_eq!(m.balance_classes(3).unwrap(), m);
        assert_eq!(m.balance_classes(10).unwrap(), m);
    }

    #[test]
    fn filter_small_manifest() {
        let m = manifest(&[("a", 2), ("b", 1)], 0);
        let f = m.filter_classes(&set(&["a"])).unwrap();
        assert_eq!(f.class_counts(), BTreeMap::from([("a".to_string(), 2)]));
        let all: BTreeSet<String> = m.classes().into_iter().map(String::from).collect();
        assert_eq!(m.filter_classes(&all).unwrap(), m);
        assert!(m.filter_classes(&set(&["c"])).is_err());
    }

    #[test]
    fn counts_after_balance() {
        let m = manifest(&[("a", 7), ("b", 2), ("c", 4)], 3);
        let counts = m.balance_classes(3).unwrap().class_counts();
        assert!(counts.values().all(|&c| (1..=3).contains(&c)));
        assert_eq!(m.class_counts().values().sum::<usize>(), m.len());
    }
}
