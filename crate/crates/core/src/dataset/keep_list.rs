use std::collections::BTreeSet;
use std::path::Path;

use super::normalize_class_name;
use crate::error::{Error, Result};

const OBJECT_CLASSES: &str = include_str!("../../data/object_classes.txt");

fn parse(text: &str) -> BTreeSet<String> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(normalize_class_name)
        .collect()
}

/// The 97 curated "<domain> - <object>" classes retained after removing
/// detector noise from the street-scene expansion.
pub fn object_keep_list() -> BTreeSet<String> {
    parse(OBJECT_CLASSES)
}

/// Reads a keep-list file: one class name per line, `#` comments ignored.
pub fn load_keep_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_list_has_97_classes_across_four_domains() {
        let list = object_keep_list();
        assert_eq!(list.len(), 97);
        let per_domain = |d: &str| list.iter().filter(|c| c.starts_with(&format!("{d} - "))).count();
        assert_eq!(
            [
                per_domain("rainy"),
                per_domain("night"),
                per_domain("cloudy"),
                per_domain("sunny")
            ],
            [23, 24, 25, 25]
        );
        assert!(list.contains("sunny - car"));
    }
}
