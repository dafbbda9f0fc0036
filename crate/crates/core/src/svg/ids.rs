use std::sync::LazyLock;

use regex::Regex;

use super::{NodePath, SvgDocument};

/// Element kinds whose ids are inventoried.
pub const INVENTORY_TAGS: &[&str] = &[
    "g", "path", "circle", "rect", "ellipse", "polygon", "polyline", "line", "text",
];

static GENERIC_ID: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(layer|path|group|g|svg|rect|circle|shape|vector|xmlid)[-_]?\d*$")
        .expect("static regex")
});

static DIGITS_OR_UNDERSCORES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[0-9_]*$").expect("static regex"));

/// Editor-generated ids such as `Layer_1`, `path123` or `_2` are not descriptive.
pub fn is_descriptive_id(id: &str) -> bool {
    !(GENERIC_ID.is_match(id) || DIGITS_OR_UNDERSCORES.is_match(id))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdReport {
    pub descriptive: Vec<(NodePath, String)>,
    pub non_descriptive: Vec<(NodePath, String)>,
    pub missing: Vec<NodePath>,
}

impl IdReport {
    pub fn total(&self) -> usize {
        self.descriptive.len() + self.non_descriptive.len() + self.missing.len()
    }
}

/// Classifies the id of every group and shape element in document order.
pub fn inventory_ids(doc: &SvgDocument) -> IdReport {
    let mut report = IdReport::default();
    for node in doc.descendants() {
        if !INVENTORY_TAGS.contains(&node.local_name()) {
            continue;
        }
        let path = node.node_path.clone();
        match node.id() {
            None => report.missing.push(path),
            Some(id) if is_descriptive_id(id) => report.descriptive.push((path, id.to_string())),
            Some(id) => report.non_descriptive.push((path, id.to_string())),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::parse_svg;

    #[test]
    fn classification_examples() {
        for id in [
            "Layer_1", "path123", "g", "G-12", "XMLID_5", "vector", "123", "_1_", "",
        ] {
            assert!(!is_descriptive_id(id), "{id}");
        }
        for id in [
            "bird1",
            "bird",
            "wing",
            "love_bird",
            "layers",
            "path_of_river",
            "circle_red",
        ] {
            assert!(is_descriptive_id(id), "{id}");
        }
    }

    #[test]
    fn inventory_lists_are_disjoint_and_complete() {
        let doc = parse_svg(
            r#"<svg id="Layer_1"><g id="Layer_2"><path id="bird1"/><circle/></g><defs><linearGradient id="lg1"/></defs><text>t</text></svg>"#,
        )
        .unwrap();
        let report = inventory_ids(&doc);
        assert_eq!(
            report.non_descriptive,
            vec![(NodePath(vec![0]), "Layer_2".to_string())]
        );
        assert_eq!(
            report.descriptive,
            vec![(NodePath(vec![0, 0]), "bird1".to_string())]
        );
        assert_eq!(
            report.missing,
            vec![NodePath(vec![0, 1]), NodePath(vec![2])]
        );
        assert_eq!(report.total(), 4);
    }
}
