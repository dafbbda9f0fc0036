//! Rule-based rewrite plans for the mock backends.
//!
//! Labels come from whatever naming hints the file already carries
//! (`data-name`, `inkscape:label`, `aria-label`, a `<title>` child, text
//! content, the first class), falling back to colour + shape. Bare groups are
//! flattened and empty or unused content removed instead of labeled.

use std::collections::HashSet;

use crate::rewrite::{sanitize_id, ActionJson, ObjectJson, PlanJson};
use crate::svg::{
    apply_transform, inventory_ids, is_descriptive_id, parse_svg, ElementNode, NodePath,
    SimplifyAction, SvgDocument, INVENTORY_TAGS,
};

const PALETTE: &[(&str, [u8; 3])] = &[
    ("black", [0, 0, 0]),
    ("white", [255, 255, 255]),
    ("gray", [128, 128, 128]),
    ("gray", [72, 72, 72]),
    ("red", [220, 30, 30]),
    ("orange", [255, 140, 0]),
    ("yellow", [250, 220, 30]),
    ("green", [40, 170, 60]),
    ("cyan", [0, 200, 220]),
    ("blue", [30, 80, 220]),
    ("purple", [130, 50, 180]),
    ("pink", [250, 130, 180]),
    ("brown", [130, 80, 30]),
];

fn parse_hex(value: &str) -> Option<[u8; 3]> {
    let hex = value.trim().strip_prefix('#')?;
    let digits: Vec<u8> = hex
        .chars()
        .map(|c| c.to_digit(16).map(|d| d as u8))
        .collect::<Option<_>>()?;
    match digits.as_slice() {
        [r, g, b] => Some([r * 17, g * 17, b * 17]),
        [r1, r2, g1, g2, b1, b2] => Some([r1 * 16 + r2, g1 * 16 + g2, b1 * 16 + b2]),
        _ => None,
    }
}

fn colour_name(node: &ElementNode) -> Option<&'static str> {
    let style_fill = node.attributes.get("style").and_then(|s| {
        s.split(';')
            .filter_map(|decl| decl.split_once(':'))
            .find(|(k, _)| k.trim() == "fill")
            .map(|(_, v)| v.trim())
    });
    let fill = style_fill.or_else(|| node.attributes.get("fill"))?;
    if fill == "none" {
        return Some("outline");
    }
    if let Some((name, _)) = PALETTE.iter().find(|(name, _)| *name == fill) {
        return Some(name);
    }
    let rgb = parse_hex(fill)?;
    PALETTE
        .iter()
        .min_by_key(|(_, p)| {
            p.iter()
                .zip(rgb)
                .map(|(&a, b)| (a as i32 - b as i32).pow(2))
                .sum::<i32>()
        })
        .map(|(name, _)| *name)
}

fn noun(tag: &str) -> &'static str {
    match tag {
        "g" => "group",
        "circle" => "circle",
        "ellipse" => "oval",
        "rect" => "box",
        "line" => "stroke",
        "polyline" => "zigzag",
        "polygon" => "polygon",
        "text" => "label",
        _ => "shape",
    }
}

fn hint(node: &ElementNode) -> Option<String> {
    let title = node
        .elements()
        .find(|c| c.local_name() == "title")
        .map(|t| t.text());
    let text = (node.local_name() == "text").then(|| node.text());
    // exporter-generated class names (st0, cls-1) say nothing
    let class = node
        .attributes
        .get("class")
        .and_then(|c| c.split_whitespace().next())
        .filter(|c| {
            !c.trim_end_matches(|ch: char| ch.is_ascii_digit())
                .is_empty()
        })
        .filter(|c| {
            let stem = c.trim_end_matches(|ch: char| ch.is_ascii_digit() || ch == '-' || ch == '_');
            !matches!(stem, "st" | "cls" | "fil" | "str" | "s")
        })
        .map(str::to_string);
    [
        node.attributes.get("data-name").map(str::to_string),
        node.attributes.get("inkscape:label").map(str::to_string),
        node.attributes.get("aria-label").map(str::to_string),
        title,
        text,
        class,
    ]
    .into_iter()
    .flatten()
    .filter_map(|raw| sanitize_id(&raw))
    .find(|id| is_descriptive_id(id))
}

fn label_for(node: &ElementNode) -> String {
    hint(node).unwrap_or_else(|| {
        let colour = colour_name(node).unwrap_or(if node.local_name() == "g" {
            "grouped"
        } else {
            "black"
        });
        format!("{colour}_{}", noun(node.local_name()))
    })
}

fn applies(doc: &SvgDocument, action: SimplifyAction, path: &NodePath) -> bool {
    let mut probe = doc.clone();
    apply_transform(&mut probe, action, path).is_ok()
}

fn plan_for(doc: &SvgDocument) -> PlanJson {
    let mut plan = PlanJson::default();
    let mut used: HashSet<String> = doc.ids().into_iter().map(str::to_string).collect();
    let report = inventory_ids(doc);
    let needs_label: HashSet<&NodePath> = report
        .non_descriptive
        .iter()
        .map(|(p, _)| p)
        .chain(report.missing.iter())
        .collect();

    let mut removed: Vec<NodePath> = Vec::new();
    for node in doc.descendants() {
        let path = &node.node_path;
        if path.is_root() || removed.iter().any(|r| path.starts_with(r)) {
            continue;
        }
        let selector = path.to_string();
        if applies(doc, SimplifyAction::RemoveUnused, path) {
            plan.simplify.push(ActionJson {
                action: "T2".into(),
                selector,
            });
            removed.push(path.clone());
            continue;
        }
        if applies(doc, SimplifyAction::FlattenGroup, path) {
            plan.simplify.push(ActionJson {
                action: "T1".into(),
                selector,
            });
            continue;
        }
        for action in [
            SimplifyAction::DropIdentityTransform,
            SimplifyAction::MergeTransform,
        ] {
            if applies(doc, action, path) {
                plan.simplify.push(ActionJson {
                    action: action.code().into(),
                    selector: selector.clone(),
                });
            }
        }
        if INVENTORY_TAGS.contains(&node.local_name()) && needs_label.contains(path) {
            let base = label_for(node);
            let mut new_id = base.clone();
            let mut n = 2;
            while used.contains(&new_id) {
                new_id = format!("{base}_{n}");
                n += 1;
            }
            used.insert(new_id.clone());
            plan.objects.push(ObjectJson { selector, new_id });
        }
    }
    plan
}

/// Produces a plan response for `svg_code`; unparseable input yields an empty plan.
pub fn heuristic_plan(svg_code: &str) -> String {
    let plan = parse_svg(svg_code)
        .map(|doc| plan_for(&doc))
        .unwrap_or_default();
    serde_json::to_string(&plan).expect("plan serializes")
}
