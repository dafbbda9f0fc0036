//! Render-neutral structural simplification.
//!
//! Four rewrite rules, each of which leaves the rendered image unchanged:
//!
//! - **T1** flatten a `<g>` that carries no attributes into its parent;
//! - **T2** remove empty groups, unreferenced `<defs>` content and empty `<defs>`;
//! - **T3** drop `transform` attributes that compose to the identity;
//! - **T4** move the `transform` of a single-child group onto that child when
//!   the child has none.
//!
//! [`simplify_rules`] applies them to a fixpoint; [`simplify`] additionally
//! renders before and after and refuses any result that drifts past
//! [`VISUAL_TOLERANCE`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::raster::{rasterize_default, visual_distance, VISUAL_TOLERANCE};
use super::transform::{is_identity_transform, parse_transform};
use super::{local_name, ElementNode, Node, NodePath, SvgDocument, SvgError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimplifyAction {
    /// T1
    FlattenGroup,
    /// T2
    RemoveUnused,
    /// T3
    DropIdentityTransform,
    /// T4
    MergeTransform,
}

impl SimplifyAction {
    pub const ALL: [SimplifyAction; 4] = [
        SimplifyAction::FlattenGroup,
        SimplifyAction::RemoveUnused,
        SimplifyAction::DropIdentityTransform,
        SimplifyAction::MergeTransform,
    ];

    pub fn code(self) -> &'static str {
        match self {
            SimplifyAction::FlattenGroup => "T1",
            SimplifyAction::RemoveUnused => "T2",
            SimplifyAction::DropIdentityTransform => "T3",
            SimplifyAction::MergeTransform => "T4",
        }
    }

    fn name(self) -> &'static str {
        match self {
            SimplifyAction::FlattenGroup => "flatten_group",
            SimplifyAction::RemoveUnused => "remove_unused",
            SimplifyAction::DropIdentityTransform => "drop_identity_transform",
            SimplifyAction::MergeTransform => "merge_transform",
        }
    }
}

impl fmt::Display for SimplifyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SimplifyAction {
    type Err = String;

    /// Accepts the rule code (`T1`) or its name (`flatten_group`), case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.code().to_ascii_lowercase() == wanted || a.name() == wanted)
            .ok_or_else(|| format!("unknown simplify action {s:?}"))
    }
}

/// Children of these may be re-transformed.
const TRANSFORMABLE: &[&str] = &[
    "g", "path", "rect", "circle", "ellipse", "line", "polyline", "polygon", "text", "use",
    "image", "a", "switch",
];

static URL_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"url\(\s*['"]?#([^'")\s]+)"#).expect("static regex"));

/// Matches stylesheets whose selectors depend on `g` elements or sibling position.
static STRUCTURAL_CSS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(^|[\s,>+~}(])g([\s.#:\[>+~,{)]|$)|:(first|last|nth|only)-").expect("static regex")
});

/// Every id referenced through `url(#..)` or a local `href`.
pub fn collect_references(doc: &SvgDocument) -> HashSet<String> {
    let mut refs = HashSet::new();
    for node in doc.descendants() {
        for (key, value) in node.attributes.iter() {
            if local_name(key) == "href" {
                if let Some(id) = value.trim().strip_prefix('#') {
                    refs.insert(id.to_string());
                }
            }
            for cap in URL_REF.captures_iter(value) {
                refs.insert(cap[1].to_string());
            }
        }
        if node.local_name() == "style" {
            for cap in URL_REF.captures_iter(&node.text()) {
                refs.insert(cap[1].to_string());
            }
        }
    }
    refs
}

fn structural_css(doc: &SvgDocument) -> bool {
    doc.descendants()
        .iter()
        .filter(|n| n.local_name() == "style")
        .any(|n| STRUCTURAL_CSS.is_match(&n.text()))
}

fn is_empty_group(node: &ElementNode) -> bool {
    node.local_name() == "g"
        && node
            .children
            .iter()
            .all(|c| matches!(c, Node::Text(t) if t.trim().is_empty()))
}

fn subtree_referenced(node: &ElementNode, refs: &HashSet<String>) -> bool {
    node.descendants()
        .iter()
        .any(|n| n.id().is_some_and(|id| refs.contains(id)))
}

/// What a rule needs to know about where a node sits.
#[derive(Clone, Copy)]
struct Context<'a> {
    parent_tag: Option<&'a str>,
    inside_clip: bool,
    structural_css: bool,
    refs: &'a HashSet<String>,
}

fn check(node: &ElementNode, ctx: Context<'_>, action: SimplifyAction) -> Result<(), String> {
    let tag = node.local_name();
    let Some(parent_tag) = ctx.parent_tag else {
        if action == SimplifyAction::DropIdentityTransform {
            return if node
                .attributes
                .get("transform")
                .is_some_and(is_identity_transform)
            {
                Ok(())
            } else {
                Err("no identity transform".into())
            };
        }
        return Err("the root element cannot be simplified".into());
    };
    match action {
        SimplifyAction::FlattenGroup => {
            if tag != "g" {
                return Err(format!("<{tag}> is not a group"));
            }
            if !node.attributes.is_empty() {
                return Err("group carries attributes".into());
            }
            if parent_tag == "switch" || ctx.inside_clip {
                return Err("group position is render-significant".into());
            }
            if ctx.structural_css {
                return Err("stylesheet depends on document structure".into());
            }
            Ok(())
        }
        SimplifyAction::RemoveUnused => {
            if ctx.structural_css {
                return Err("stylesheet depends on document structure".into());
            }
            if is_empty_group(node) {
                return Ok(());
            }
            if tag == "defs" && node.element_count() == 0 {
                return Ok(());
            }
            if parent_tag == "defs" && tag != "style" && !subtree_referenced(node, ctx.refs) {
                return Ok(());
            }
            Err(format!(
                "<{tag}> is neither empty nor unreferenced definition content"
            ))
        }
        SimplifyAction::DropIdentityTransform => {
            if node
                .attributes
                .get("transform")
                .is_some_and(is_identity_transform)
            {
                Ok(())
            } else {
                Err("no identity transform".into())
            }
        }
        SimplifyAction::MergeTransform => {
            if tag != "g" {
                return Err(format!("<{tag}> is not a group"));
            }
            let Some(transform) = node.attributes.get("transform") else {
                return Err("group has no transform".into());
            };
            if parse_transform(transform).is_none() {
                return Err("group transform does not parse".into());
            }
            if node
                .attributes
                .keys()
                .any(|k| k != "transform" && k != "id")
            {
                return Err("group carries presentation attributes".into());
            }
            if node.has_text() || node.element_count() != 1 {
                return Err("group does not have exactly one child".into());
            }
            let child = node.elements().next().expect("one child");
            if !TRANSFORMABLE.contains(&child.local_name()) {
                return Err(format!("<{}> cannot take a transform", child.tag));
            }
            if child.attributes.contains("transform")
                || child
                    .attributes
                    .get("style")
                    .is_some_and(|s| s.contains("transform"))
            {
                return Err("child already has a transform".into());
            }
            Ok(())
        }
    }
}

/// Applies `action` to `node` in place (for T1/T2 the caller edits the parent).
fn apply_local(node: &mut ElementNode, action: SimplifyAction) {
    match action {
        SimplifyAction::DropIdentityTransform => {
            node.attributes.remove("transform");
        }
        SimplifyAction::MergeTransform => {
            let transform = node.attributes.remove("transform").expect("checked");
            let child = node.elements_mut().next().expect("checked");
            child.attributes.set("transform", transform);
        }
        SimplifyAction::FlattenGroup | SimplifyAction::RemoveUnused => {}
    }
}

/// One bottom-up pass of every rule; returns the number of edits.
fn pass(node: &mut ElementNode, ctx: Context<'_>) -> usize {
    let mut edits = 0;
    let tag = node.local_name().to_string();
    let child_ctx = Context {
        parent_tag: Some(&tag),
        inside_clip: ctx.inside_clip || tag == "clipPath",
        ..ctx
    };

    for child in node.elements_mut() {
        edits += pass(child, child_ctx);
    }

    for action in [
        SimplifyAction::DropIdentityTransform,
        SimplifyAction::MergeTransform,
    ] {
        if check(node, ctx, action).is_ok() {
            apply_local(node, action);
            edits += 1;
        }
    }

    let old = std::mem::take(&mut node.children);
    for child in old {
        match child {
            Node::Element(el) if check(&el, child_ctx, SimplifyAction::RemoveUnused).is_ok() => {
                edits += 1;
            }
            Node::Element(el) if check(&el, child_ctx, SimplifyAction::FlattenGroup).is_ok() => {
                edits += 1;
                node.children.extend(el.children);
            }
            other => node.children.push(other),
        }
    }
    edits
}

/// Applies T1-T4 until nothing changes. No render check.
pub fn simplify_rules(doc: &SvgDocument) -> SvgDocument {
    let mut out = doc.clone();
    loop {
        let refs = collect_references(&out);
        let ctx = Context {
            parent_tag: None,
            inside_clip: false,
            structural_css: structural_css(&out),
            refs: &refs,
        };
        let edits = pass(&mut out.root, ctx);
        out.refresh();
        if edits == 0 {
            break;
        }
    }
    out
}

/// [`simplify_rules`] guarded by a render comparison at 256x256.
///
/// If the simplified document renders more than [`VISUAL_TOLERANCE`] away
/// from the original, the original is returned unchanged.
pub fn simplify(doc: &SvgDocument) -> Result<SvgDocument, SvgError> {
    let before = rasterize_default(doc)?;
    let candidate = simplify_rules(doc);
    if candidate == *doc {
        return Ok(candidate);
    }
    let after = rasterize_default(&candidate)?;
    let rmse = visual_distance(&before, &after)?;
    if rmse > VISUAL_TOLERANCE {
        log::warn!("simplification changed rendering (rmse {rmse:.3}); keeping original");
        return Ok(doc.clone());
    }
    Ok(candidate)
}

/// Applies a single rule at `path`, failing with a reason when it does not apply.
pub fn apply_transform(
    doc: &mut SvgDocument,
    action: SimplifyAction,
    path: &NodePath,
) -> Result<(), String> {
    let refs = collect_references(doc);
    let css = structural_css(doc);
    let node = doc
        .node(path)
        .ok_or_else(|| format!("no element at {path}"))?;
    let parent = path
        .parent()
        .map(|p| doc.node(&p).expect("parent of existing node"));
    let inside_clip = {
        let mut p = path.parent();
        let mut found = false;
        while let Some(pp) = p {
            if doc.node(&pp).is_some_and(|n| n.local_name() == "clipPath") {
                found = true;
            }
            p = pp.parent();
        }
        found
    };
    let ctx = Context {
        parent_tag: parent.map(|p| p.local_name()),
        inside_clip,
        structural_css: css,
        refs: &refs,
    };
    check(node, ctx, action)?;

    match action {
        SimplifyAction::DropIdentityTransform | SimplifyAction::MergeTransform => {
            apply_local(doc.node_mut(path).expect("exists"), action);
        }
        SimplifyAction::FlattenGroup | SimplifyAction::RemoveUnused => {
            let parent_path = path.parent().expect("not root");
            let index = *path.0.last().expect("not root");
            let parent = doc.node_mut(&parent_path).expect("exists");
            let slot = parent
                .children
                .iter()
                .enumerate()
                .filter(|(_, c)| matches!(c, Node::Element(_)))
                .nth(index)
                .map(|(i, _)| i)
                .expect("exists");
            let Node::Element(removed) = parent.children.remove(slot) else {
                unreachable!()
            };
            if action == SimplifyAction::FlattenGroup {
                parent.children.splice(slot..slot, removed.children);
            }
        }
    }
    doc.refresh();
    Ok(())
}
