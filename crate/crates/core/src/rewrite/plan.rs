use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svg::{apply_transform, local_name, NodePath, SimplifyAction, SvgDocument};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("PlanParseError: {0}")]
    PlanParse(String),
    #[error("SelectorUnresolved: {0:?}")]
    SelectorUnresolved(String),
    #[error("IdCollision: {new_id:?} is already used at {holder}")]
    IdCollision { new_id: String, holder: NodePath },
}

/// How a model names an element: by existing id, or by child-index path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Id(String),
    Path(NodePath),
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::Id(id) => f.write_str(id),
            Selector::Path(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectLabel {
    pub selector: Selector,
    /// Resolved element.
    pub target: NodePath,
    /// Sanitized, unique id to assign.
    pub new_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedAction {
    pub action: SimplifyAction,
    pub selector: Selector,
    pub target: NodePath,
}

/// A validated set of edits for one document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewritePlan {
    pub object_labels: Vec<ObjectLabel>,
    pub simplify_actions: Vec<PlannedAction>,
    /// The unparsed model response.
    pub model_raw: String,
}

impl RewritePlan {
    pub fn is_empty(&self) -> bool {
        self.object_labels.is_empty() && self.simplify_actions.is_empty()
    }
}

/// Wire shape of a plan, as requested from the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanJson {
    #[serde(default)]
    pub objects: Vec<ObjectJson>,
    #[serde(default)]
    pub simplify: Vec<ActionJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectJson {
    pub selector: String,
    pub new_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionJson {
    pub action: String,
    pub selector: String,
}

/// Normalizes a model-proposed id into a safe XML name: lowercase, runs of
/// whitespace become `_`, characters outside `[a-z0-9_.-]` are dropped, and a
/// name that would not start with a letter or `_` gets an `obj_` prefix.
/// Returns `None` if nothing usable is left.
pub fn sanitize_id(raw: &str) -> Option<String> {
    let mut out = String::new();
    let mut pending_sep = false;
    for ch in raw.trim().chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() || ch == '_' {
            pending_sep = !out.is_empty();
            continue;
        }
        if ch.is_ascii_alphanumeric() || ch == '-' || ch == '.' {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.push(ch);
        }
    }
    let first = out.chars().next()?;
    if !(first.is_ascii_alphabetic() || first == '_') {
        out.insert_str(0, "obj_");
    }
    Some(out)
}

/// Pulls the JSON object out of a response that may wrap it in prose or
/// code fences.
fn extract_json(response: &str) -> Result<serde_json::Value, PlanError> {
    let start = response
        .find('{')
        .ok_or_else(|| PlanError::PlanParse("no JSON object in response".into()))?;
    let end = response
        .rfind('}')
        .filter(|&e| e > start)
        .ok_or_else(|| PlanError::PlanParse("unterminated JSON object".into()))?;
    serde_json::from_str(&response[start..=end]).map_err(|e| PlanError::PlanParse(e.to_string()))
}

fn resolve(doc: &SvgDocument, raw: &str) -> Result<(Selector, NodePath), PlanError> {
    let raw = raw.trim();
    if let Some(node) = doc.find_by_id(raw) {
        return Ok((Selector::Id(raw.to_string()), node.node_path.clone()));
    }
    if let Ok(path) = raw.parse::<NodePath>() {
        if doc.node(&path).is_some() {
            return Ok((Selector::Path(path.clone()), path));
        }
    }
    Err(PlanError::SelectorUnresolved(raw.to_string()))
}

/// Parses and validates a model response against `doc`.
///
/// Every selector must resolve and every action must apply to the original
/// document; anything else rejects the whole plan. Duplicate `new_id`s within
/// the plan are disambiguated with `_2`, `_3`, ...; a `new_id` already held by
/// an element the plan does not relabel is an [`PlanError::IdCollision`].
pub fn parse_rewrite_plan(response: &str, doc: &SvgDocument) -> Result<RewritePlan, PlanError> {
    let value = extract_json(response)?;
    let obj = value
        .as_object()
        .ok_or_else(|| PlanError::PlanParse("plan is not an object".into()))?;
    if !obj.contains_key("objects") && !obj.contains_key("simplify") {
        return Err(PlanError::PlanParse(
            "plan has neither \"objects\" nor \"simplify\"".into(),
        ));
    }
    let plan: PlanJson =
        serde_json::from_value(value).map_err(|e| PlanError::PlanParse(e.to_string()))?;

    let mut labeled: HashSet<NodePath> = HashSet::new();
    let mut raw_labels = Vec::new();
    for entry in &plan.objects {
        let (selector, target) = resolve(doc, &entry.selector)?;
        if !labeled.insert(target.clone()) {
            return Err(PlanError::PlanParse(format!(
                "element {target} is labeled more than once"
            )));
        }
        let new_id = sanitize_id(&entry.new_id).ok_or_else(|| {
            PlanError::PlanParse(format!(
                "new_id {:?} has no usable characters",
                entry.new_id
            ))
        })?;
        raw_labels.push((selector, target, new_id));
    }

    // ids held by elements that keep their id
    let kept: HashMap<&str, &NodePath> = doc
        .descendants()
        .into_iter()
        .filter(|n| !labeled.contains(&n.node_path))
        .filter_map(|n| n.id().map(|id| (id, &n.node_path)))
        .collect();

    let mut taken: HashSet<String> = HashSet::new();
    let mut object_labels = Vec::new();
    for (selector, target, base) in raw_labels {
        if let Some(holder) = kept.get(base.as_str()) {
            return Err(PlanError::IdCollision {
                new_id: base,
                holder: (*holder).clone(),
            });
        }
        let mut new_id = base.clone();
        let mut n = 2;
        while taken.contains(&new_id) || kept.contains_key(new_id.as_str()) {
            new_id = format!("{base}_{n}");
            n += 1;
        }
        taken.insert(new_id.clone());
        object_labels.push(ObjectLabel {
            selector,
            target,
            new_id,
        });
    }

    let mut simplify_actions: Vec<PlannedAction> = Vec::new();
    for entry in &plan.simplify {
        let action: SimplifyAction = entry.action.parse().map_err(PlanError::PlanParse)?;
        let (selector, target) = resolve(doc, &entry.selector)?;
        if simplify_actions
            .iter()
            .any(|a| a.action == action && a.target == target)
        {
            return Err(PlanError::PlanParse(format!(
                "{action} on {target} listed twice"
            )));
        }
        let mut probe = doc.clone();
        apply_transform(&mut probe, action, &target).map_err(|reason| {
            PlanError::PlanParse(format!("{action} does not apply to {target}: {reason}"))
        })?;
        match action {
            SimplifyAction::FlattenGroup if labeled.contains(&target) => {
                return Err(PlanError::PlanParse(format!(
                    "{target} is both labeled and flattened"
                )));
            }
            SimplifyAction::RemoveUnused if labeled.iter().any(|l| l.starts_with(&target)) => {
                return Err(PlanError::PlanParse(format!(
                    "{target} is removed but contains a labeled element"
                )));
            }
            _ => {}
        }
        simplify_actions.push(PlannedAction {
            action,
            selector,
            target,
        });
    }

    Ok(RewritePlan {
        object_labels,
        simplify_actions,
        model_raw: response.to_string(),
    })
}

static URL_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"url\(\s*(['"]?)#([^'")\s]+)"#).expect("static regex"));

fn rewrite_refs(value: &str, renames: &HashMap<String, String>) -> String {
    URL_REF
        .replace_all(value, |c: &Captures<'_>| match renames.get(&c[2]) {
            Some(new) => format!("url({}#{new}", &c[1]),
            None => c[0].to_string(),
        })
        .into_owned()
}

/// Applies a validated plan to a copy of `doc`.
///
/// Relabeled ids are followed through `url(#..)` and local `href`
/// references. Stylesheet id selectors are left alone. Actions run
/// deepest-path-first so earlier paths stay valid.
pub fn apply_rewrite_plan(doc: &SvgDocument, plan: &RewritePlan) -> SvgDocument {
    let mut out = doc.clone();
    let mut renames = HashMap::new();
    for label in &plan.object_labels {
        let node = out.node_mut(&label.target).expect("validated selector");
        if let Some(old) = node.attributes.get("id") {
            if old != label.new_id {
                renames.insert(old.to_string(), label.new_id.clone());
            }
        }
        node.attributes.set("id", label.new_id.clone());
    }

    if !renames.is_empty() {
        let mut stack = vec![&mut out.root];
        while let Some(node) = stack.pop() {
            for (key, value) in node.attributes.iter_mut() {
                if local_name(key) == "href" {
                    if let Some(new) = value.strip_prefix('#').and_then(|id| renames.get(id)) {
                        *value = format!("#{new}");
                        continue;
                    }
                }
                if value.contains("url(") {
                    *value = rewrite_refs(value, &renames);
                }
            }
            let is_style = node.local_name() == "style";
            for child in node.children.iter_mut() {
                match child {
                    crate::svg::Node::Element(e) => stack.push(e),
                    crate::svg::Node::Text(t) if is_style => *t = rewrite_refs(t, &renames),
                    crate::svg::Node::Text(_) => {}
                }
            }
        }
    }

    let mut actions: Vec<&PlannedAction> = plan.simplify_actions.iter().collect();
    actions.sort_by(|a, b| b.target.cmp(&a.target));
    for planned in actions {
        if let Err(reason) = apply_transform(&mut out, planned.action, &planned.target) {
            log::debug!(
                "skipping {} at {}: {reason}",
                planned.action,
                planned.target
            );
        }
    }
    out.refresh();
    out
}
