//! VGQA-style records: one JSON object per line.
//!
//! The canonical line is
//! `{"item_id": .., "svg": .., "question": .., "options": {"A": .., ..}, "answer": "A"}`.
//! Lines from the upstream dump use other field names (`code`, `query`,
//! `gt`, options as a list); they are accepted and converted on ingest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::BenchError;
use crate::svg::{parse_svg, rasterize_lenient, RasterImage, DEFAULT_RASTER_SIZE};

pub const OPTION_KEYS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub item_id: String,
    #[serde(rename = "svg")]
    pub svg_code: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    pub answer: String,
}

impl DatasetRecord {
    pub fn answer_text(&self) -> &str {
        self.options
            .get(&self.answer)
            .map(String::as_str)
            .unwrap_or("")
    }

    /// Renders the record's SVG at the default canvas size.
    pub fn raster(&self) -> Result<RasterImage, BenchError> {
        let doc = parse_svg(&self.svg_code).map_err(|e| BenchError::Svg(e.to_string()))?;
        rasterize_lenient(&doc, DEFAULT_RASTER_SIZE, DEFAULT_RASTER_SIZE)
            .map_err(|e| BenchError::Svg(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.item_id.trim().is_empty() {
            return Err("empty item_id".into());
        }
        if self.options.is_empty() {
            return Err("no options".into());
        }
        if let Some(k) = self
            .options
            .keys()
            .find(|k| !OPTION_KEYS.contains(&k.as_str()))
        {
            return Err(format!("unexpected option key {k:?}"));
        }
        if !self.options.contains_key(&self.answer) {
            return Err(format!("answer {:?} is not an option key", self.answer));
        }
        parse_svg(&self.svg_code).map_err(|e| format!("svg: {e}"))?;
        Ok(())
    }
}

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub records: Vec<DatasetRecord>,
    pub rejects: Vec<Reject>,
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names
        .iter()
        .find_map(|n| obj.get(*n))
        .filter(|v| !v.is_null())
}

fn string_field(obj: &Map<String, Value>, names: &[&str], what: &str) -> Result<String, String> {
    match field(obj, names) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("{what} is not a string")),
        None => Err(format!("missing {what}")),
    }
}

fn options_field(obj: &Map<String, Value>) -> Result<BTreeMap<String, String>, String> {
    let text = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        _ => Err("option is not a string".to_string()),
    };
    match field(obj, &["options", "choices"]) {
        Some(Value::Object(m)) => m
            .iter()
            .map(|(k, v)| Ok((k.trim().to_uppercase(), text(v)?)))
            .collect(),
        Some(Value::Array(list)) => {
            if list.len() > OPTION_KEYS.len() {
                return Err(format!("{} options, at most 4 allowed", list.len()));
            }
            list.iter()
                .zip(OPTION_KEYS)
                .map(|(v, k)| Ok((k.to_string(), strip_option_prefix(&text(v)?, k))))
                .collect()
        }
        Some(_) => Err("options is neither an object nor a list".into()),
        None => Err("missing options".into()),
    }
}

/// Upstream option lists sometimes carry their letter ("A. Cat").
fn strip_option_prefix(text: &str, key: &str) -> String {
    let t = text.trim_start();
    for sep in [". ", ") ", ": "] {
        if let Some(rest) = t.strip_prefix(&format!("{key}{sep}")) {
            return rest.to_string();
        }
    }
    text.to_string()
}

fn answer_key(raw: &str) -> String {
    let t = raw.trim().trim_start_matches('(');
    let key: String = t.chars().take(1).collect::<String>().to_uppercase();
    let rest = &t[key.len().min(t.len())..];
    if rest.is_empty() || rest.starts_with(['.', ')', ':', ' ']) {
        key
    } else {
        raw.trim().to_string()
    }
}

/// Parses one line in either the canonical or the upstream layout.
pub fn parse_record(line: &str, line_no: usize) -> Result<DatasetRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(obj) = value else {
        return Err("line is not a JSON object".into());
    };
    let item_id = match field(&obj, &["item_id", "id", "qid", "uid"]) {
        Some(_) => string_field(&obj, &["item_id", "id", "qid", "uid"], "item_id")?,
        None => format!("item-{line_no:05}"),
    };
    let options = options_field(&obj)?;
    let raw_answer = string_field(&obj, &["answer", "gt", "gt_answer", "label"], "answer")?;
    let mut answer = answer_key(&raw_answer);
    if !options.contains_key(&answer) {
        // some dumps give the answer text instead of its letter
        if let Some((k, _)) = options.iter().find(|(_, v)| v.trim() == raw_answer.trim()) {
            answer = k.clone();
        }
    }
    let record = DatasetRecord {
        item_id,
        svg_code: string_field(&obj, &["svg", "svg_code", "code"], "svg")?,
        question: string_field(&obj, &["question", "query", "q"], "question")?,
        options,
        answer,
    };
    record.validate()?;
    Ok(record)
}

/// Reads a dataset file. Bad lines end up in `rejects`, never dropped silently.
pub fn ingest(path: &Path) -> Result<Ingested, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| Reject {
            line: line_no,
            reason,
            raw: line.to_string(),
        };
        match parse_record(line, line_no) {
            Ok(r) if !seen.insert(r.item_id.clone()) => {
                rejects.push(reject(format!("duplicate item_id {:?}", r.item_id)))
            }
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(reject(reason)),
        }
    }
    log::info!(
        "{}: {} records, {} rejected",
        path.display(),
        records.len(),
        rejects.len()
    );
    if records.is_empty() {
        return Err(BenchError::EmptyDataset(path.to_path_buf()));
    }
    Ok(Ingested { records, rejects })
}

/// Default rejects file next to the dataset: `<name>.rejects.jsonl`.
pub fn rejects_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".rejects.jsonl");
    dataset.with_file_name(name)
}

pub fn write_rejects(rejects: &[Reject], path: &Path) -> Result<(), BenchError> {
    let mut out = Vec::new();
    for r in rejects {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes records in the canonical layout.
pub fn export<W: Write>(records: &[DatasetRecord], mut w: W) -> Result<(), BenchError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Q+A query: trimmed question, one space, trimmed answer text.
pub fn make_query(record: &DatasetRecord) -> String {
    let q = record.question.trim();
    let a = record.answer_text().trim();
    match (q.is_empty(), a.is_empty()) {
        (true, _) => a.to_string(),
        (false, true) => q.to_string(),
        (false, false) => format!("{q} {a}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(question: &str, answer: &str) -> DatasetRecord {
        DatasetRecord {
            item_id: "x".into(),
            svg_code: "<svg/>".into(),
            question: question.into(),
            options: [("A", answer), ("B", "b"), ("C", "c"), ("D", "d")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            answer: "A".into(),
        }
    }

    #[test]
    fn query_joins_question_and_answer() {
        let r = record(
            "What does this SVG image likely represent?",
            "Global connectivity issues",
        );
        assert_eq!(
            make_query(&r),
            "What does this SVG image likely represent? Global connectivity issues"
        );
        assert_eq!(make_query(&record("  ", " Cat ")), "Cat");
        assert_eq!(make_query(&record(" Q? ", " Cat ")), "Q? Cat");
    }

    #[test]
    fn upstream_layout_is_adapted() {
        let line = r#"{"qid": 7, "code": "<svg/>", "query": "Q?", "options": ["A. Cat", "B. Dog", "C. Owl", "D. Fox"], "gt": "B"}"#;
        let r = parse_record(line, 1).unwrap();
        assert_eq!(r.item_id, "7");
        assert_eq!(r.options["A"], "Cat");
        assert_eq!(r.answer, "B");
        assert_eq!(r.answer_text(), "Dog");
        assert_eq!(answer_key("(c)"), "C");
        assert_eq!(answer_key("D. Fox"), "D");
        let by_text = line.replace(r#""gt": "B""#, r#""gt": "Owl""#);
        assert_eq!(parse_record(&by_text, 1).unwrap().answer, "C");
    }

    #[test]
    fn invalid_lines_explain_themselves() {
        let missing =
            r#"{"item_id": "a", "svg": "<svg/>", "question": "q", "options": {"A": "x"}}"#;
        assert_eq!(parse_record(missing, 1).unwrap_err(), "missing answer");
        let bad_key = r#"{"item_id": "a", "svg": "<svg/>", "question": "q", "options": {"A": "x"}, "answer": "B"}"#;
        assert!(parse_record(bad_key, 1)
            .unwrap_err()
            .contains("not an option key"));
        let bad_svg = r#"{"item_id": "a", "svg": "<html/>", "question": "q", "options": {"A": "x"}, "answer": "A"}"#;
        assert!(parse_record(bad_svg, 1).unwrap_err().starts_with("svg:"));
        assert!(parse_record("[1]", 1).is_err());
    }
}
