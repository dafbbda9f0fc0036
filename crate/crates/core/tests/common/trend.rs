//! Brute-force recomputation of the trend fixture's Recall@10.

use meol_core::backend::MockSemanticBackend;
use meol_core::bench::{ingest, make_query, DatabaseFormat, DatasetRecord, RunConfig};
use meol_core::prompt::{embed, render_prompt, ModalInput, TemplateRegistry};
use meol_core::rewrite::{rewrite_document, RewriteStatus};
use meol_core::svg::parse_svg;

/// Frozen Recall@10 values for the 50-record fixture on mock-semantic.
pub const FROZEN_RECALL_AT_10: [(DatabaseFormat, f64); 3] = [
    (DatabaseFormat::Image, 0.20),
    (DatabaseFormat::ImagePlusRawSvg, 0.30),
    (DatabaseFormat::ImagePlusGeneratedSvg, 0.70),
];

pub fn records() -> Vec<DatasetRecord> {
    let ingested = ingest(&super::fixture("trend50.jsonl")).unwrap();
    assert!(ingested.rejects.is_empty());
    assert_eq!(ingested.records.len(), 50);
    ingested.records
}

/// Embeds database and queries step by step and ranks with nested loops.
pub fn oracle_recall_at_10(records: &[DatasetRecord], format: DatabaseFormat) -> f64 {
    let backend = MockSemanticBackend::new();
    let config = RunConfig {
        database_format: format,
        ..RunConfig::default()
    };
    let (db_template, query_template) = config.templates(&TemplateRegistry::builtin()).unwrap();
    let selector = config.selector();

    let db: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut svg = r.svg_code.clone();
            if format.uses_rewrite() {
                let out = rewrite_document(
                    &parse_svg(&svg).unwrap(),
                    &backend,
                    &config.rewrite_options(),
                );
                if out.status == RewriteStatus::Rewritten {
                    svg = out.output_text();
                }
            }
            let image = r.raster().unwrap();
            let input = match format {
                DatabaseFormat::Image => ModalInput::Image(image),
                _ => ModalInput::ImageSvg(image, svg),
            };
            let payload = render_prompt(&db_template, &input).unwrap();
            embed(&backend, &payload, selector, &r.item_id)
                .unwrap()
                .vector
        })
        .collect();

    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
            * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let mut hits = 0;
    for (i, r) in records.iter().enumerate() {
        let payload = render_prompt(&query_template, &ModalInput::Text(make_query(r))).unwrap();
        let q = embed(&backend, &payload, selector, &r.item_id)
            .unwrap()
            .vector;
        let own = cosine(&q, &db[i]);
        let mut rank = 1;
        for (j, other) in records.iter().enumerate() {
            let s = cosine(&q, &db[j]);
            if j != i && (s > own || (s == own && other.item_id < r.item_id)) {
                rank += 1;
            }
        }
        if rank <= 10 {
            hits += 1;
        }
    }
    hits as f64 / records.len() as f64
}
