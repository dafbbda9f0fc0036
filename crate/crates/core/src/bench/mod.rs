//! Benchmark harness: database formats, evaluation runs and ablations.
//!
//! Each record's SVG becomes one database entry, embedded under the run's
//! [`DatabaseFormat`]; its Q+A query is embedded with the text template of
//! the same family and must retrieve it. Embeddings and rewrite outcomes are
//! cached on disk under a fingerprint of everything that affects them, so an
//! interrupted run resumes where it stopped.

mod ablation;
mod cache;
mod dataset;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, Pooling};
use crate::prompt::{
    embed, render_prompt, EmbedError, EmbeddingRecord, HiddenStateSelector, LengthVariant,
    ModalInput, Modality, PromptError, PromptTemplate, TemplateRegistry,
};
use crate::retrieval::{
    build_index, evaluate, query_topk, self_similarity_histogram, write_eval_csv,
    write_histogram_csv, write_summary_csv, EvalRun, Histogram, Query, RetrievalError,
    DEFAULT_K_VALUES,
};
use crate::rewrite::{rewrite_document, AuditRecord, RewriteOptions, RewriteStatus};
use crate::svg::{parse_svg, RasterImage};

pub use ablation::{
    default_grid, run_ablation, AblationKind, AblationReport, AblationRow, GridPoint,
};
pub use cache::Cache;
pub use dataset::{
    export, ingest, make_query, parse_record, rejects_path, write_rejects, DatasetRecord, Ingested,
    Reject, OPTION_KEYS,
};

/// Template families shipped in the built-in registry.
pub const FAMILIES: [&str; 3] = ["meol", "prompteol", "keeol"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no valid records in {0}")]
    EmptyDataset(PathBuf),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("embedding {item_id} failed: {source}; {cached} of {total} database entries are cached, rerun to resume")]
    Aborted {
        item_id: String,
        source: EmbedError,
        cached: usize,
        total: usize,
    },
    #[error("svg: {0}")]
    Svg(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatabaseFormat {
    Image,
    ImagePlusRawSvg,
    ImagePlusGeneratedSvg,
    SvgOnly,
    GeneratedSvgOnly,
}

impl DatabaseFormat {
    pub const ALL: [DatabaseFormat; 5] = [
        DatabaseFormat::Image,
        DatabaseFormat::ImagePlusRawSvg,
        DatabaseFormat::ImagePlusGeneratedSvg,
        DatabaseFormat::SvgOnly,
        DatabaseFormat::GeneratedSvgOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatabaseFormat::Image => "image",
            DatabaseFormat::ImagePlusRawSvg => "image_plus_raw_svg",
            DatabaseFormat::ImagePlusGeneratedSvg => "image_plus_generated_svg",
            DatabaseFormat::SvgOnly => "svg_only",
            DatabaseFormat::GeneratedSvgOnly => "generated_svg_only",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            DatabaseFormat::Image => Modality::Image,
            DatabaseFormat::ImagePlusRawSvg | DatabaseFormat::ImagePlusGeneratedSvg => {
                Modality::ImageSvg
            }
            DatabaseFormat::SvgOnly | DatabaseFormat::GeneratedSvgOnly => Modality::Svg,
        }
    }

    pub fn uses_rewrite(self) -> bool {
        matches!(
            self,
            DatabaseFormat::ImagePlusGeneratedSvg | DatabaseFormat::GeneratedSvgOnly
        )
    }
}

impl fmt::Display for DatabaseFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatabaseFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown database format {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub database_format: DatabaseFormat,
    /// `meol`, `prompteol` or `keeol`; picks both database and query templates.
    pub template_family: String,
    /// Explicit database template, overriding the family's.
    pub template_id: Option<String>,
    pub length_variant: Option<LengthVariant>,
    pub layer_offset: u32,
    pub pooling: Pooling,
    /// Backend address or mock name, for the report only.
    pub backend: String,
    pub k_values: Vec<usize>,
    /// Lowercase queries before embedding. Off by default.
    pub lowercase_queries: bool,
    pub visual_tolerance: f64,
    pub context_budget: usize,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rewrite = RewriteOptions::default();
        let selector = HiddenStateSelector::default();
        Self {
            database_format: DatabaseFormat::ImagePlusGeneratedSvg,
            template_family: "meol".into(),
            template_id: None,
            length_variant: Some(LengthVariant::OneWord),
            layer_offset: selector.layer_offset,
            pooling: selector.pooling,
            backend: "mock-semantic".into(),
            k_values: DEFAULT_K_VALUES.to_vec(),
            lowercase_queries: false,
            visual_tolerance: rewrite.tolerance,
            context_budget: rewrite.context_budget,
            histogram_bins: 40,
        }
    }
}

/// Fields that change embeddings; the backend address is deliberately absent.
#[derive(Serialize)]
struct FingerprintView<'a> {
    version: u32,
    model_id: &'a str,
    database_format: DatabaseFormat,
    database_template: &'a PromptTemplate,
    query_template: &'a PromptTemplate,
    layer_offset: u32,
    pooling: Pooling,
    lowercase_queries: bool,
    visual_tolerance: f64,
    context_budget: usize,
}

fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunConfig {
    pub fn selector(&self) -> HiddenStateSelector {
        HiddenStateSelector {
            layer_offset: self.layer_offset,
            pooling: self.pooling,
        }
    }

    pub fn rewrite_options(&self) -> RewriteOptions {
        RewriteOptions {
            context_budget: self.context_budget,
            tolerance: self.visual_tolerance,
            ..RewriteOptions::default()
        }
    }

    /// The family template for `modality` with the run's length variant applied.
    pub fn template_for(
        &self,
        registry: &TemplateRegistry,
        modality: Modality,
    ) -> Result<PromptTemplate, BenchError> {
        let base = registry.get(&format!(
            "{}-{}",
            self.template_family,
            modality.id_suffix()
        ))?;
        match (base.length_variant, self.length_variant) {
            (Some(_), Some(v)) => Ok(crate::prompt::make_length_variant(base, v)?),
            (None, Some(v)) if v != LengthVariant::OneWord => Err(BenchError::Config(format!(
                "template {} has a fixed ending; length variant {v} does not apply",
                base.template_id
            ))),
            _ => Ok(base.clone()),
        }
    }

    /// Database and query templates for this run, checked against the format.
    pub fn templates(
        &self,
        registry: &TemplateRegistry,
    ) -> Result<(PromptTemplate, PromptTemplate), BenchError> {
        let database = match &self.template_id {
            Some(id) => registry.get(id)?.clone(),
            None => self.template_for(registry, self.database_format.modality())?,
        };
        if database.modality != self.database_format.modality() {
            return Err(BenchError::Config(format!(
                "template {} takes {} input but format {} needs {}",
                database.template_id,
                database.modality,
                self.database_format,
                self.database_format.modality()
            )));
        }
        let query = self.template_for(registry, Modality::Text)?;
        Ok((database, query))
    }

    pub fn validate(&self, registry: &TemplateRegistry) -> Result<(), BenchError> {
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(BenchError::Config("k values must be positive".into()));
        }
        if self.histogram_bins == 0 {
            return Err(BenchError::Config("histogram_bins must be positive".into()));
        }
        self.templates(registry).map(|_| ())
    }

    pub fn fingerprint(
        &self,
        registry: &TemplateRegistry,
        model_id: &str,
    ) -> Result<String, BenchError> {
        let (database_template, query_template) = self.templates(registry)?;
        let view = FingerprintView {
            version: 1,
            model_id,
            database_format: self.database_format,
            database_template: &database_template,
            query_template: &query_template,
            layer_offset: self.layer_offset,
            pooling: self.pooling,
            lowercase_queries: self.lowercase_queries,
            visual_tolerance: self.visual_tolerance,
            context_budget: self.context_budget,
        };
        Ok(digest_hex(&serde_json::to_vec(&view)?))
    }

    fn rewrite_fingerprint(&self, model_id: &str) -> String {
        digest_hex(
            format!(
                "rewrite/1/{model_id}/{}/{}",
                self.visual_tolerance, self.context_budget
            )
            .as_bytes(),
        )
    }
}

/// Knobs that do not change results.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub registry: TemplateRegistry,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            cache_dir: None,
            parallelism: 4,
            registry: TemplateRegistry::builtin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedId {
    pub item_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub model_id: String,
    pub config: RunConfig,
    pub run: EvalRun,
    /// Top five database items per query, in query order.
    pub top5: Vec<(String, Vec<RankedId>)>,
    pub audit: Vec<AuditRecord>,
    pub histogram: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedRewrite {
    svg: String,
    audit: AuditRecord,
}

impl EvalReport {
    /// Writes `ranks.csv`, `summary.csv`, `top5.csv`, `report.json`,
    /// `audit.jsonl` (when rewriting ran) and `histogram.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir)?;
        write_eval_csv(&self.run, fs::File::create(dir.join("ranks.csv"))?)?;
        write_summary_csv(&self.run, fs::File::create(dir.join("summary.csv"))?)?;
        let mut top = csv::Writer::from_path(dir.join("top5.csv")).map_err(RetrievalError::from)?;
        top.write_record(["query_id", "rank", "item_id", "score"])
            .map_err(RetrievalError::from)?;
        for (q, hits) in &self.top5 {
            for (i, hit) in hits.iter().enumerate() {
                top.write_record([
                    q.as_str(),
                    &(i + 1).to_string(),
                    &hit.item_id,
                    &format!("{:.6}", hit.score),
                ])
                .map_err(RetrievalError::from)?;
            }
        }
        top.flush()?;
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        if !self.audit.is_empty() {
            let mut out = Vec::new();
            for a in &self.audit {
                serde_json::to_writer(&mut out, a)?;
                out.push(b'\n');
            }
            fs::write(dir.join("audit.jsonl"), out)?;
        }
        if let Some(h) = &self.histogram {
            write_histogram_csv(h, fs::File::create(dir.join("histogram.csv"))?)?;
        }
        Ok(())
    }
}

/// Rewritten SVG text for `record`, from cache when available.
fn rewritten_svg(
    record: &DatasetRecord,
    backend: &dyn Backend,
    config: &RunConfig,
    cache: Option<&Cache>,
    bucket: &str,
) -> Result<CachedRewrite, BenchError> {
    if let Some(hit) = cache.and_then(|c| c.get::<CachedRewrite>(bucket, &record.item_id)) {
        return Ok(hit);
    }
    let doc = parse_svg(&record.svg_code).map_err(|e| BenchError::Svg(e.to_string()))?;
    let outcome = rewrite_document(&doc, backend, &config.rewrite_options());
    let entry = CachedRewrite {
        svg: match outcome.status {
            RewriteStatus::Rewritten => outcome.output_text(),
            RewriteStatus::FallbackOriginal => record.svg_code.clone(),
        },
        audit: outcome.audit_record(&record.item_id),
    };
    if let Some(c) = cache {
        c.put(bucket, &record.item_id, &entry)?;
    }
    Ok(entry)
}

fn raster_or_blank(record: &DatasetRecord) -> RasterImage {
    record.raster().unwrap_or_else(|e| {
        log::warn!(
            "{}: cannot render ({e}); using a blank canvas",
            record.item_id
        );
        RasterImage::blank(
            crate::svg::DEFAULT_RASTER_SIZE,
            crate::svg::DEFAULT_RASTER_SIZE,
        )
    })
}

struct Plan<'a> {
    config: &'a RunConfig,
    backend: &'a dyn Backend,
    cache: Option<Cache>,
    fingerprint: String,
    rewrite_bucket: String,
    database: PromptTemplate,
    query: PromptTemplate,
}

impl Plan<'_> {
    fn database_entry(
        &self,
        record: &DatasetRecord,
    ) -> Result<(EmbeddingRecord, Option<AuditRecord>), BenchError> {
        let bucket = format!("emb-{}/db", self.fingerprint);
        let format = self.config.database_format;
        let rewrite = if format.uses_rewrite() {
            Some(rewritten_svg(
                record,
                self.backend,
                self.config,
                self.cache.as_ref(),
                &self.rewrite_bucket,
            )?)
        } else {
            None
        };
        let audit = rewrite.as_ref().map(|r| r.audit.clone());
        if let Some(hit) = self
            .cache
            .as_ref()
            .and_then(|c| c.get::<EmbeddingRecord>(&bucket, &record.item_id))
        {
            return Ok((hit, audit));
        }
        let svg = rewrite
            .map(|r| r.svg)
            .unwrap_or_else(|| record.svg_code.clone());
        let input = match format {
            DatabaseFormat::Image => ModalInput::Image(raster_or_blank(record)),
            DatabaseFormat::ImagePlusRawSvg | DatabaseFormat::ImagePlusGeneratedSvg => {
                ModalInput::ImageSvg(raster_or_blank(record), svg)
            }
            DatabaseFormat::SvgOnly | DatabaseFormat::GeneratedSvgOnly => ModalInput::Svg(svg),
        };
        let payload = render_prompt(&self.database, &input)?;
        let emb = embed(
            self.backend,
            &payload,
            self.config.selector(),
            &record.item_id,
        )
        .map_err(|source| self.abort(&record.item_id, source))?;
        if let Some(c) = &self.cache {
            c.put(&bucket, &record.item_id, &emb)?;
        }
        Ok((emb, audit))
    }

    fn query_entry(&self, record: &DatasetRecord) -> Result<EmbeddingRecord, BenchError> {
        let bucket = format!("emb-{}/query", self.fingerprint);
        if let Some(hit) = self
            .cache
            .as_ref()
            .and_then(|c| c.get::<EmbeddingRecord>(&bucket, &record.item_id))
        {
            return Ok(hit);
        }
        let mut text = make_query(record);
        if self.config.lowercase_queries {
            text = text.to_lowercase();
        }
        let payload = render_prompt(&self.query, &ModalInput::Text(text))?;
        let emb = embed(
            self.backend,
            &payload,
            self.config.selector(),
            &record.item_id,
        )
        .map_err(|source| self.abort(&record.item_id, source))?;
        if let Some(c) = &self.cache {
            c.put(&bucket, &record.item_id, &emb)?;
        }
        Ok(emb)
    }

    fn abort(&self, item_id: &str, source: EmbedError) -> BenchError {
        let cached = self
            .cache
            .as_ref()
            .map(|c| c.count(&format!("emb-{}/db", self.fingerprint)))
            .unwrap_or(0);
        BenchError::Aborted {
            item_id: item_id.to_string(),
            source,
            cached,
            total: 0,
        }
    }
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))
}

impl<'a> Plan<'a> {
    fn new(
        config: &'a RunConfig,
        backend: &'a dyn Backend,
        opts: &RunOptions,
    ) -> Result<Self, BenchError> {
        config.validate(&opts.registry)?;
        let model_id = backend.model_id();
        let (database, query) = config.templates(&opts.registry)?;
        Ok(Plan {
            config,
            backend,
            cache: opts.cache_dir.as_deref().map(Cache::open).transpose()?,
            fingerprint: config.fingerprint(&opts.registry, &model_id)?,
            rewrite_bucket: format!("rewrite-{}", config.rewrite_fingerprint(&model_id)),
            database,
            query,
        })
    }
}

fn with_total(total: usize) -> impl Fn(BenchError) -> BenchError {
    move |e| match e {
        BenchError::Aborted {
            item_id,
            source,
            cached,
            ..
        } => BenchError::Aborted {
            item_id,
            source,
            cached,
            total,
        },
        other => other,
    }
}

/// Database embeddings in record order, plus the rewrite audit when the
/// format rewrites SVGs.
pub fn embed_database(
    config: &RunConfig,
    records: &[DatasetRecord],
    backend: &dyn Backend,
    opts: &RunOptions,
) -> Result<(Vec<EmbeddingRecord>, Vec<AuditRecord>), BenchError> {
    let plan = Plan::new(config, backend, opts)?;
    let db: Vec<(EmbeddingRecord, Option<AuditRecord>)> = thread_pool(opts.parallelism)?
        .install(|| {
            records
                .par_iter()
                .map(|r| plan.database_entry(r))
                .collect::<Result<_, _>>()
        })
        .map_err(with_total(records.len()))?;
    let (embeddings, audit): (Vec<_>, Vec<_>) = db.into_iter().unzip();
    Ok((embeddings, audit.into_iter().flatten().collect()))
}

/// Embeds free query text with the run's query template (uncached).
pub fn embed_query(
    config: &RunConfig,
    text: &str,
    backend: &dyn Backend,
    opts: &RunOptions,
) -> Result<EmbeddingRecord, BenchError> {
    let (_, query) = config.templates(&opts.registry)?;
    let text = if config.lowercase_queries {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let payload = render_prompt(&query, &ModalInput::Text(text))?;
    embed(backend, &payload, config.selector(), "").map_err(|source| BenchError::Aborted {
        item_id: "<query>".into(),
        source,
        cached: 0,
        total: 1,
    })
}

/// Embeds the database and the queries, then evaluates retrieval.
pub fn run_eval(
    config: &RunConfig,
    records: &[DatasetRecord],
    backend: &dyn Backend,
    opts: &RunOptions,
) -> Result<EvalReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Config("no records to evaluate".into()));
    }
    let (embeddings, audit) = embed_database(config, records, backend, opts)?;
    let plan = Plan::new(config, backend, opts)?;
    let queries: Vec<EmbeddingRecord> = thread_pool(opts.parallelism)?
        .install(|| {
            records
                .par_iter()
                .map(|r| plan.query_entry(r))
                .collect::<Result<_, _>>()
        })
        .map_err(with_total(records.len()))?;

    let index = build_index(&embeddings)?;
    let queries: Vec<Query> = queries
        .into_iter()
        .map(|q| Query {
            query_id: q.item_id.clone(),
            ground_truth: q.item_id,
            vector: q.vector,
        })
        .collect();
    let run = evaluate(&index, &queries, &config.k_values)?;
    let top5 = queries
        .iter()
        .map(|q| {
            let hits = query_topk(&index, &q.vector, 5)?
                .into_iter()
                .map(|r| RankedId {
                    item_id: r.item_id,
                    score: r.score,
                })
                .collect();
            Ok((q.query_id.clone(), hits))
        })
        .collect::<Result<_, RetrievalError>>()?;
    let histogram = (index.len() >= 2)
        .then(|| self_similarity_histogram(&index, config.histogram_bins))
        .transpose()?;
    Ok(EvalReport {
        fingerprint: plan.fingerprint,
        model_id: backend.model_id(),
        config: config.clone(),
        run,
        top5,
        audit,
        histogram,
    })
}
