use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use meol_core::backend::{self, server, Backend, EmbedRequest, Pooling, ADDR_ENV};
use meol_core::bench::{
    default_grid, embed_database, embed_query, ingest, rejects_path, run_ablation, run_eval,
    write_rejects, BenchError, DatasetRecord, RunConfig, RunOptions,
};
use meol_core::prompt::{embed, render_prompt, EmbedError, ModalInput, Modality, TemplateRegistry};
use meol_core::retrieval::{build_index, query_topk, RetrievalError, RetrievalIndex};
use meol_core::rewrite::{rewrite_document, RewriteOptions};
use meol_core::svg::{parse_svg, RasterImage};
use serde_json::json;

use crate::{Cli, CliError, Command, GlobalArgs, RunArgs};

type Result<T> = std::result::Result<T, CliError>;

fn user(msg: impl std::fmt::Display) -> CliError {
    CliError::User(msg.to_string())
}

fn internal(msg: impl std::fmt::Display) -> CliError {
    CliError::Internal(msg.to_string())
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::FileUnreadable { .. }
            | BenchError::EmptyDataset(_)
            | BenchError::Config(_)
            | BenchError::Prompt(_) => user(e),
            _ => internal(e),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        internal(e)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(internal(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn emitln(line: impl std::fmt::Display) -> Result<()> {
    emit(&format!("{line}\n"))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    emitln(value)
}

/// Config file values, then flag overrides. Also reports whether the file named a backend.
fn run_config(global: &GlobalArgs, run: &RunArgs) -> Result<(RunConfig, bool)> {
    let (mut config, backend_in_file) = match &global.config {
        Some(path) => {
            let text = read_text(path)?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
            let config: RunConfig =
                toml::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
            (config, table.contains_key("backend"))
        }
        None => (RunConfig::default(), false),
    };
    if let Some(f) = run.format {
        config.database_format = f;
    }
    if let Some(f) = &run.family {
        config.template_family = f.clone();
        config.template_id = None;
    }
    if let Some(t) = &run.template {
        config.template_id = Some(t.clone());
    }
    if let Some(v) = run.length {
        config.length_variant = Some(v);
    }
    if let Some(l) = run.layer_offset {
        config.layer_offset = l;
    }
    if let Some(p) = run.pooling {
        config.pooling = p;
    }
    if run.lowercase_queries {
        config.lowercase_queries = true;
    }
    Ok((config, backend_in_file))
}

fn backend_spec(global: &GlobalArgs, config_backend: Option<&str>) -> String {
    if let Some(b) = &global.backend {
        return b.clone();
    }
    if let Some(b) = config_backend {
        return b.to_string();
    }
    match std::env::var(ADDR_ENV) {
        Ok(addr) if !addr.trim().is_empty() => addr.trim().to_string(),
        _ => {
            eprintln!("note: no backend given (--backend or {ADDR_ENV}); using mock-semantic");
            "mock-semantic".into()
        }
    }
}

fn open_backend(global: &GlobalArgs, spec: &str) -> Result<Arc<dyn Backend>> {
    backend::open(spec, global.seed, global.parallelism as usize).map_err(user)
}

fn options(global: &GlobalArgs, run: &RunArgs, cache_dir: Option<&Path>) -> Result<RunOptions> {
    let registry = match &run.templates {
        Some(path) => TemplateRegistry::load(path).map_err(user)?,
        None => TemplateRegistry::builtin(),
    };
    Ok(RunOptions {
        cache_dir: cache_dir.map(Path::to_path_buf),
        parallelism: global.parallelism as usize,
        registry,
    })
}

/// Run config with the backend resolved and opened.
fn prepare(global: &GlobalArgs, run: &RunArgs) -> Result<(RunConfig, Arc<dyn Backend>)> {
    let (mut config, backend_in_file) = run_config(global, run)?;
    let from_file = backend_in_file.then(|| config.backend.clone());
    config.backend = backend_spec(global, from_file.as_deref());
    let backend = open_backend(global, &config.backend)?;
    Ok((config, backend))
}

fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let ingested = ingest(path)?;
    if !ingested.rejects.is_empty() {
        let out = rejects_path(path);
        write_rejects(&ingested.rejects, &out)?;
        eprintln!(
            "note: {} malformed line(s) written to {}",
            ingested.rejects.len(),
            out.display()
        );
    }
    log::info!("{} records from {}", ingested.records.len(), path.display());
    Ok(ingested.records)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Rewrite {
            input,
            output,
            audit,
            tolerance,
            budget,
        } => {
            let (config, backend_in_file) = run_config(g, &RunArgs::default())?;
            let from_file = backend_in_file.then(|| config.backend.clone());
            let backend = open_backend(g, &backend_spec(g, from_file.as_deref()))?;
            let src = read_text(&input)?;
            let doc = parse_svg(&src).map_err(|e| user(format!("{}: {e}", input.display())))?;
            let defaults = RewriteOptions::default();
            let opts = RewriteOptions {
                tolerance: tolerance.unwrap_or(config.visual_tolerance),
                context_budget: budget.unwrap_or(config.context_budget),
                ..defaults
            };
            let outcome = rewrite_document(&doc, backend.as_ref(), &opts);
            let item_id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let record =
                serde_json::to_string(&outcome.audit_record(&item_id)).map_err(internal)?;
            let text = outcome.output_text();
            if let Some(path) = &audit {
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| user(format!("cannot open {}: {e}", path.display())))?;
                writeln!(f, "{record}").map_err(internal)?;
            }
            match &output {
                Some(path) => {
                    write_file(path, text.as_bytes())?;
                    emitln(&record)?;
                }
                None => {
                    emit(&text)?;
                    eprintln!("{record}");
                }
            }
            Ok(())
        }

        Command::Embed {
            text,
            svg,
            image,
            item_id,
            run,
        } => {
            let (config, backend) = prepare(g, &run)?;
            let opts = options(g, &run, None)?;
            let svg = svg.as_deref().map(read_text).transpose()?;
            let image = image
                .as_deref()
                .map(|p| {
                    let bytes = fs::read(p)
                        .map_err(|e| user(format!("cannot read {}: {e}", p.display())))?;
                    RasterImage::from_png(&bytes).map_err(|e| user(format!("{}: {e}", p.display())))
                })
                .transpose()?;
            let input = match (text, image, svg) {
                (Some(t), None, None) => ModalInput::Text(t),
                (None, Some(i), None) => ModalInput::Image(i),
                (None, None, Some(s)) => ModalInput::Svg(s),
                (None, Some(i), Some(s)) => ModalInput::ImageSvg(i, s),
                (None, None, None) => return Err(user("give one of --text, --svg, --image")),
                _ => return Err(user("--text cannot be combined with --svg or --image")),
            };
            let modality = match &input {
                ModalInput::Text(_) => Modality::Text,
                ModalInput::Image(_) => Modality::Image,
                ModalInput::Svg(_) => Modality::Svg,
                ModalInput::ImageSvg(..) => Modality::ImageSvg,
            };
            let template = match &config.template_id {
                Some(id) => opts.registry.get(id).map_err(user)?.clone(),
                None => config.template_for(&opts.registry, modality)?,
            };
            let payload = render_prompt(&template, &input).map_err(user)?;
            let record = embed(backend.as_ref(), &payload, config.selector(), &item_id)?;
            emitln(serde_json::to_string(&record).map_err(internal)?)?;
            Ok(())
        }

        Command::Index {
            dataset,
            output,
            cache_dir,
            run,
        } => {
            let (config, backend) = prepare(g, &run)?;
            let opts = options(g, &run, cache_dir.as_deref())?;
            let records = load_dataset(&dataset)?;
            let (embeddings, audit) = embed_database(&config, &records, backend.as_ref(), &opts)?;
            let index = build_index(&embeddings).map_err(internal)?;
            index
                .save(&output)
                .map_err(|e| user(format!("cannot write {}: {e}", output.display())))?;
            let rewritten = audit
                .iter()
                .filter(|a| a.status == meol_core::RewriteStatus::Rewritten)
                .count();
            if g.json {
                print_json(&json!({
                    "items": index.len(),
                    "dim": index.dim(),
                    "format": config.database_format,
                    "rewritten": rewritten,
                    "model_id": backend.model_id(),
                    "output": output,
                }))?;
            } else {
                emitln(format_args!(
                    "indexed {} items (dim {}, {}) -> {}",
                    index.len(),
                    index.dim(),
                    config.database_format,
                    output.display()
                ))?;
            }
            Ok(())
        }

        Command::Query {
            index,
            text,
            k,
            run,
        } => {
            let (config, backend) = prepare(g, &run)?;
            let opts = options(g, &run, None)?;
            let idx = RetrievalIndex::load(&index).map_err(|e| match e {
                RetrievalError::Io(io) => user(format!("cannot read {}: {io}", index.display())),
                other => user(format!("{}: {other}", index.display())),
            })?;
            let query = embed_query(&config, &text, backend.as_ref(), &opts)?;
            let hits = query_topk(&idx, &query.vector, k as usize).map_err(|e| match e {
                RetrievalError::DimMismatch { expected, got } => user(format!(
                    "index holds {expected}-dim vectors but backend {} returned {got}; use the backend that built the index",
                    config.backend
                )),
                other => internal(other),
            })?;
            if g.json {
                let rows: Vec<_> = hits
                    .iter()
                    .map(|h| json!({"rank": h.rank, "item_id": h.item_id, "score": h.score}))
                    .collect();
                print_json(&json!({ "query": text, "results": rows }))?;
            } else {
                for h in &hits {
                    emitln(format_args!("{}\t{}\t{:.6}", h.rank, h.item_id, h.score))?;
                }
            }
            Ok(())
        }

        Command::Eval {
            dataset,
            out,
            cache_dir,
            k_values,
            run,
        } => {
            let (mut config, backend) = prepare(g, &run)?;
            if let Some(k) = k_values {
                config.k_values = k;
            }
            let opts = options(g, &run, cache_dir.as_deref())?;
            let records = load_dataset(&dataset)?;
            let report = run_eval(&config, &records, backend.as_ref(), &opts)?;
            report.write(&out)?;
            let recall: serde_json::Map<String, serde_json::Value> = report
                .run
                .recall_table
                .iter()
                .map(|(k, v)| (format!("recall@{k}"), json!(v)))
                .collect();
            if g.json {
                print_json(&json!({
                    "fingerprint": report.fingerprint,
                    "model_id": report.model_id,
                    "queries": report.run.per_query_rank.len(),
                    "recall": recall,
                    "mrr": report.run.mrr,
                    "out": out,
                }))?;
            } else {
                for (k, v) in &report.run.recall_table {
                    emitln(format_args!("recall@{k}\t{v:.4}"))?;
                }
                emitln(format_args!("mrr\t{:.4}", report.run.mrr))?;
                emitln(format_args!("report written to {}", out.display()))?;
            }
            Ok(())
        }

        Command::Ablate {
            kind,
            dataset,
            out,
            cache_dir,
            run,
        } => {
            let (config, backend) = prepare(g, &run)?;
            let opts = options(g, &run, cache_dir.as_deref())?;
            let records = load_dataset(&dataset)?;
            let layers = layer_count(backend.as_ref(), &config)?;
            let grid = default_grid(kind, &config, layers);
            let report = run_ablation(kind, &grid, &records, backend.as_ref(), &opts)?;
            report.write(&out)?;
            if g.json {
                let rows: Vec<_> = report
                    .rows
                    .iter()
                    .map(|r| json!({"grid_point": r.label, "recall": r.run.recall_table, "mrr": r.run.mrr}))
                    .collect();
                print_json(
                    &json!({"kind": kind, "model_id": report.model_id, "rows": rows, "out": out}),
                )?;
            } else {
                for r in &report.rows {
                    emitln(format_args!(
                        "{}\trecall@10 {:.4}\tmrr {:.4}",
                        r.label,
                        r.run.recall(10).unwrap_or(f64::NAN),
                        r.run.mrr
                    ))?;
                }
                emitln(format_args!(
                    "{} rows written to {}",
                    report.rows.len(),
                    out.display()
                ))?;
            }
            Ok(())
        }

        Command::ServeMock { addr, mock } => {
            if !matches!(mock.as_str(), "mock-hash" | "mock-semantic") {
                return Err(user(format!(
                    "--mock must be mock-hash or mock-semantic, not {mock:?}"
                )));
            }
            let backend = open_backend(g, &mock)?;
            let handle = server::spawn(addr.as_str(), backend)
                .map_err(|e| user(format!("cannot listen on {addr}: {e}")))?;
            if g.json {
                print_json(&json!({"listening": handle.addr().to_string(), "mock": mock}))?;
            } else {
                emitln(format_args!("listening on {} ({mock})", handle.addr()))?;
            }
            std::io::stdout().flush().map_err(internal)?;
            handle.wait();
            Ok(())
        }
    }
}

/// Asks the backend how many layers it has.
fn layer_count(backend: &dyn Backend, config: &RunConfig) -> Result<u32> {
    let probe = EmbedRequest {
        text: "probe".into(),
        image_b64: None,
        svg_code: None,
        layer_offset: 0,
        pooling: Pooling::LastToken,
        request_id: "layer-probe".into(),
    };
    let resp = backend
        .embed(&probe)
        .map_err(|e| internal(format!("backend {}: {e}", config.backend)))?;
    Ok(resp.layer_count)
}
