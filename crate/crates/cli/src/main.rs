//! `meol`: SVG rewriting, multimodal embedding and retrieval evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meol_core::backend::Pooling;
use meol_core::bench::{AblationKind, DatabaseFormat};
use meol_core::prompt::LengthVariant;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "meol",
    version,
    about = "Multimodal one-word embeddings for SVG retrieval"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Backend: mock-hash, mock-semantic or host:port of an embedding server.
    /// Falls back to the config file, then $META_EMBED_ADDR, then mock-semantic.
    #[arg(long, global = true)]
    backend: Option<String>,

    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Seed for the mock-hash backend.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Maximum concurrent backend requests.
    #[arg(long, global = true, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=256))]
    parallelism: u64,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Overrides for the run configuration shared by the embedding commands.
#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Database format.
    #[arg(long, value_name = "FORMAT")]
    format: Option<DatabaseFormat>,

    /// Template family: meol, prompteol or keeol.
    #[arg(long)]
    family: Option<String>,

    /// Explicit database template id.
    #[arg(long, value_name = "ID")]
    template: Option<String>,

    /// Answer length: one_word, two_words, three_words, four_words or sentence.
    #[arg(long, value_name = "VARIANT")]
    length: Option<LengthVariant>,

    /// Hidden layer counted back from the last (0 = last layer).
    #[arg(long)]
    layer_offset: Option<u32>,

    /// last_token or mean_all_tokens.
    #[arg(long)]
    pooling: Option<Pooling>,

    /// Lowercase queries before embedding.
    #[arg(long)]
    lowercase_queries: bool,

    /// Additional template registry (TOML), layered over the built-ins.
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relabel an SVG's element ids with semantic names, keeping its rendering.
    Rewrite {
        input: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Append the audit record to this JSONL file.
        #[arg(long, value_name = "FILE")]
        audit: Option<PathBuf>,
        /// Largest accepted raster RMSE between input and output.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Context budget in estimated tokens.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Embed one input and print the vector as JSON.
    Embed {
        #[arg(long)]
        text: Option<String>,
        /// SVG file.
        #[arg(long, value_name = "FILE")]
        svg: Option<PathBuf>,
        /// PNG file.
        #[arg(long, value_name = "FILE")]
        image: Option<PathBuf>,
        /// Identifier recorded with the vector.
        #[arg(long, default_value = "")]
        item_id: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Embed a dataset's database entries and save an index file.
    Index {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Embedding cache directory; reruns resume from it.
        #[arg(long, value_name = "DIR")]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rank index items against a text query.
    Query {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(short, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a full retrieval evaluation and write its report.
    Eval {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Report directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        cache_dir: Option<PathBuf>,
        /// Recall cut-offs, comma separated.
        #[arg(long, value_delimiter = ',', value_name = "K,..")]
        k_values: Option<Vec<usize>>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sweep one setting and write a CSV row per grid point.
    Ablate {
        /// layer_sweep, pooling, prompt_length, database_format or eol_family.
        #[arg(long)]
        kind: AblationKind,
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Serve a mock backend over the wire protocol until killed.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        /// mock-hash or mock-semantic.
        #[arg(long, default_value = "mock-semantic")]
        mock: String,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    std::panic::set_hook(Box::new(|info| log::error!("{info}")));
    let result = std::panic::catch_unwind(|| commands::dispatch(cli))
        .unwrap_or_else(|_| Err(CliError::Internal("internal error (panic)".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
