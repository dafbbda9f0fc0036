//! Exact cosine search, Recall@k / MRR, and self-similarity analysis.

mod io;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{normalize, EmbeddingRecord};

pub use io::{
    read_index, write_eval_csv, write_histogram_csv, write_index, write_summary_csv, INDEX_MAGIC,
    INDEX_VERSION,
};

/// Cutoffs reported by default.
pub const DEFAULT_K_VALUES: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("index needs at least one record")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("zero vector for {0:?}")]
    ZeroVector(String),
    #[error("non-finite value in vector for {0:?}")]
    NonFinite(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("ground truth {item:?} of query {query:?} is not in the index")]
    UnknownGroundTruth { query: String, item: String },
    #[error("need at least 2 items, have {0}")]
    TooFewItems(usize),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Immutable set of unit-normalized vectors.
///
/// Insertion order is kept, but ranking never depends on it: ties are broken
/// by ascending item id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    item_ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub item_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    /// Query id and the full-ranking rank of its ground truth, in query order.
    pub per_query_rank: Vec<(String, usize)>,
    pub k_values: Vec<usize>,
    pub recall_table: BTreeMap<usize, f64>,
    pub mrr: f64,
}

impl EvalRun {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_table.get(&k).copied()
    }

    pub fn rank_of(&self, query_id: &str) -> Option<usize> {
        self.per_query_rank
            .iter()
            .find(|(q, _)| q == query_id)
            .map(|(_, r)| *r)
    }
}

/// One evaluation query.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub vector: Vec<f64>,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges spanning [-1, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_of(value: f64, bins: usize) -> usize {
        let pos = ((value + 1.0) / 2.0 * bins as f64).floor();
        if pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(item: &str, v: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RetrievalError::NonFinite(item.to_string()));
    }
    normalize(v).map_err(|_| RetrievalError::ZeroVector(item.to_string()))
}

fn by_score_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn build_index(records: &[EmbeddingRecord]) -> Result<RetrievalIndex, RetrievalError> {
    RetrievalIndex::from_vectors(
        records
            .iter()
            .map(|r| (r.item_id.clone(), r.vector.clone())),
    )
}

impl RetrievalIndex {
    pub fn from_vectors<I>(items: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut item_ids = Vec::new();
        let mut vectors = Vec::new();
        let mut seen = HashSet::new();
        let mut dim = None;
        for (id, v) in items {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(RetrievalError::DimMismatch {
                    expected,
                    got: v.len(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateItem(id));
            }
            vectors.push(unit(&id, &v)?);
            item_ids.push(id);
        }
        let dim = dim.ok_or(RetrievalError::Empty)?;
        Ok(Self {
            item_ids,
            vectors,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn vector(&self, item_id: &str) -> Option<&[f64]> {
        self.item_ids
            .iter()
            .position(|i| i == item_id)
            .map(|p| self.vectors[p].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.item_ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    fn scores(&self, query: &[f64]) -> Result<Vec<(f64, &str)>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = unit("<query>", query)?;
        let mut scored: Vec<(f64, &str)> = self
            .vectors
            .iter()
            .zip(&self.item_ids)
            .map(|(v, id)| (dot(&q, v), id.as_str()))
            .collect();
        scored.sort_by(by_score_then_id);
        Ok(scored)
    }

    /// Full ranking of every item against `query`.
    pub fn rank_all(&self, query: &[f64]) -> Result<Vec<RankedResult>, RetrievalError> {
        Ok(self
            .scores(query)?
            .into_iter()
            .enumerate()
            .map(|(i, (score, id))| RankedResult {
                item_id: id.to_string(),
                score,
                rank: i + 1,
            })
            .collect())
    }
}

pub fn query_topk(
    index: &RetrievalIndex,
    query: &[f64],
    k: usize,
) -> Result<Vec<RankedResult>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let mut all = index.rank_all(query)?;
    all.truncate(k);
    Ok(all)
}

/// Scores every query against the index; ranks come from the full ranking.
pub fn evaluate(
    index: &RetrievalIndex,
    queries: &[Query],
    k_values: &[usize],
) -> Result<EvalRun, RetrievalError> {
    if k_values.contains(&0) {
        return Err(RetrievalError::InvalidK);
    }
    let known: HashMap<&str, ()> = index.item_ids.iter().map(|i| (i.as_str(), ())).collect();
    for q in queries {
        if !known.contains_key(q.ground_truth.as_str()) {
            return Err(RetrievalError::UnknownGroundTruth {
                query: q.query_id.clone(),
                item: q.ground_truth.clone(),
            });
        }
    }
    let ranks: Vec<usize> = queries
        .par_iter()
        .map(|q| {
            let scored = index.scores(&q.vector)?;
            Ok(scored
                .iter()
                .position(|(_, id)| *id == q.ground_truth)
                .expect("ground truth present")
                + 1)
        })
        .collect::<Result<_, RetrievalError>>()?;

    let n = queries.len().max(1) as f64;
    let mut k_values = k_values.to_vec();
    k_values.sort_unstable();
    k_values.dedup();
    let recall_table = k_values
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    Ok(EvalRun {
        per_query_rank: queries
            .iter()
            .map(|q| q.query_id.clone())
            .zip(ranks)
            .collect(),
        k_values,
        recall_table,
        mrr,
    })
}

/// Histogram of cosine similarity over all unordered pairs of distinct items.
pub fn self_similarity_histogram(
    index: &RetrievalIndex,
    bin_count: usize,
) -> Result<Histogram, RetrievalError> {
    if index.len() < 2 {
        return Err(RetrievalError::TooFewItems(index.len()));
    }
    if bin_count == 0 {
        return Err(RetrievalError::NoBins);
    }
    let mut counts = vec![0u64; bin_count];
    for i in 0..index.len() {
        for j in i + 1..index.len() {
            let s = dot(&index.vectors[i], &index.vectors[j]);
            counts[Histogram::bin_of(s, bin_count)] += 1;
        }
    }
    let edges = (0..=bin_count)
        .map(|b| -1.0 + 2.0 * b as f64 / bin_count as f64)
        .collect();
    Ok(Histogram { edges, counts })
}
