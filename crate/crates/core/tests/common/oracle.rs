//! Exact integer-arithmetic retrieval oracle and random instance generator.

use std::cmp::Ordering;
use std::collections::HashMap;

use meol_core::backend::MockSemanticBackend;
use meol_core::retrieval::{
    evaluate, query_topk, self_similarity_histogram, Query, RetrievalIndex, DEFAULT_K_VALUES,
};
use proptest::prelude::*;
use proptest::sample::Index;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

fn dot(x: &[i64], y: &[i64]) -> i128 {
    x.iter()
        .zip(y)
        .map(|(u, v)| (*u as i128) * (*v as i128))
        .sum()
}

/// Exact comparison of two cosines given as (dot with query, squared norm):
/// compares da/sqrt(na) with db/sqrt(nb) by sign and squared magnitude.
fn cmp_exact((da, na): (i128, i128), (db, nb): (i128, i128)) -> Ordering {
    match (da.signum(), db.signum()) {
        (x, y) if x != y => x.cmp(&y),
        (0, 0) => Ordering::Equal,
        (s, _) => {
            let lhs = da * da * nb;
            let rhs = db * db * na;
            if s > 0 {
                lhs.cmp(&rhs)
            } else {
                rhs.cmp(&lhs)
            }
        }
    }
}

pub fn oracle_order(q: &[i64], items: &[(String, Vec<i64>)]) -> Vec<String> {
    let mut keyed: Vec<(&str, (i128, i128))> = items
        .iter()
        .map(|(id, v)| (id.as_str(), (dot(q, v), dot(v, v))))
        .collect();
    keyed.sort_by(|x, y| cmp_exact(y.1, x.1).then_with(|| x.0.cmp(y.0)));
    keyed.into_iter().map(|(id, _)| id.to_string()).collect()
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub items: Vec<(String, Vec<i64>)>,
    pub queries: Vec<(Vec<i64>, usize)>,
}

pub fn to_f64(v: &[i64]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn nonzero(dim: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-1000i64..=1000, dim)
        .prop_filter("zero vector", |v| v.iter().any(|x| *x != 0))
}

/// Random items where some are exact copies or power-of-two multiples of
/// others, so true ties occur and must break by item id.
pub fn arb_instance() -> impl Strategy<Value = Instance> {
    (2usize..=200, 1usize..=64).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(nonzero(dim), n),
            prop::collection::vec((any::<Index>(), any::<Index>(), 0u32..4), 0..n / 3 + 1),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec((prop::option::of(nonzero(dim)), any::<Index>()), 1..12),
        )
            .prop_map(move |(mut vectors, copies, perm, queries)| {
                for (src, dst, shift) in copies {
                    let (s, d) = (src.index(n), dst.index(n));
                    vectors[d] = vectors[s].iter().map(|x| x << shift).collect();
                }
                let items = vectors
                    .into_iter()
                    .zip(perm)
                    .map(|(v, p)| (format!("id{p:03}"), v))
                    .collect();
                let queries = queries
                    .into_iter()
                    .map(|(q, gt)| {
                        let gt = gt.index(n);
                        // a missing query vector means "query with a ground-truth item's own vector"
                        (q.unwrap_or_default(), gt)
                    })
                    .collect();
                Instance { items, queries }
            })
    })
}

pub fn build(inst: &Instance) -> (RetrievalIndex, Vec<Query>, Vec<Vec<i64>>) {
    let index =
        RetrievalIndex::from_vectors(inst.items.iter().map(|(id, v)| (id.clone(), to_f64(v))))
            .unwrap();
    let mut raw = Vec::new();
    let queries = inst
        .queries
        .iter()
        .enumerate()
        .map(|(i, (q, gt))| {
            let q = if q.is_empty() {
                inst.items[*gt].1.clone()
            } else {
                q.clone()
            };
            let query = Query {
                query_id: format!("q{i}"),
                vector: to_f64(&q),
                ground_truth: inst.items[*gt].0.clone(),
            };
            raw.push(q);
            query
        })
        .collect();
    (index, queries, raw)
}

fn float_cosine(a: &[i64], b: &[i64]) -> f64 {
    let (a, b) = (to_f64(a), to_f64(b));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Compares ranking, top-k, per-query ranks, scores, Recall@k and MRR with the oracle.
pub fn check_instance(inst: &Instance) -> Result<(), String> {
    let (index, queries, raw) = build(inst);
    let run = evaluate(&index, &queries, &DEFAULT_K_VALUES).map_err(|e| e.to_string())?;
    let by_id: HashMap<&str, &Vec<i64>> =
        inst.items.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let mut oracle_ranks = Vec::new();
    for (query, q) in queries.iter().zip(&raw) {
        let order = oracle_order(q, &inst.items);
        let ranked = index.rank_all(&query.vector).map_err(|e| e.to_string())?;
        let got: Vec<&str> = ranked.iter().map(|r| r.item_id.as_str()).collect();
        if got != order.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(format!("{}: ranking differs from oracle", query.query_id));
        }
        for r in &ranked {
            let want = float_cosine(q, by_id[r.item_id.as_str()]);
            if (r.score - want).abs() > 1e-9 {
                return Err(format!("{}: score {} vs oracle {want}", r.item_id, r.score));
            }
        }
        let top = query_topk(&index, &query.vector, 5).map_err(|e| e.to_string())?;
        if top.len() != order.len().min(5) || top.iter().zip(&order).any(|(t, o)| t.item_id != *o) {
            return Err(format!("{}: top-5 differs from oracle", query.query_id));
        }
        let rank = order
            .iter()
            .position(|id| *id == query.ground_truth)
            .unwrap()
            + 1;
        if run.rank_of(&query.query_id) != Some(rank) {
            return Err(format!(
                "{}: rank {:?} vs oracle {rank}",
                query.query_id,
                run.rank_of(&query.query_id)
            ));
        }
        oracle_ranks.push(rank);
    }
    let n = oracle_ranks.len() as f64;
    for k in DEFAULT_K_VALUES {
        let want = oracle_ranks.iter().filter(|r| **r <= k).count() as f64 / n;
        if (run.recall(k).unwrap() - want).abs() > 1e-9 {
            return Err(format!(
                "recall@{k} {} vs oracle {want}",
                run.recall(k).unwrap()
            ));
        }
    }
    let mrr = oracle_ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / n;
    if (run.mrr - mrr).abs() > 1e-9 {
        return Err(format!("mrr {} vs oracle {mrr}", run.mrr));
    }
    Ok(())
}

/// Runs `check_instance` on `cases` instances from a fixed seed.
pub fn run_random(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner
        .run(&arb_instance(), |inst| {
            check_instance(&inst).map_err(TestCaseError::fail)
        })
        .map_err(|e| e.to_string())
}

/// Self-similarity histogram of 100 mock-semantic vectors against a pairwise loop.
pub fn check_histogram() -> Result<(), String> {
    let words = [
        "red", "blue", "green", "circle", "square", "arrow", "star", "house", "tree", "cloud",
    ];
    let items: Vec<(String, Vec<f64>)> = (0..100)
        .map(|i| {
            let t = format!("{} {} {i}", words[i % 10], words[(i / 10) % 10]);
            (
                format!("item-{i:03}"),
                MockSemanticBackend::vector_for_text(&t),
            )
        })
        .collect();
    let index = RetrievalIndex::from_vectors(items.clone()).map_err(|e| e.to_string())?;
    let bins = 40;
    let hist = self_similarity_histogram(&index, bins).map_err(|e| e.to_string())?;

    let mut expected = vec![0u64; bins];
    let mut near_edge = 0u64;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let (a, b) = (&items[i].1, &items[j].1);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let pos = (dot / (na * nb) + 1.0) / 2.0 * bins as f64;
            if (pos - pos.round()).abs() < 1e-9 {
                near_edge += 1;
            }
            expected[(pos.floor().max(0.0) as usize).min(bins - 1)] += 1;
        }
    }
    if hist.total() != 100 * 99 / 2 {
        return Err(format!("total {} != 4950", hist.total()));
    }
    if hist.counts.len() != bins
        || hist.edges.len() != bins + 1
        || hist.edges[0] != -1.0
        || hist.edges[bins] != 1.0
    {
        return Err("bad bin layout".into());
    }
    // pairs sitting on a bin edge may land either side under rounding
    let diff: u64 = hist
        .counts
        .iter()
        .zip(&expected)
        .map(|(a, b)| a.abs_diff(*b))
        .sum();
    if diff > 2 * near_edge {
        return Err(format!("counts differ from oracle by {diff}"));
    }
    Ok(())
}
