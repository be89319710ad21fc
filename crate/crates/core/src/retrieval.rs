//! Exact top-k cosine retrieval over unit vectors.
//!
//! The index is a flat row-major matrix scanned exhaustively. Inner products
//! accumulate in `f64` so that ties between near-identical scores do not
//! depend on summation drift, and results are ordered by
//! `(score desc, id asc)`.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_id, EmbeddingStore};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("zero-norm vector for id {0:?}")]
    ZeroNorm(String),
    #[error("store is not L2-normalized")]
    NotNormalized,
    #[error("cannot build an index from an empty store")]
    EmptyStore,
    #[error("query dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("run line {line}: {message}")]
    BadRun { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Returns a copy of `store` with every vector scaled to unit L2 norm.
pub fn l2_normalize(store: &EmbeddingStore) -> Result<EmbeddingStore, RetrievalError> {
    let vectors = store.map_vectors(|id, v| {
        let norm = v
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroNorm(id.to_owned()));
        }
        Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
    })?;
    Ok(EmbeddingStore::from_normalized(store.dim(), vectors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Brute-force inner-product index; rows are held in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
}

impl FlatIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }
}

pub fn build_index(store: &EmbeddingStore) -> Result<FlatIndex, RetrievalError> {
    if !store.is_normalized() {
        return Err(RetrievalError::NotNormalized);
    }
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let mut ids = Vec::with_capacity(store.len());
    let mut matrix = Vec::with_capacity(store.len() * store.dim());
    for (id, v) in store.iter() {
        ids.push(id.to_owned());
        matrix.extend_from_slice(v);
    }
    Ok(FlatIndex {
        dim: store.dim(),
        ids,
        matrix,
    })
}

/// The `k` best neighbors of `query`, skipping `exclude_id`.
pub fn search(
    index: &FlatIndex,
    query: &[f32],
    k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<Neighbor>, RetrievalError> {
    if query.len() != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim,
            found: query.len(),
        });
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let excluded = exclude_id.and_then(|id| index.position(id));
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .filter(|&i| Some(i) != excluded)
        .map(|i| (dot(index.row(i), query), i))
        .collect();
    // Row order is ascending id, so comparing row positions breaks ties by id.
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(score, i)| Neighbor {
            id: index.ids[i].clone(),
            score,
        })
        .collect())
}

/// Per-query ranked neighbor lists for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub system_name: String,
    pub k: usize,
    pub results: BTreeMap<String, Vec<Neighbor>>,
}

#[derive(Serialize, Deserialize)]
struct RunLine {
    query: String,
    neighbors: Vec<Neighbor>,
}

impl RankedRun {
    /// JSONL, one query per line in ascending query-id order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        for (query, neighbors) in &self.results {
            serde_json::to_writer(
                &mut w,
                &RunLine {
                    query: query.clone(),
                    neighbors: neighbors.clone(),
                },
            )
            .map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a run produced by this crate or by an external system. Every
    /// list must be score-sorted, self-free and duplicate-free; `k` is taken
    /// as the longest list.
    pub fn read_jsonl<R: BufRead>(r: R, system_name: &str) -> Result<Self, RetrievalError> {
        let mut results = BTreeMap::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| RetrievalError::BadRun {
                line: line_no,
                message,
            };
            let parsed: RunLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let query = normalize_id(&parsed.query);
            let mut neighbors = parsed.neighbors;
            let mut seen = HashSet::new();
            for n in &mut neighbors {
                n.id = normalize_id(&n.id);
                if n.id == query {
                    return Err(bad(format!("query {query:?} lists itself")));
                }
                if !seen.insert(n.id.clone()) {
                    return Err(bad(format!("neighbor {:?} repeated", n.id)));
                }
                if !n.score.is_finite() {
                    return Err(bad(format!("non-finite score for {:?}", n.id)));
                }
            }
            if neighbors.windows(2).any(|w| w[1].score > w[0].score) {
                return Err(bad("scores are not non-increasing".into()));
            }
            if results.insert(query.clone(), neighbors).is_some() {
                return Err(bad(format!("query {query:?} appears twice")));
            }
        }
        let k = results.values().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            system_name: system_name.to_owned(),
            k,
            results,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub run: RankedRun,
    /// Queries with no vector in the store, ascending.
    pub skipped: Vec<String>,
}

/// Searches every query with its own embedding, excluding the self-match.
/// Queries run in parallel; the output is independent of worker count.
pub fn run_queries<'a>(
    system_name: &str,
    index: &FlatIndex,
    queries: impl IntoIterator<Item = &'a str>,
    store: &EmbeddingStore,
    k: usize,
) -> Result<RunOutput, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if !store.is_normalized() {
        return Err(RetrievalError::NotNormalized);
    }
    if store.dim() != index.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim(),
            found: store.dim(),
        });
    }
    let mut present = Vec::new();
    let mut skipped = Vec::new();
    for q in queries {
        match store.get(q) {
            Some(v) => present.push((q, v)),
            None => skipped.push(q.to_owned()),
        }
    }
    let results = present
        .par_iter()
        .map(|&(q, v)| Ok((q.to_owned(), search(index, v, k, Some(q))?)))
        .collect::<Result<BTreeMap<_, _>, RetrievalError>>()?;
    skipped.sort();
    skipped.dedup();
    Ok(RunOutput {
        run: RankedRun {
            system_name: system_name.to_owned(),
            k,
            results,
        },
        skipped,
    })
}
