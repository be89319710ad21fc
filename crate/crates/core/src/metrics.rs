//! Ranked-retrieval metrics over IDF-weighted Jaccard gains.
//!
//! nDCG works on the graded gains directly and normalizes by the true ideal:
//! every corpus document sharing a keyword with the query, sorted by gain.
//! P@k, AP@k, HitRate@k and RBP binarize gains at a threshold `τ` with
//! `r >= τ`. Lists shorter than `k` count as padded with zero gains.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DocumentRecord};
use crate::relevance::{shared_terms, weighted_jaccard, IdfTable, RelevanceError, Threshold};
use crate::retrieval::RankedRun;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("document {0:?} is not in the corpus metadata")]
    MissingDocument(String),
    #[error("persistence p = {0} outside (0, 1)")]
    BadPersistence(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown metric name {0:?}")]
    UnknownMetric(String),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
}

/// Graded gains `r_1..r_n` aligned with a ranked list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainVector(Vec<f64>);

impl GainVector {
    pub fn new(gains: Vec<f64>) -> Result<Self, RelevanceError> {
        match gains.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            Some(&g) => Err(RelevanceError::GainOutOfRange(g)),
            None => Ok(Self(gains)),
        }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GainVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn lookup<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a DocumentRecord, MetricsError> {
    corpus
        .get(id)
        .ok_or_else(|| MetricsError::MissingDocument(id.to_owned()))
}

/// Gains of every result list in `run`.
pub fn gains_for_run(
    run: &RankedRun,
    corpus: &Corpus,
    idf: &IdfTable,
) -> Result<BTreeMap<String, GainVector>, MetricsError> {
    run.results
        .iter()
        .map(|(q, neighbors)| {
            let query = lookup(corpus, q)?;
            let gains = neighbors
                .iter()
                .map(|n| Ok(weighted_jaccard(query.keywords(), lookup(corpus, &n.id)?.keywords(), idf).value()))
                .collect::<Result<Vec<_>, MetricsError>>()?;
            Ok((q.clone(), GainVector(gains)))
        })
        .collect()
}

/// Inverted keyword index used to enumerate ideal candidates.
pub struct KeywordIndex<'a> {
    corpus: &'a Corpus,
    postings: HashMap<&'a str, Vec<usize>>,
}

impl<'a> KeywordIndex<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        let mut postings: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in corpus.records().iter().enumerate() {
            for t in r.keywords() {
                postings.entry(t.as_str()).or_default().push(i);
            }
        }
        Self { corpus, postings }
    }

    /// Gains of every other document sharing at least one keyword with the
    /// query, sorted non-increasing.
    pub fn candidate_gains(&self, query_id: &str, idf: &IdfTable) -> Result<Vec<f64>, MetricsError> {
        let query = lookup(self.corpus, query_id)?;
        let candidates: BTreeSet<usize> = query
            .keywords()
            .iter()
            .filter_map(|t| self.postings.get(t.as_str()))
            .flatten()
            .copied()
            .filter(|&i| self.corpus.records()[i].id() != query_id)
            .collect();
        let mut gains: Vec<f64> = candidates
            .into_iter()
            .map(|i| weighted_jaccard(query.keywords(), self.corpus.records()[i].keywords(), idf).value())
            .collect();
        gains.sort_by(|a, b| b.total_cmp(a));
        Ok(gains)
    }

    pub fn ideal_gains(&self, query_id: &str, idf: &IdfTable, k: usize) -> Result<GainVector, MetricsError> {
        let mut gains = self.candidate_gains(query_id, idf)?;
        gains.resize(k, 0.0);
        Ok(GainVector(gains))
    }
}

/// Ideal gain vector of length `k` for one query.
pub fn ideal_gains(
    query_id: &str,
    corpus: &Corpus,
    idf: &IdfTable,
    k: usize,
) -> Result<GainVector, MetricsError> {
    KeywordIndex::new(corpus).ideal_gains(query_id, idf, k)
}

/// `Σ_{i≤k} (2^{r_i} − 1) / log2(i + 1)`.
pub fn dcg_at_k(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| (r.exp2() - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// `None` when the ideal DCG is zero (query excluded from nDCG means).
pub fn ndcg_at_k(gains: &[f64], ideal: &[f64], k: usize) -> Option<f64> {
    let idcg = dcg_at_k(ideal, k);
    (idcg > 0.0).then(|| dcg_at_k(gains, k) / idcg)
}

fn hits(gains: &[f64], tau: Threshold, k: usize) -> impl Iterator<Item = bool> + '_ {
    gains.iter().take(k).map(move |&r| tau.admits(r))
}

pub fn precision_at_k(gains: &[f64], tau: Threshold, k: usize) -> f64 {
    hits(gains, tau, k).filter(|&b| b).count() as f64 / k as f64
}

/// Denominator of average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MapNormalization {
    /// Number of hits within the top k.
    #[default]
    TopkHits,
    /// `min(R_τ, k)` with `R_τ` the corpus-wide count of τ-relevant documents.
    RTauCapped,
}

/// AP@k. `relevant_total` is `R_τ`, only read under [`MapNormalization::RTauCapped`].
pub fn map_at_k(
    gains: &[f64],
    tau: Threshold,
    k: usize,
    normalization: MapNormalization,
    relevant_total: usize,
) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, hit) in hits(gains, tau, k).enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    let denom = match normalization {
        MapNormalization::TopkHits => found,
        MapNormalization::RTauCapped => relevant_total.min(k),
    };
    if found == 0 || denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

pub fn hitrate_at_k(gains: &[f64], tau: Threshold, k: usize) -> f64 {
    if hits(gains, tau, k).any(|b| b) {
        1.0
    } else {
        0.0
    }
}

pub const RBP_DEPTH: usize = 10;

/// `(1 − p) Σ_{i≤depth} p^{i−1} b_i`.
pub fn rbp_at_depth(gains: &[f64], tau: Threshold, p: f64, depth: usize) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricsError::BadPersistence(p));
    }
    let mut weight = 1.0;
    let mut total = 0.0;
    for hit in hits(gains, tau, depth) {
        if hit {
            total += weight;
        }
        weight *= p;
    }
    Ok((1.0 - p) * total)
}

pub fn rbp_at_10(gains: &[f64], tau: Threshold, p: f64) -> Result<f64, MetricsError> {
    rbp_at_depth(gains, tau, p, RBP_DEPTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Overlap {
    pub count: usize,
    pub weighted: f64,
}

/// Shared-keyword count and IDF mass summed over the first `k` neighbors.
pub fn overlap_at_k<'a, S: AsRef<str> + 'a>(
    query: &[S],
    neighbors: impl IntoIterator<Item = &'a [S]>,
    idf: &IdfTable,
    k: usize,
) -> Overlap {
    let mut out = Overlap::default();
    for kws in neighbors.into_iter().take(k) {
        for t in shared_terms(query, kws) {
            out.count += 1;
            out.weighted += idf.idf(t);
        }
    }
    out
}

pub fn overlap_diagnostics(
    run: &RankedRun,
    corpus: &Corpus,
    idf: &IdfTable,
    k: usize,
) -> Result<BTreeMap<String, Overlap>, MetricsError> {
    run.results
        .iter()
        .map(|(q, neighbors)| {
            let query = lookup(corpus, q)?;
            let kws = neighbors
                .iter()
                .take(k)
                .map(|n| Ok(lookup(corpus, &n.id)?.keywords()))
                .collect::<Result<Vec<_>, MetricsError>>()?;
            Ok((q.clone(), overlap_at_k(query.keywords(), kws, idf, k)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricFamily {
    Ndcg,
    Precision,
    Map,
    HitRate,
    Rbp,
    OverlapCount,
    WeightedOverlap,
    RelevantCount,
}

impl MetricFamily {
    fn slug(self) -> &'static str {
        match self {
            Self::Ndcg => "ndcg",
            Self::Precision => "p",
            Self::Map => "map",
            Self::HitRate => "hit",
            Self::Rbp => "rbp",
            Self::OverlapCount => "overlap_count",
            Self::WeightedOverlap => "weighted_overlap",
            Self::RelevantCount => "r_tau",
        }
    }

    /// Whether the metric binarizes gains (and so carries a τ).
    pub fn is_thresholded(self) -> bool {
        matches!(
            self,
            Self::Precision | Self::Map | Self::HitRate | Self::Rbp | Self::RelevantCount
        )
    }

    fn has_depth(self) -> bool {
        !matches!(self, Self::RelevantCount)
    }

    /// Column label used in report tables.
    pub fn display(self) -> &'static str {
        match self {
            Self::Ndcg => "nDCG",
            Self::Precision => "P",
            Self::Map => "MAP",
            Self::HitRate => "Hit",
            Self::Rbp => "RBP",
            Self::OverlapCount => "OverlapCount",
            Self::WeightedOverlap => "WeightedOverlap",
            Self::RelevantCount => "R_tau",
        }
    }
}

impl FromStr for MetricFamily {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use MetricFamily::*;
        [Ndcg, Precision, Map, HitRate, Rbp, OverlapCount, WeightedOverlap, RelevantCount]
            .into_iter()
            .find(|f| f.slug().eq_ignore_ascii_case(s) || f.display().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricsError::UnknownMetric(s.to_owned()))
    }
}

/// One report cell, e.g. `ndcg@10` or `p@10/tau=0.2`. RBP always has depth 10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricKey {
    pub family: MetricFamily,
    pub k: usize,
    pub tau: Option<f64>,
}

impl MetricKey {
    pub fn new(family: MetricFamily, k: usize, tau: f64) -> Self {
        Self {
            family,
            k: if family == MetricFamily::Rbp { RBP_DEPTH } else { k },
            tau: family.is_thresholded().then_some(tau),
        }
    }

    /// Short label for tables, e.g. `P@10`.
    pub fn label(&self) -> String {
        if self.family.has_depth() {
            format!("{}@{}", self.family.display(), self.k)
        } else {
            self.family.display().to_owned()
        }
    }
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.family.slug())?;
        if self.family.has_depth() {
            write!(f, "@{}", self.k)?;
        }
        if let Some(tau) = self.tau {
            write!(f, "/tau={tau}")?;
        }
        Ok(())
    }
}

impl FromStr for MetricKey {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || MetricsError::UnknownMetric(s.to_owned());
        let (head, tau) = match s.split_once("/tau=") {
            Some((h, t)) => (h, Some(t.parse::<f64>().map_err(|_| unknown())?)),
            None => (s, None),
        };
        let (family, k) = match head.split_once('@') {
            Some((f, k)) => (f.parse::<MetricFamily>()?, k.parse().map_err(|_| unknown())?),
            None => (head.parse::<MetricFamily>()?, 0),
        };
        if family.is_thresholded() != tau.is_some() || family.has_depth() == (k == 0) {
            return Err(unknown());
        }
        Ok(Self { family, k, tau })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub tau_list: Vec<f64>,
    pub rbp_p: f64,
    pub map_normalization: MapNormalization,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: vec![10, 20, 100],
            tau_list: vec![0.20, 0.28],
            rbp_p: 0.9,
            map_normalization: MapNormalization::TopkHits,
        }
    }
}

impl EvalConfig {
    /// Sorts and deduplicates the grids and checks every parameter.
    pub fn validated(mut self) -> Result<Self, MetricsError> {
        self.k_list.sort_unstable();
        self.k_list.dedup();
        self.tau_list.sort_by(f64::total_cmp);
        self.tau_list.dedup();
        if self.k_list.is_empty() || self.k_list[0] == 0 {
            return Err(MetricsError::ZeroK);
        }
        for &tau in &self.tau_list {
            Threshold::new(tau)?;
        }
        if !(self.rbp_p > 0.0 && self.rbp_p < 1.0) {
            return Err(MetricsError::BadPersistence(self.rbp_p));
        }
        Ok(self)
    }

    pub fn max_k(&self) -> usize {
        self.k_list.iter().copied().max().unwrap_or(0)
    }

    /// Every cell a report carries, in a fixed order.
    pub fn metric_keys(&self) -> Vec<MetricKey> {
        let mut keys = Vec::new();
        let tau0 = self.tau_list.first().copied().unwrap_or(0.5);
        for &k in &self.k_list {
            keys.push(MetricKey::new(MetricFamily::Ndcg, k, tau0));
            for &tau in &self.tau_list {
                for f in [MetricFamily::Precision, MetricFamily::Map, MetricFamily::HitRate] {
                    keys.push(MetricKey::new(f, k, tau));
                }
            }
            keys.push(MetricKey::new(MetricFamily::OverlapCount, k, tau0));
            keys.push(MetricKey::new(MetricFamily::WeightedOverlap, k, tau0));
        }
        for &tau in &self.tau_list {
            keys.push(MetricKey::new(MetricFamily::Rbp, RBP_DEPTH, tau));
            keys.push(MetricKey::new(MetricFamily::RelevantCount, 0, tau));
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    pub n: usize,
}

pub type PerQuery = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system: String,
    pub corpus_digest: String,
    pub config: EvalConfig,
    pub n_queries: usize,
    pub aggregates: BTreeMap<String, Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query: Option<PerQuery>,
    pub exclusions: BTreeMap<String, Vec<String>>,
}

impl MetricsReport {
    pub fn mean(&self, key: &MetricKey) -> Option<f64> {
        self.aggregates.get(&key.to_string()).and_then(|a| a.mean)
    }

    /// Per-query values of one cell; excluded queries are absent.
    pub fn values(&self, key: &MetricKey) -> BTreeMap<String, f64> {
        let name = key.to_string();
        self.per_query
            .iter()
            .flatten()
            .filter_map(|(q, m)| m.get(&name).map(|&v| (q.clone(), v)))
            .collect()
    }
}

/// Means of every listed metric over the queries that carry it, folded in
/// ascending query-id order.
pub fn aggregate(per_query: &PerQuery, metrics: &[String]) -> BTreeMap<String, Aggregate> {
    metrics
        .iter()
        .map(|name| {
            let values: Vec<f64> = per_query.values().filter_map(|m| m.get(name).copied()).collect();
            let n = values.len();
            let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
            (name.clone(), Aggregate { mean, n })
        })
        .collect()
}

fn query_metrics(
    query_id: &str,
    neighbors: &[&[String]],
    corpus: &Corpus,
    index: &KeywordIndex<'_>,
    idf: &IdfTable,
    config: &EvalConfig,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let query = lookup(corpus, query_id)?;
    let gains: Vec<f64> = neighbors
        .iter()
        .map(|kws| weighted_jaccard(query.keywords(), kws, idf).value())
        .collect();
    let candidates = index.candidate_gains(query_id, idf)?;
    let mut out = BTreeMap::new();
    let mut put = |key: MetricKey, v: f64| {
        out.insert(key.to_string(), v);
    };
    let taus: Vec<Threshold> = config
        .tau_list
        .iter()
        .map(|&t| Threshold::new(t))
        .collect::<Result<_, _>>()?;
    let relevant: Vec<usize> = taus
        .iter()
        .map(|tau| candidates.iter().filter(|&&r| tau.admits(r)).count())
        .collect();
    let tau0 = config.tau_list[0];
    for &k in &config.k_list {
        if let Some(v) = ndcg_at_k(&gains, &candidates, k) {
            put(MetricKey::new(MetricFamily::Ndcg, k, tau0), v);
        }
        for (tau, &r_tau) in taus.iter().zip(&relevant) {
            let t = tau.value();
            put(MetricKey::new(MetricFamily::Precision, k, t), precision_at_k(&gains, *tau, k));
            put(
                MetricKey::new(MetricFamily::Map, k, t),
                map_at_k(&gains, *tau, k, config.map_normalization, r_tau),
            );
            put(MetricKey::new(MetricFamily::HitRate, k, t), hitrate_at_k(&gains, *tau, k));
        }
        let ov = overlap_at_k(query.keywords(), neighbors.iter().copied(), idf, k);
        put(MetricKey::new(MetricFamily::OverlapCount, k, tau0), ov.count as f64);
        put(MetricKey::new(MetricFamily::WeightedOverlap, k, tau0), ov.weighted);
    }
    for (tau, &r_tau) in taus.iter().zip(&relevant) {
        put(
            MetricKey::new(MetricFamily::Rbp, RBP_DEPTH, tau.value()),
            rbp_at_10(&gains, *tau, config.rbp_p)?,
        );
        put(MetricKey::new(MetricFamily::RelevantCount, 0, tau.value()), r_tau as f64);
    }
    Ok(out)
}

/// Scores every query of `run` and aggregates. Per-query work runs in
/// parallel; the report does not depend on the worker count.
pub fn evaluate(
    run: &RankedRun,
    corpus: &Corpus,
    idf: &IdfTable,
    config: &EvalConfig,
) -> Result<MetricsReport, MetricsError> {
    let config = config.clone().validated()?;
    let index = KeywordIndex::new(corpus);
    let max_k = config.max_k().max(RBP_DEPTH);
    let per_query: PerQuery = run
        .results
        .par_iter()
        .map(|(q, neighbors)| {
            let kws = neighbors
                .iter()
                .take(max_k)
                .map(|n| Ok(lookup(corpus, &n.id)?.keywords()))
                .collect::<Result<Vec<_>, MetricsError>>()?;
            Ok((q.clone(), query_metrics(q, &kws, corpus, &index, idf, &config)?))
        })
        .collect::<Result<_, MetricsError>>()?;

    let names: Vec<String> = config.metric_keys().iter().map(ToString::to_string).collect();
    let aggregates = aggregate(&per_query, &names);
    let exclusions = config
        .k_list
        .iter()
        .map(|&k| {
            let key = MetricKey::new(MetricFamily::Ndcg, k, 0.5).to_string();
            let excluded = per_query
                .iter()
                .filter(|(_, m)| !m.contains_key(&key))
                .map(|(q, _)| q.clone())
                .collect();
            (key, excluded)
        })
        .collect();
    Ok(MetricsReport {
        system: run.system_name.clone(),
        corpus_digest: corpus.digest(),
        n_queries: per_query.len(),
        config,
        aggregates,
        per_query: Some(per_query),
        exclusions,
    })
}
