//! Seeded synthetic corpora for demos and tests.
//!
//! Documents belong to latent topics. Keywords are drawn mostly from the
//! topic's own pool and tagging gets heavier in later years. Each simulated
//! embedding system sees the same latent signal plus its own amount of noise,
//! so a low-noise system should beat a high-noise one on every metric.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, DocumentRecord, EmbeddingStore, Provenance};
use crate::pooling::{chunk, PoolingError, WindowMatrix, WindowStates, WINDOW_TOKENS};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub dim: usize,
    pub n_topics: usize,
    pub terms_per_topic: usize,
    pub shared_terms: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// Fraction of documents with no keywords at all.
    pub untagged_rate: f64,
    /// System name and its noise scale.
    pub systems: Vec<(String, f64)>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 200,
            dim: 32,
            n_topics: 8,
            terms_per_topic: 12,
            shared_terms: 20,
            first_year: 2005,
            last_year: 2020,
            untagged_rate: 0.05,
            systems: vec![("low_noise".into(), 0.35), ("high_noise".into(), 1.4)],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    /// Raw (unnormalized) vectors per system.
    pub systems: BTreeMap<String, EmbeddingStore>,
    /// Noise-free latent vector per document, used to derive hidden states.
    pub latent: EmbeddingStore,
}

fn uniform_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData, SyntheticError> {
    if cfg.n_docs == 0 || cfg.dim == 0 || cfg.n_topics == 0 || cfg.terms_per_topic == 0 {
        return Err(SyntheticError::Config("sizes must be positive".into()));
    }
    if cfg.last_year < cfg.first_year {
        return Err(SyntheticError::Config("last_year precedes first_year".into()));
    }
    if !(0.0..1.0).contains(&cfg.untagged_rate) {
        return Err(SyntheticError::Config("untagged_rate must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let topic_terms: Vec<Vec<String>> = (0..cfg.n_topics)
        .map(|t| (0..cfg.terms_per_topic).map(|i| format!("topic{t:02} term{i:02}")).collect())
        .collect();
    let shared: Vec<String> = (0..cfg.shared_terms).map(|i| format!("general {i:02}")).collect();
    let mut term_vec: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for term in topic_terms.iter().flatten().chain(&shared) {
        let v = uniform_vec(&mut rng, cfg.dim);
        term_vec.insert(term.clone(), v);
    }
    let topic_vec: Vec<Vec<f64>> = (0..cfg.n_topics).map(|_| uniform_vec(&mut rng, cfg.dim)).collect();

    let span = (cfg.last_year - cfg.first_year).max(1) as f64;
    let mut records = Vec::with_capacity(cfg.n_docs);
    let mut latent = EmbeddingStore::new(cfg.dim)?;
    for d in 0..cfg.n_docs {
        let id = format!("doc-{d:04}");
        let topic = rng.gen_range(0..cfg.n_topics);
        let year = rng.gen_range(cfg.first_year..=cfg.last_year);
        let date = NaiveDate::from_ymd_opt(year, rng.gen_range(1..=12), rng.gen_range(1..=28))
            .expect("day <= 28 is always valid");
        // later years carry more tags
        let max_k = 2 + (6.0 * f64::from(year - cfg.first_year) / span).round() as usize;
        let k = if rng.gen_bool(cfg.untagged_rate) {
            0
        } else {
            rng.gen_range(1..=max_k)
        };
        let mut keywords: Vec<String> = Vec::new();
        let mut guard = 0;
        while keywords.len() < k && guard < 100 {
            guard += 1;
            let term = if shared.is_empty() || rng.gen_bool(0.8) {
                // skewed toward the head of the topic pool
                let u: f64 = rng.gen();
                let pool = &topic_terms[topic];
                &pool[((u * u) * pool.len() as f64) as usize]
            } else {
                &shared[rng.gen_range(0..shared.len())]
            };
            if !keywords.contains(term) {
                keywords.push(term.clone());
            }
        }

        let mut signal = topic_vec[topic].clone();
        for term in &keywords {
            for (s, t) in signal.iter_mut().zip(&term_vec[term]) {
                *s += t / (keywords.len() as f64).sqrt();
            }
        }
        latent.insert(&id, signal.iter().map(|&x| x as f32).collect())?;
        let chars = rng.gen_range(800..40_000);
        records.push(DocumentRecord::new(&id, date, keywords).with_char_count(chars));
    }

    let mut systems = BTreeMap::new();
    for (name, noise) in &cfg.systems {
        let mut store = EmbeddingStore::new(cfg.dim)?;
        for (id, v) in latent.iter() {
            let noisy: Vec<f32> = v
                .iter()
                .map(|&x| (f64::from(x) + noise * rng.gen_range(-1.0..1.0)) as f32)
                .collect();
            store.insert(id, noisy)?;
        }
        systems.insert(name.clone(), store);
    }

    let corpus = Corpus::from_records(
        records,
        Provenance {
            source: format!("synthetic(seed={})", cfg.seed),
            ingested_at: std::time::UNIX_EPOCH,
        },
    )?;
    Ok(SyntheticData {
        corpus,
        systems,
        latent,
    })
}

/// Per-window hidden states for every document in `latent`: a random token
/// length, the stride-256 window layout, and a few noisy token rows per
/// window centred on the document's latent vector.
pub fn hidden_states(
    latent: &EmbeddingStore,
    rows_per_window: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<WindowStates>, SyntheticError> {
    if rows_per_window == 0 {
        return Err(SyntheticError::Config("rows_per_window must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(latent.len());
    for (id, v) in latent.iter() {
        let tokens = rng.gen_range(200..1600);
        let spans = chunk(tokens, WINDOW_TOKENS, 256)?;
        let mut windows = Vec::with_capacity(spans.len());
        for _ in &spans {
            let data: Vec<f32> = (0..rows_per_window)
                .flat_map(|_| v.iter().map(|&x| f64::from(x) + noise * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
                .map(|x| x as f32)
                .collect();
            windows.push(WindowMatrix::new(rows_per_window, latent.dim(), data)?);
        }
        out.push(WindowStates {
            doc_id: id.to_owned(),
            windows,
        });
    }
    Ok(out)
}

/// A corpus engineered so that every one of the 18 sampling strata holds
/// exactly `per_stratum` documents.
///
/// Documents tagged from a small shared pool have low keyword IDF, documents
/// tagged from a large pool of near-unique terms have high IDF, so the median
/// rarity split falls cleanly between them. Three distinct years give three
/// equal year bins.
pub fn stratified_corpus(per_stratum: usize, seed: u64) -> Result<Corpus, SyntheticError> {
    if per_stratum == 0 {
        return Err(SyntheticError::Config("per_stratum must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let common: Vec<String> = (0..24).map(|i| format!("common {i:02}")).collect();
    let mut next_rare = 0usize;
    let mut records = Vec::new();
    for (kw_lo, kw_hi) in [(2usize, 3usize), (4, 7), (8, 11)] {
        for rare in [false, true] {
            for year in [2010, 2011, 2012] {
                for _ in 0..per_stratum {
                    let k = rng.gen_range(kw_lo..=kw_hi);
                    let keywords: Vec<String> = if rare {
                        (0..k)
                            .map(|_| {
                                next_rare += 1;
                                format!("rare {next_rare:06}")
                            })
                            .collect()
                    } else {
                        common.choose_multiple(&mut rng, k).cloned().collect()
                    };
                    let id = format!("s{:06}", records.len());
                    let date = NaiveDate::from_ymd_opt(year, rng.gen_range(1..=12), rng.gen_range(1..=28))
                        .expect("valid date");
                    records.push(DocumentRecord::new(&id, date, keywords));
                }
            }
        }
    }
    Ok(Corpus::from_records(records, Provenance::in_memory())?)
}

/// `n_docs` keyword sets of exactly `k` distinct tags drawn uniformly from a
/// vocabulary of `vocab` terms.
pub fn uniform_tag_sets(n_docs: usize, k: usize, vocab: usize, seed: u64) -> Vec<Vec<String>> {
    let terms: Vec<String> = (0..vocab).map(|i| format!("t{i:04}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| terms.choose_multiple(&mut rng, k.min(vocab)).cloned().collect())
        .collect()
}

/// Distinct terms used across a set of keyword lists.
pub fn vocabulary(sets: &[Vec<String>]) -> BTreeSet<&str> {
    sets.iter().flatten().map(String::as_str).collect()
}
