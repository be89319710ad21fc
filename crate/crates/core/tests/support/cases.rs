//! Seeded random corpora and stores for property checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use noisyir::corpus::{Corpus, DocumentRecord, EmbeddingStore, Provenance};
use noisyir::retrieval::l2_normalize;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub corpus: Corpus,
    pub store: EmbeddingStore,
    pub docs: BTreeMap<String, Vec<String>>,
    pub vectors: BTreeMap<String, Vec<f32>>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f32>() > 1e-3 {
            return v;
        }
    }
}

/// Up to `max_docs` documents with 0..=`max_kw` keywords from a small
/// vocabulary, plus a random store of dimension at most `max_dim`.
pub fn random_case(seed: u64, max_docs: usize, max_kw: usize, max_dim: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_docs);
    let dim = rng.gen_range(1..=max_dim);
    let vocab: Vec<String> = (0..rng.gen_range(3..12)).map(|i| format!("kw{i}")).collect();
    let date = NaiveDate::from_ymd_opt(2015, 6, 1).unwrap();
    let mut records = Vec::new();
    let mut docs = BTreeMap::new();
    let mut raw = EmbeddingStore::new(dim).unwrap();
    for i in 0..n {
        let id = format!("d{i:03}");
        let k = rng.gen_range(0..=max_kw.min(vocab.len()));
        let kws: Vec<String> = vocab.choose_multiple(&mut rng, k).cloned().collect();
        records.push(DocumentRecord::new(&id, date, &kws));
        docs.insert(id.clone(), kws);
        raw.insert(&id, unit_vector(&mut rng, dim)).unwrap();
    }
    let store = l2_normalize(&raw).unwrap();
    let vectors = store.iter().map(|(id, v)| (id.to_owned(), v.to_vec())).collect();
    Case {
        corpus: Corpus::from_records(records, Provenance::in_memory()).unwrap(),
        store,
        docs,
        vectors,
    }
}

/// A normalized store of `n` random vectors, ids in arbitrary insertion order.
pub fn random_store(seed: u64, n: usize, dim: usize) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut raw = EmbeddingStore::new(dim).unwrap();
    for i in ids {
        raw.insert(&format!("v{i:04}"), unit_vector(&mut rng, dim)).unwrap();
    }
    l2_normalize(&raw).unwrap()
}
