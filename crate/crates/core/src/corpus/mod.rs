//! Document metadata and embedding ingestion.
//!
//! Everything downstream consumes the types defined here: [`Corpus`] holds the
//! normalized keyword metadata, [`EmbeddingStore`] holds one system's vectors.

mod embeddings;
mod metadata;

pub use embeddings::{
    load_embeddings, read_embeddings_binary, read_embeddings_jsonl, write_embeddings_binary,
    write_embeddings_jsonl, EmbeddingStore, BINARY_MAGIC,
};
pub use metadata::{
    load_metadata, normalize_id, normalize_keyword, parse_metadata, write_metadata_jsonl, Corpus,
    DocumentRecord, Provenance,
};

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unparseable date {value:?}")]
    BadDate { line: usize, value: String },
    #[error("id {id:?}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("id {id:?}: non-finite component at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("embedding file declares no rows and no dimension")]
    UnknownDimension,
    #[error("binary embedding file: {0}")]
    BadBinary(String),
}

/// Ids present in every store and in the corpus, ascending.
///
/// An empty `stores` slice yields an empty result.
pub fn intersect_ids(stores: &[&EmbeddingStore], corpus: &Corpus) -> Vec<String> {
    let Some((first, rest)) = stores.split_first() else {
        return Vec::new();
    };
    let ids: BTreeSet<&str> = first
        .ids()
        .filter(|id| corpus.contains(id) && rest.iter().all(|s| s.contains(id)))
        .collect();
    ids.into_iter().map(str::to_owned).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn store(ids: &[&str]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2).unwrap();
        for id in ids {
            s.insert(id, vec![1.0, 0.0]).unwrap();
        }
        s
    }

    fn corpus(ids: &[&str]) -> Corpus {
        let date = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let records = ids
            .iter()
            .map(|id| DocumentRecord::new(id, date, Vec::<String>::new()))
            .collect();
        Corpus::from_records(records, Provenance::in_memory()).unwrap()
    }

    #[test]
    fn intersection_of_two_stores() {
        let a = store(&["1", "2", "3"]);
        let b = store(&["2", "3", "4"]);
        let c = corpus(&["1", "2", "3", "4", "5"]);
        assert_eq!(intersect_ids(&[&a, &b], &c), vec!["2", "3"]);
    }

    #[test]
    fn single_store_intersects_with_corpus() {
        let a = store(&["1", "2", "9"]);
        let c = corpus(&["1", "2", "3"]);
        assert_eq!(intersect_ids(&[&a], &c), vec!["1", "2"]);
    }

    #[test]
    fn disjoint_stores_give_empty() {
        let a = store(&["1"]);
        let b = store(&["2"]);
        let c = corpus(&["1", "2"]);
        assert!(intersect_ids(&[&a, &b], &c).is_empty());
        assert!(intersect_ids(&[], &c).is_empty());
    }
}
