use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::SystemTime;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

/// Trim and collapse internal whitespace runs to a single space.
///
/// Case, diacritics and slashes are preserved: `"čl. 36/1  Listiny"` stays one
/// term, it is never split on `/`.
pub fn normalize_keyword(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Same rule as keywords; ids are otherwise kept verbatim.
pub fn normalize_id(raw: &str) -> String {
    normalize_keyword(raw)
}

/// One decision's metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    id: String,
    pub_date: NaiveDate,
    keywords: Vec<String>,
    char_count: Option<u64>,
}

impl DocumentRecord {
    /// Builds a record, normalizing the id and keywords. Keywords keep their
    /// first-occurrence order; duplicates and empty terms are dropped.
    pub fn new<S: AsRef<str>>(
        id: &str,
        pub_date: NaiveDate,
        keywords: impl IntoIterator<Item = S>,
    ) -> Self {
        let mut seen = HashSet::new();
        let keywords = keywords
            .into_iter()
            .map(|k| normalize_keyword(k.as_ref()))
            .filter(|k| !k.is_empty() && seen.insert(k.clone()))
            .collect();
        Self {
            id: normalize_id(id),
            pub_date,
            keywords,
            char_count: None,
        }
    }

    pub fn with_char_count(mut self, chars: u64) -> Self {
        self.char_count = Some(chars);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pub_date(&self) -> NaiveDate {
        self.pub_date
    }

    pub fn year(&self) -> i32 {
        self.pub_date.year()
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn char_count(&self) -> Option<u64> {
        self.char_count
    }

    pub fn is_keyworded(&self) -> bool {
        !self.keywords.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub source: String,
    pub ingested_at: SystemTime,
}

impl Provenance {
    pub fn in_memory() -> Self {
        Self {
            source: "<memory>".to_owned(),
            ingested_at: SystemTime::now(),
        }
    }
}

/// Immutable collection of records, held in ascending id order so that the
/// order of input lines never leaks into downstream results.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<DocumentRecord>,
    by_id: HashMap<String, usize>,
    provenance: Provenance,
}

impl Corpus {
    pub fn from_records(
        mut records: Vec<DocumentRecord>,
        provenance: Provenance,
    ) -> Result<Self, CorpusError> {
        for (i, r) in records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: "empty id".to_owned(),
                });
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CorpusError::DuplicateId {
                line: 0,
                id: w[0].id.clone(),
            });
        }
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Ok(Self {
            records,
            by_id,
            provenance,
        })
    }

    pub fn records(&self) -> &[DocumentRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&DocumentRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records carrying at least one keyword.
    pub fn keyworded(&self) -> impl Iterator<Item = &DocumentRecord> {
        self.records.iter().filter(|r| r.is_keyworded())
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// SHA-256 over the canonical content (ids, dates, keywords), independent
    /// of input line order and of the ingestion timestamp.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.id.as_bytes());
            h.update(b"\t");
            h.update(r.pub_date.to_string().as_bytes());
            for k in &r.keywords {
                h.update(b"\x1f");
                h.update(k.as_bytes());
            }
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    date: String,
    #[serde(default)]
    keywords: Option<Vec<String>>,
    #[serde(default)]
    char_count: Option<u64>,
}

#[derive(Serialize)]
struct RawRecordOut<'a> {
    id: &'a str,
    date: String,
    keywords: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    char_count: Option<u64>,
}

/// Writes the corpus as metadata JSONL in id order; the output parses back to
/// an identical corpus.
pub fn write_metadata_jsonl<W: Write>(corpus: &Corpus, mut w: W) -> std::io::Result<()> {
    for r in corpus.records() {
        let row = RawRecordOut {
            id: &r.id,
            date: r.pub_date.format("%Y-%m-%d").to_string(),
            keywords: &r.keywords,
            char_count: r.char_count,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Parses metadata JSONL. Blank lines are skipped; line numbers in errors are
/// 1-based physical lines.
pub fn parse_metadata<R: BufRead>(
    reader: R,
    min_chars: Option<u64>,
    provenance: Provenance,
) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: provenance.source.clone(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(raw.date.trim(), "%Y-%m-%d").map_err(|_| {
            CorpusError::BadDate {
                line: line_no,
                value: raw.date.clone(),
            }
        })?;
        let mut record = DocumentRecord::new(&raw.id, date, raw.keywords.unwrap_or_default());
        if record.id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty id".to_owned(),
            });
        }
        if seen.insert(record.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        record.char_count = raw.char_count;
        let keep = match (min_chars, record.char_count) {
            (Some(min), Some(chars)) => chars >= min,
            _ => true,
        };
        if keep {
            records.push(record);
        }
    }
    Corpus::from_records(records, provenance)
}

/// Loads a metadata JSONL file; see [`parse_metadata`].
pub fn load_metadata(path: &Path, min_chars: Option<u64>) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let provenance = Provenance {
        source: path.display().to_string(),
        ingested_at: SystemTime::now(),
    };
    parse_metadata(BufReader::new(file), min_chars, provenance)
}
