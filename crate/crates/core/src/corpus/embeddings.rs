use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metadata::normalize_id;
use super::CorpusError;

pub const BINARY_MAGIC: &[u8; 6] = b"NGEM1\n";

/// Tolerance on the L2 norm of vectors in a normalized store.
pub(crate) const UNIT_NORM_TOL: f64 = 1e-6;

/// Id-keyed dense vectors of one fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
    normalized: bool,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::BadBinary("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
            normalized: false,
        })
    }

    /// Inserts a vector under the normalized form of `id`.
    pub fn insert(&mut self, id: &str, vector: Vec<f32>) -> Result<(), CorpusError> {
        let id = normalize_id(id);
        if id.is_empty() {
            return Err(CorpusError::Malformed {
                line: 0,
                message: "empty id".into(),
            });
        }
        if vector.len() != self.dim {
            return Err(CorpusError::DimensionMismatch {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
            return Err(CorpusError::NonFinite { id, index });
        }
        match self.vectors.entry(id) {
            Entry::Occupied(e) => Err(CorpusError::DuplicateId {
                line: 0,
                id: e.key().clone(),
            }),
            Entry::Vacant(e) => {
                e.insert(vector);
                self.normalized = false;
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// `(id, vector)` pairs in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Marks a store loaded from an already-normalized file as normalized,
    /// after checking every norm. Returns the first offending id otherwise.
    pub fn mark_normalized(mut self) -> Result<Self, String> {
        for (id, v) in &self.vectors {
            let norm = v
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(id.clone());
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub(crate) fn map_vectors<E>(
        &self,
        mut f: impl FnMut(&str, &[f32]) -> Result<Vec<f32>, E>,
    ) -> Result<BTreeMap<String, Vec<f32>>, E> {
        self.vectors
            .iter()
            .map(|(id, v)| Ok((id.clone(), f(id, v)?)))
            .collect()
    }

    pub(crate) fn from_normalized(dim: usize, vectors: BTreeMap<String, Vec<f32>>) -> Self {
        Self {
            dim,
            vectors,
            normalized: true,
        }
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: String,
    vector: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct JsonRowOut<'a> {
    id: &'a str,
    vector: &'a [f32],
}

/// Rewrites bare `NaN`, `Infinity` and `-Infinity` tokens (as emitted by
/// Python's `json.dumps`) to `null` outside string literals.
fn nonfinite_tokens_to_null(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push_str("null");
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

/// Reads the `{"id": .., "vector": [..]}` JSONL form.
pub fn read_embeddings_jsonl<R: BufRead>(
    reader: R,
    expect_dim: Option<usize>,
) -> Result<EmbeddingStore, CorpusError> {
    let mut store: Option<EmbeddingStore> = expect_dim.map(EmbeddingStore::new).transpose()?;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: "<embeddings>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line)
            .or_else(|_| serde_json::from_str(&nonfinite_tokens_to_null(&line)))
            .map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let mut vector = Vec::with_capacity(row.vector.len());
        for (index, x) in row.vector.iter().enumerate() {
            let x = x.map(|x| x as f32).filter(|x| x.is_finite());
            match x {
                Some(x) => vector.push(x),
                None => {
                    return Err(CorpusError::NonFinite {
                        id: normalize_id(&row.id),
                        index,
                    })
                }
            }
        }
        let store = match &mut store {
            Some(s) => s,
            None => store.insert(EmbeddingStore::new(vector.len()).map_err(|_| {
                CorpusError::Malformed {
                    line: line_no,
                    message: "empty vector".into(),
                }
            })?),
        };
        store.insert(&row.id, vector).map_err(|e| match e {
            CorpusError::DuplicateId { id, .. } => CorpusError::DuplicateId { line: line_no, id },
            other => other,
        })?;
    }
    store.ok_or(CorpusError::UnknownDimension)
}

pub fn write_embeddings_jsonl<W: Write>(store: &EmbeddingStore, mut w: W) -> std::io::Result<()> {
    for (id, vector) in store.iter() {
        serde_json::to_writer(&mut w, &JsonRowOut { id, vector })?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn bad(msg: impl Into<String>) -> CorpusError {
    CorpusError::BadBinary(msg.into())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), CorpusError> {
    r.read_exact(buf)
        .map_err(|e| bad(format!("truncated while reading {what}: {e}")))
}

fn parse_header(line: &str) -> Result<(usize, usize), CorpusError> {
    let mut dim = None;
    let mut count = None;
    for field in line.split_whitespace() {
        match field.split_once('=') {
            Some(("dim", v)) => dim = v.parse().ok(),
            Some(("count", v)) => count = v.parse().ok(),
            _ => return Err(bad(format!("unexpected header field {field:?}"))),
        }
    }
    match (dim, count) {
        (Some(d), Some(n)) => Ok((d, n)),
        _ => Err(bad(format!("bad header line {line:?}"))),
    }
}

/// Reads the binary form. The magic bytes must already be present at the
/// start of `reader`.
pub fn read_embeddings_binary<R: BufRead>(
    mut reader: R,
    expect_dim: Option<usize>,
) -> Result<EmbeddingStore, CorpusError> {
    let mut magic = [0u8; 6];
    read_exact_or(&mut reader, &mut magic, "magic")?;
    if &magic != BINARY_MAGIC {
        return Err(bad("missing NGEM1 magic"));
    }
    let mut header = Vec::new();
    reader
        .read_until(b'\n', &mut header)
        .map_err(|e| bad(e.to_string()))?;
    if header.pop() != Some(b'\n') {
        return Err(bad("unterminated header line"));
    }
    let header = std::str::from_utf8(&header).map_err(|_| bad("header is not ASCII"))?;
    let (dim, count) = parse_header(header)?;
    if let Some(expected) = expect_dim {
        if expected != dim {
            return Err(CorpusError::DimensionMismatch {
                id: "<header>".into(),
                expected,
                found: dim,
            });
        }
    }
    let mut store = EmbeddingStore::new(dim)?;
    let mut row = vec![0u8; dim * 4];
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact_or(&mut reader, &mut len, "id length")?;
        let mut id = vec![0u8; usize::from(u16::from_le_bytes(len))];
        read_exact_or(&mut reader, &mut id, "id")?;
        let id = String::from_utf8(id).map_err(|_| bad("id is not UTF-8"))?;
        read_exact_or(&mut reader, &mut row, "vector")?;
        let vector = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(&id, vector)?;
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(store)
}

/// Writes the binary form, records in ascending id order.
pub fn write_embeddings_binary<W: Write>(store: &EmbeddingStore, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(BINARY_MAGIC)?;
    writeln!(w, "dim={} count={}", store.dim(), store.len())?;
    for (id, vector) in store.iter() {
        let len = u16::try_from(id.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "id longer than 65535 bytes")
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for x in vector {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Loads an embedding file, detecting the binary form by its magic bytes and
/// falling back to JSONL.
pub fn load_embeddings(
    path: &Path,
    expect_dim: Option<usize>,
) -> Result<EmbeddingStore, CorpusError> {
    let io_err = |e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let is_binary = reader.fill_buf().map_err(io_err)?.starts_with(BINARY_MAGIC);
    let store = if is_binary {
        read_embeddings_binary(reader, expect_dim)?
    } else {
        read_embeddings_jsonl(reader, expect_dim)?
    };
    match expect_dim {
        Some(expected) if expected != store.dim() => Err(CorpusError::DimensionMismatch {
            id: "<file>".into(),
            expected,
            found: store.dim(),
        }),
        _ => Ok(store),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jsonl_dimension_from_first_row() {
        let text = "{\"id\":\"a\",\"vector\":[1,2,3,4]}\n{\"id\":\"b\",\"vector\":[0,0,0,1]}\n";
        let s = read_embeddings_jsonl(text.as_bytes(), None).unwrap();
        assert_eq!(s.dim(), 4);
        assert_eq!(s.len(), 2);
        assert!(!s.is_normalized());
    }

    #[test]
    fn jsonl_nan_names_the_id() {
        let text = "{\"id\":\"ok\",\"vector\":[1,2]}\n{\"id\":\"bad NaN id\",\"vector\":[1,NaN]}\n";
        match read_embeddings_jsonl(text.as_bytes(), None) {
            Err(CorpusError::NonFinite { id, index }) => {
                assert_eq!(id, "bad NaN id");
                assert_eq!(index, 1);
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
        let overflow = "{\"id\":\"big\",\"vector\":[1e300]}";
        assert!(matches!(
            read_embeddings_jsonl(overflow.as_bytes(), None),
            Err(CorpusError::NonFinite { .. })
        ));
    }

    #[test]
    fn jsonl_dimension_mismatch_and_duplicates() {
        let text = "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1,2,3]}\n";
        assert!(matches!(
            read_embeddings_jsonl(text.as_bytes(), None),
            Err(CorpusError::DimensionMismatch { expected: 2, found: 3, .. })
        ));
        let text = "{\"id\":\"a\",\"vector\":[1,2]}\n";
        assert!(matches!(
            read_embeddings_jsonl(text.as_bytes(), Some(3)),
            Err(CorpusError::DimensionMismatch { expected: 3, found: 2, .. })
        ));
        let text = "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"a\",\"vector\":[1,2]}\n";
        assert!(matches!(
            read_embeddings_jsonl(text.as_bytes(), None),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn nan_sanitizer_leaves_strings_alone() {
        assert_eq!(
            nonfinite_tokens_to_null(r#"{"id":"NaN \"Infinity\"","vector":[NaN,-Infinity,Infinity,1]}"#),
            r#"{"id":"NaN \"Infinity\"","vector":[null,null,null,1]}"#
        );
    }

    #[test]
    fn binary_known_bytes() {
        // Two rows of dimension 3072, written by hand.
        let dim = 3072;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"NGEM1\ndim=3072 count=2\n");
        for (id, base) in [("a", 0.5f32), ("bb", -1.25f32)] {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            for i in 0..dim {
                bytes.extend_from_slice(&(base * i as f32).to_le_bytes());
            }
        }
        let s = read_embeddings_binary(bytes.as_slice(), None).unwrap();
        assert_eq!(s.dim(), 3072);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("bb").unwrap()[3].to_bits(), (-3.75f32).to_bits());
        let mut out = Vec::new();
        write_embeddings_binary(&s, &mut out).unwrap();
        assert_eq!(out, bytes);
    }

    #[test]
    fn binary_rejects_truncation_and_trailing_bytes() {
        let mut bytes = b"NGEM1\ndim=2 count=1\n".to_vec();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'a');
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(read_embeddings_binary(bytes.as_slice(), None).is_err());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        assert!(read_embeddings_binary(bytes.as_slice(), None).is_ok());
        bytes.push(0);
        assert!(read_embeddings_binary(bytes.as_slice(), None).is_err());
    }

    #[test]
    fn load_detects_format() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = EmbeddingStore::new(2).unwrap();
        s.insert("x", vec![0.25, -7.5]).unwrap();
        let bin = dir.path().join("e.ngem");
        write_embeddings_binary(&s, File::create(&bin).unwrap()).unwrap();
        let json = dir.path().join("e.jsonl");
        write_embeddings_jsonl(&s, File::create(&json).unwrap()).unwrap();
        assert_eq!(load_embeddings(&bin, Some(2)).unwrap(), s);
        assert_eq!(load_embeddings(&json, None).unwrap(), s);
        assert!(load_embeddings(&bin, Some(3)).is_err());
    }

    #[test]
    fn mark_normalized_checks_norms() {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.insert("u", vec![0.6, 0.8]).unwrap();
        assert!(s.clone().mark_normalized().unwrap().is_normalized());
        s.insert("v", vec![1.0, 1.0]).unwrap();
        assert_eq!(s.mark_normalized().unwrap_err(), "v");
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            rows in proptest::collection::btree_map("[a-zé/ .0-9]{1,12}", proptest::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 5), 0..20)
        ) {
            let mut s = EmbeddingStore::new(5).unwrap();
            for (id, v) in &rows {
                // ids that collapse to the same normalized form are skipped
                let _ = s.insert(id, v.clone());
            }
            let mut bytes = Vec::new();
            write_embeddings_binary(&s, &mut bytes).unwrap();
            let back = read_embeddings_binary(bytes.as_slice(), None).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for ((ia, va), (ib, vb)) in s.iter().zip(back.iter()) {
                prop_assert_eq!(ia, ib);
                let bits_a: Vec<u32> = va.iter().map(|x| x.to_bits()).collect();
                let bits_b: Vec<u32> = vb.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
