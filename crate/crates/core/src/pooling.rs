//! Sliding-window chunking and pooling of per-window hidden states into one
//! unit-length document embedding.
//!
//! No model runs here: hidden states are read from an `NGHS1` file produced
//! by whatever encoder the caller uses, with special-token rows already
//! removed.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, EmbeddingStore};

pub const HIDDEN_STATE_MAGIC: &[u8; 6] = b"NGHS1\n";
pub const WINDOW_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("stride {stride} must be in 1..={window}")]
    BadStride { stride: usize, window: usize },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("hidden-state matrix has no rows")]
    EmptyMatrix,
    #[error("document {0:?} has no windows")]
    NoWindows(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("document {0:?} pools to a zero vector")]
    ZeroNorm(String),
    #[error("attention pooling requires a head")]
    MissingHead,
    #[error("hidden-state file: {0}")]
    Format(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named stride settings for 512-token windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StridePreset {
    /// Stride 256.
    #[default]
    Generic,
    /// Stride 128, used for full-length decisions.
    FullDecision,
}

impl StridePreset {
    pub fn stride(self) -> usize {
        match self {
            Self::Generic => 256,
            Self::FullDecision => 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
}

impl TokenSequence {
    pub fn chunk(&self, window: usize, stride: usize) -> Result<Vec<Span>, PoolingError> {
        chunk(self.token_ids.len(), window, stride)
    }
}

/// Fixed-length windows over `len` tokens. Windows start every `stride`
/// tokens; when they stop short of the end, a final window is snapped to
/// `[len − window, len)`. Sequences no longer than `window` get one span.
pub fn chunk(len: usize, window: usize, stride: usize) -> Result<Vec<Span>, PoolingError> {
    if window == 0 {
        return Err(PoolingError::ZeroWindow);
    }
    if stride == 0 || stride > window {
        return Err(PoolingError::BadStride { stride, window });
    }
    if len == 0 {
        return Err(PoolingError::EmptySequence);
    }
    if len <= window {
        return Ok(vec![Span { start: 0, end: len }]);
    }
    let mut spans: Vec<Span> = (0..)
        .map(|i| i * stride)
        .take_while(|start| start + window <= len)
        .map(|start| Span { start, end: start + window })
        .collect();
    if spans.last().is_none_or(|s| s.end < len) {
        spans.push(Span { start: len - window, end: len });
    }
    Ok(spans)
}

/// Row-major `rows × dim` hidden states of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl WindowMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, PoolingError> {
        if data.len() != rows * dim {
            return Err(PoolingError::DimensionMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(PoolingError::NonFinite("hidden states".into()));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, PoolingError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(PoolingError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStates {
    pub doc_id: String,
    pub windows: Vec<WindowMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub dim: usize,
    pub w: Vec<f64>,
}

impl AttentionHead {
    pub fn new(w: Vec<f64>) -> Result<Self, PoolingError> {
        let head = Self { dim: w.len(), w };
        head.validate()?;
        Ok(head)
    }

    fn validate(&self) -> Result<(), PoolingError> {
        if self.w.len() != self.dim {
            return Err(PoolingError::DimensionMismatch {
                expected: self.dim,
                found: self.w.len(),
            });
        }
        if self.w.iter().any(|x| !x.is_finite()) {
            return Err(PoolingError::NonFinite("attention head".into()));
        }
        Ok(())
    }

    /// Parses the `{"dim": d, "w": [..]}` head file.
    pub fn from_json(text: &str) -> Result<Self, PoolingError> {
        let head: Self = serde_json::from_str(text)?;
        head.validate()?;
        Ok(head)
    }
}

/// Column-wise mean.
pub fn mean_pool(window: &WindowMatrix) -> Result<Vec<f64>, PoolingError> {
    if window.rows == 0 {
        return Err(PoolingError::EmptyMatrix);
    }
    let mut sum = vec![0.0f64; window.dim];
    for i in 0..window.rows {
        for (s, &x) in sum.iter_mut().zip(window.row(i)) {
            *s += f64::from(x);
        }
    }
    let n = window.rows as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Softmax weights `α_i ∝ exp(w · h_i)`, shifted by the max score.
pub fn attention_weights(window: &WindowMatrix, head: &AttentionHead) -> Result<Vec<f64>, PoolingError> {
    if window.rows == 0 {
        return Err(PoolingError::EmptyMatrix);
    }
    if head.w.len() != window.dim {
        return Err(PoolingError::DimensionMismatch {
            expected: window.dim,
            found: head.w.len(),
        });
    }
    let scores: Vec<f64> = (0..window.rows)
        .map(|i| {
            window
                .row(i)
                .iter()
                .zip(&head.w)
                .map(|(&h, &w)| f64::from(h) * w)
                .sum()
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `Σ α_i h_i`.
pub fn attention_pool(window: &WindowMatrix, head: &AttentionHead) -> Result<Vec<f64>, PoolingError> {
    let alpha = attention_weights(window, head)?;
    let mut out = vec![0.0f64; window.dim];
    for (i, a) in alpha.iter().enumerate() {
        for (o, &h) in out.iter_mut().zip(window.row(i)) {
            *o += a * f64::from(h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    #[default]
    Mean,
    Attention,
}

/// Average of per-window pooled vectors, L2-normalized.
pub fn doc_embedding(
    states: &WindowStates,
    mode: PoolingMode,
    head: Option<&AttentionHead>,
) -> Result<Vec<f64>, PoolingError> {
    if states.windows.is_empty() {
        return Err(PoolingError::NoWindows(states.doc_id.clone()));
    }
    let head = match (mode, head) {
        (PoolingMode::Attention, None) => return Err(PoolingError::MissingHead),
        (_, h) => h,
    };
    let dim = states.windows[0].dim;
    let mut acc = vec![0.0f64; dim];
    for w in &states.windows {
        if w.dim != dim {
            return Err(PoolingError::DimensionMismatch {
                expected: dim,
                found: w.dim,
            });
        }
        let pooled = match mode {
            PoolingMode::Mean => mean_pool(w)?,
            PoolingMode::Attention => attention_pool(w, head.expect("checked above"))?,
        };
        for (a, p) in acc.iter_mut().zip(pooled) {
            *a += p;
        }
    }
    let n = states.windows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(PoolingError::ZeroNorm(states.doc_id.clone()));
    }
    Ok(acc.into_iter().map(|x| x / norm).collect())
}

/// Pools every document into a normalized store.
pub fn pool_documents<'a>(
    docs: impl IntoIterator<Item = &'a WindowStates>,
    mode: PoolingMode,
    head: Option<&AttentionHead>,
) -> Result<EmbeddingStore, PoolingError> {
    let mut store: Option<EmbeddingStore> = None;
    for doc in docs {
        let v: Vec<f32> = doc_embedding(doc, mode, head)?
            .into_iter()
            .map(|x| x as f32)
            .collect();
        let s = match &mut store {
            Some(s) => s,
            None => store.insert(EmbeddingStore::new(v.len())?),
        };
        s.insert(&doc.doc_id, v)?;
    }
    let store = store.ok_or_else(|| PoolingError::Format("no documents to pool".into()))?;
    store
        .mark_normalized()
        .map_err(PoolingError::ZeroNorm)
}

/// Byte offsets of each document's window records within the hidden-state file.
pub type HiddenStateManifest = BTreeMap<String, Vec<u64>>;

/// Writes `NGHS1` files: a header then `[u32 rows][rows × dim f32]` records.
pub struct HiddenStateWriter<W: Write> {
    inner: W,
    dim: usize,
    offset: u64,
    manifest: HiddenStateManifest,
}

impl<W: Write> HiddenStateWriter<W> {
    pub fn new(mut inner: W, dim: usize) -> std::io::Result<Self> {
        let header = format!("dim={dim}\n");
        inner.write_all(HIDDEN_STATE_MAGIC)?;
        inner.write_all(header.as_bytes())?;
        Ok(Self {
            inner,
            dim,
            offset: (HIDDEN_STATE_MAGIC.len() + header.len()) as u64,
            manifest: BTreeMap::new(),
        })
    }

    pub fn write_window(&mut self, doc_id: &str, window: &WindowMatrix) -> Result<(), PoolingError> {
        if window.dim != self.dim {
            return Err(PoolingError::DimensionMismatch {
                expected: self.dim,
                found: window.dim,
            });
        }
        let rows = u32::try_from(window.rows).map_err(|_| PoolingError::Format("too many rows".into()))?;
        self.manifest.entry(doc_id.to_owned()).or_default().push(self.offset);
        self.inner.write_all(&rows.to_le_bytes())?;
        for x in &window.data {
            self.inner.write_all(&x.to_le_bytes())?;
        }
        self.offset += 4 + 4 * window.data.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<HiddenStateManifest> {
        self.inner.flush()?;
        Ok(self.manifest)
    }
}

/// Decodes an in-memory `NGHS1` file using its manifest. Documents come back
/// in ascending id order, windows in manifest order.
pub fn read_hidden_states(
    bytes: &[u8],
    manifest: &HiddenStateManifest,
) -> Result<Vec<WindowStates>, PoolingError> {
    let bad = |m: String| PoolingError::Format(m);
    let body = bytes
        .strip_prefix(HIDDEN_STATE_MAGIC.as_slice())
        .ok_or_else(|| bad("missing NGHS1 magic".into()))?;
    let nl = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated header".into()))?;
    let header = std::str::from_utf8(&body[..nl]).map_err(|_| bad("header is not ASCII".into()))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| bad(format!("bad header {header:?}")))?;
    let data_start = (HIDDEN_STATE_MAGIC.len() + nl + 1) as u64;

    let read_window = |offset: u64| -> Result<WindowMatrix, PoolingError> {
        if offset < data_start {
            return Err(bad(format!("offset {offset} points into the header")));
        }
        let at = usize::try_from(offset).map_err(|_| bad("offset overflow".into()))?;
        let rows_bytes = bytes
            .get(at..at + 4)
            .ok_or_else(|| bad(format!("offset {offset} past end of file")))?;
        let rows = u32::from_le_bytes(rows_bytes.try_into().expect("4 bytes")) as usize;
        let end = at + 4 + rows * dim * 4;
        let payload = bytes
            .get(at + 4..end)
            .ok_or_else(|| bad(format!("record at {offset} is truncated")))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        WindowMatrix::new(rows, dim, data)
    };

    manifest
        .iter()
        .map(|(doc_id, offsets)| {
            let windows = offsets.iter().map(|&o| read_window(o)).collect::<Result<_, _>>()?;
            Ok(WindowStates {
                doc_id: doc_id.clone(),
                windows,
            })
        })
        .collect()
}
