//! IDF weights over keyworded documents and the IDF-weighted Jaccard gain.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::corpus::Corpus;

#[derive(Debug, Error, PartialEq)]
pub enum RelevanceError {
    #[error("corpus has no keyworded documents")]
    NoKeywordedDocuments,
    #[error("threshold {0} outside the open interval (0, 1)")]
    ThresholdOutOfRange(f64),
    #[error("gain {0} outside [0, 1]")]
    GainOutOfRange(f64),
    #[error("log base {0} must be positive and different from 1")]
    BadLogBase(f64),
    #[error("term {0:?} is not in the IDF table")]
    UnknownTerm(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdfEntry {
    pub df: usize,
    pub idf: f64,
}

/// Document frequencies and `log(N / df)` weights, where `N` counts documents
/// with at least one keyword. Natural log unless built with another base.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    n_keyworded: usize,
    entries: BTreeMap<String, IdfEntry>,
    ln_base: f64,
}

impl IdfTable {
    pub fn n_keyworded(&self) -> usize {
        self.n_keyworded
    }

    pub fn get(&self, term: &str) -> Option<&IdfEntry> {
        self.entries.get(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Terms in ascending order with their entries.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &IdfEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// IDF of `term`. Terms missing from the table are treated as maximally
    /// rare (`df = 1`).
    pub fn idf(&self, term: &str) -> f64 {
        self.entries
            .get(term)
            .map(|e| e.idf)
            .unwrap_or_else(|| self.unseen_idf())
    }

    pub fn unseen_idf(&self) -> f64 {
        (self.n_keyworded as f64).ln() / self.ln_base
    }

    /// Like [`IdfTable::idf`] but unknown terms are an error.
    pub fn idf_strict(&self, term: &str) -> Result<f64, RelevanceError> {
        self.entries
            .get(term)
            .map(|e| e.idf)
            .ok_or_else(|| RelevanceError::UnknownTerm(term.to_owned()))
    }

    /// Writes `term,df,idf` sorted by descending idf, ties by term.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut rows: Vec<_> = self.entries.iter().collect();
        rows.sort_by(|a, b| b.1.idf.total_cmp(&a.1.idf).then_with(|| a.0.cmp(b.0)));
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["term", "df", "idf"])?;
        for (term, e) in rows {
            out.write_record([term.as_str(), &e.df.to_string(), &e.idf.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// IDF with natural log.
pub fn compute_idf(corpus: &Corpus) -> Result<IdfTable, RelevanceError> {
    compute_idf_with_base(corpus, std::f64::consts::E)
}

/// IDF with an arbitrary log base. Only [`crate::metrics`]' weighted overlap
/// depends on the base; every other quantity is invariant to it.
pub fn compute_idf_with_base(corpus: &Corpus, base: f64) -> Result<IdfTable, RelevanceError> {
    if !(base > 0.0 && base != 1.0 && base.is_finite()) {
        return Err(RelevanceError::BadLogBase(base));
    }
    let ln_base = if base == std::f64::consts::E { 1.0 } else { base.ln() };
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for record in corpus.keyworded() {
        n += 1;
        for term in record.keywords() {
            *df.entry(term.clone()).or_default() += 1;
        }
    }
    if n == 0 {
        return Err(RelevanceError::NoKeywordedDocuments);
    }
    let entries = df
        .into_iter()
        .map(|(term, df)| {
            let idf = if df == n {
                0.0
            } else {
                (n as f64 / df as f64).ln() / ln_base
            };
            (term, IdfEntry { df, idf })
        })
        .collect();
    Ok(IdfTable {
        n_keyworded: n,
        entries,
        ln_base,
    })
}

/// Graded relevance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct GradedGain(f64);

impl GradedGain {
    pub const ZERO: GradedGain = GradedGain(0.0);
    pub const ONE: GradedGain = GradedGain(1.0);

    pub fn new(value: f64) -> Result<Self, RelevanceError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(RelevanceError::GainOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Absolute slack on threshold comparisons.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A binarization threshold in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(tau: f64) -> Result<Self, RelevanceError> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(RelevanceError::ThresholdOutOfRange(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Inclusive comparison: `r >= tau` is relevant. Gains are ratios of
    /// floating sums, so a gain whose exact value equals `tau` can land one
    /// ulp below it; anything within [`TIE_TOLERANCE`] counts as a tie.
    pub fn admits(self, r: f64) -> bool {
        r >= self.0 - TIE_TOLERANCE
    }
}

/// `1` when `r >= tau`, else `0`.
pub fn binarize(r: GradedGain, tau: f64) -> Result<u8, RelevanceError> {
    Ok(u8::from(Threshold::new(tau)?.admits(r.value())))
}

fn sorted_terms<S: AsRef<str>>(terms: &[S]) -> Vec<&str> {
    let mut v: Vec<&str> = terms.iter().map(AsRef::as_ref).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Walks two sorted term lists, calling `f(term, in_a, in_b)` once per term of
/// the union in ascending order.
fn merge_walk<'a>(a: &[&'a str], b: &[&'a str], mut f: impl FnMut(&'a str, bool, bool)) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ord = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.cmp(y),
            (Some(_), None) => Ordering::Less,
            _ => Ordering::Greater,
        };
        match ord {
            Ordering::Less => {
                f(a[i], true, false);
                i += 1;
            }
            Ordering::Greater => {
                f(b[j], false, true);
                j += 1;
            }
            Ordering::Equal => {
                f(a[i], true, true);
                i += 1;
                j += 1;
            }
        }
    }
}

fn weighted_jaccard_with<S: AsRef<str>, E>(
    a: &[S],
    b: &[S],
    mut weight: impl FnMut(&str) -> Result<f64, E>,
) -> Result<GradedGain, E> {
    let (a, b) = (sorted_terms(a), sorted_terms(b));
    let (mut only_a, mut only_b, mut both) = (0.0f64, 0.0f64, 0.0f64);
    let mut err = None;
    merge_walk(&a, &b, |term, in_a, in_b| {
        if err.is_some() {
            return;
        }
        match weight(term) {
            Ok(w) => match (in_a, in_b) {
                (true, true) => both += w,
                (true, false) => only_a += w,
                _ => only_b += w,
            },
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    // |A| + |B| - |A∩B| == both + only_a + only_b; grouping the one-sided
    // sums keeps the value symmetric in (a, b) and exactly 1 when a == b.
    let denom = both + (only_a + only_b);
    if denom <= 0.0 {
        return Ok(GradedGain::ZERO);
    }
    Ok(GradedGain((both / denom).clamp(0.0, 1.0)))
}

/// IDF-weighted Jaccard similarity of two keyword sets. Returns 0 when both
/// weighted sums vanish.
pub fn weighted_jaccard<S: AsRef<str>>(a: &[S], b: &[S], idf: &IdfTable) -> GradedGain {
    weighted_jaccard_with::<S, std::convert::Infallible>(a, b, |t| Ok(idf.idf(t)))
        .unwrap_or_else(|e| match e {})
}

/// [`weighted_jaccard`] that rejects terms absent from `idf`.
pub fn weighted_jaccard_strict<S: AsRef<str>>(
    a: &[S],
    b: &[S],
    idf: &IdfTable,
) -> Result<GradedGain, RelevanceError> {
    weighted_jaccard_with(a, b, |t| idf.idf_strict(t))
}

/// Terms present in both sets, ascending.
pub fn shared_terms<'a, S: AsRef<str>>(a: &'a [S], b: &'a [S]) -> Vec<&'a str> {
    let (a, b) = (sorted_terms(a), sorted_terms(b));
    let mut out = Vec::new();
    merge_walk(&a, &b, |t, in_a, in_b| {
        if in_a && in_b {
            out.push(t);
        }
    });
    out
}
