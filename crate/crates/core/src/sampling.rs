//! Stratified query sampling over keyword count, tag rarity and year.
//!
//! Eligible documents (two or more keywords) fall into one of 3 × 2 × 3 = 18
//! strata. A fixed budget is spread evenly over the non-empty strata, with
//! surplus from small strata handed to the most populated ones.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::relevance::IdfTable;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("no document has two or more keywords")]
    NoEligibleDocuments,
    #[error("target query count must be at least 1")]
    ZeroTarget,
    #[error("query set file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Minimum keyword count for a document to be sampled.
pub const MIN_KEYWORDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KwBin {
    TwoToThree,
    FourToSeven,
    EightPlus,
}

impl KwBin {
    pub fn of(count: usize) -> Option<Self> {
        match count {
            0 | 1 => None,
            2..=3 => Some(Self::TwoToThree),
            4..=7 => Some(Self::FourToSeven),
            _ => Some(Self::EightPlus),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::TwoToThree => "2–3",
            Self::FourToSeven => "4–7",
            Self::EightPlus => "8+",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rarity {
    Common,
    Rarer,
}

impl Rarity {
    pub fn label(self) -> &'static str {
        match self {
            Self::Common => "common",
            Self::Rarer => "rarer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub kw_bin: KwBin,
    pub rarity: Rarity,
    /// 0, 1 or 2; fewer bins exist when year quantile edges coincide.
    pub year_bin: u8,
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.kw_bin.label(),
            self.rarity.label(),
            self.year_bin
        )
    }
}

impl FromStr for KwBin {
    type Err = SamplingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::TwoToThree, Self::FourToSeven, Self::EightPlus]
            .into_iter()
            .find(|b| b.label() == s)
            .ok_or_else(|| SamplingError::Format(format!("unknown kw_bin {s:?}")))
    }
}

impl FromStr for Rarity {
    type Err = SamplingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::Common, Self::Rarer]
            .into_iter()
            .find(|b| b.label() == s)
            .ok_or_else(|| SamplingError::Format(format!("unknown rarity {s:?}")))
    }
}

/// Lower median: the element at index `(m - 1) / 2` of the sorted values.
fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Linear-interpolation quantile on sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tercile edges with duplicates dropped; may hold fewer than four edges.
fn year_edges(mut years: Vec<f64>) -> Vec<f64> {
    years.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
        .iter()
        .map(|&q| quantile(&years, q))
        .collect();
    edges.dedup();
    edges
}

/// Right-closed bins `[e0, e1], (e1, e2], (e2, e3]`.
fn year_bin(year: f64, edges: &[f64]) -> u8 {
    let bins = edges.len().saturating_sub(1);
    (1..edges.len())
        .position(|i| year <= edges[i])
        .unwrap_or(bins.saturating_sub(1)) as u8
}

/// Stratum of every eligible document.
pub fn assign_strata(
    corpus: &Corpus,
    idf: &IdfTable,
) -> Result<BTreeMap<String, StratumKey>, SamplingError> {
    let eligible: Vec<_> = corpus
        .records()
        .iter()
        .filter(|r| r.keywords().len() >= MIN_KEYWORDS)
        .collect();
    if eligible.is_empty() {
        return Err(SamplingError::NoEligibleDocuments);
    }
    let doc_rarity: Vec<f64> = eligible
        .iter()
        .map(|r| {
            let mut w: Vec<f64> = r.keywords().iter().map(|t| idf.idf(t)).collect();
            w.sort_by(f64::total_cmp);
            lower_median(&w)
        })
        .collect();
    let mut sorted = doc_rarity.clone();
    sorted.sort_by(f64::total_cmp);
    let split = lower_median(&sorted);
    let edges = year_edges(eligible.iter().map(|r| f64::from(r.year())).collect());

    Ok(eligible
        .iter()
        .zip(doc_rarity)
        .map(|(r, rarity)| {
            let key = StratumKey {
                kw_bin: KwBin::of(r.keywords().len()).expect("eligible"),
                rarity: if rarity <= split {
                    Rarity::Common
                } else {
                    Rarity::Rarer
                },
                year_bin: year_bin(f64::from(r.year()), &edges),
            };
            (r.id().to_owned(), key)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryEntry {
    pub id: String,
    pub stratum: StratumKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    /// Sorted by id.
    pub entries: Vec<QueryEntry>,
    pub seed: u64,
    pub target_n: usize,
    /// Set when the eligible pool was smaller than `target_n`.
    pub exhausted: bool,
}

impl QuerySet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts_by_stratum(&self) -> BTreeMap<StratumKey, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.stratum).or_default() += 1;
        }
        counts
    }

    /// CSV with a leading `#` comment line carrying the seed and conventions.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SamplingError> {
        writeln!(
            w,
            "# seed={} target_n={} exhausted={} rarity_median=lower rarity_ties=common",
            self.seed, self.target_n, self.exhausted
        )?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "kw_bin", "rarity", "year_bin"])?;
        for e in &self.entries {
            out.write_record([
                e.id.as_str(),
                e.stratum.kw_bin.label(),
                e.stratum.rarity.label(),
                &e.stratum.year_bin.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self, SamplingError> {
        let mut comment = String::new();
        r.read_line(&mut comment)?;
        let comment = comment
            .trim_end()
            .strip_prefix('#')
            .ok_or_else(|| SamplingError::Format("missing '#' header comment".into()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for kv in comment.split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                fields.insert(k, v);
            }
        }
        let field = |name: &str| {
            fields
                .get(name)
                .copied()
                .ok_or_else(|| SamplingError::Format(format!("header lacks {name}")))
        };
        let parse_err = |name: &str| SamplingError::Format(format!("bad {name} in header"));
        let seed = field("seed")?.parse().map_err(|_| parse_err("seed"))?;
        let target_n = field("target_n")?.parse().map_err(|_| parse_err("target_n"))?;
        let exhausted = field("exhausted")?.parse().map_err(|_| parse_err("exhausted"))?;

        let mut entries = Vec::new();
        for row in csv::Reader::from_reader(r).records() {
            let row = row?;
            if row.len() != 4 {
                return Err(SamplingError::Format(format!("expected 4 columns, got {}", row.len())));
            }
            entries.push(QueryEntry {
                id: row[0].to_owned(),
                stratum: StratumKey {
                    kw_bin: row[1].parse()?,
                    rarity: row[2].parse()?,
                    year_bin: row[3]
                        .parse()
                        .map_err(|_| SamplingError::Format(format!("bad year_bin {:?}", &row[3])))?,
                },
            });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            entries,
            seed,
            target_n,
            exhausted,
        })
    }
}

/// Per-stratum quotas: an even base share capped at each stratum's size,
/// then leftover slots handed out one at a time to strata in descending
/// population order (ties by key) until the budget or the pool runs out.
pub fn allocate(sizes: &BTreeMap<StratumKey, usize>, target_n: usize) -> BTreeMap<StratumKey, usize> {
    let nonempty: Vec<(StratumKey, usize)> = sizes
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(&k, &n)| (k, n))
        .collect();
    if nonempty.is_empty() {
        return BTreeMap::new();
    }
    let base = target_n / nonempty.len();
    let mut quota: BTreeMap<StratumKey, usize> =
        nonempty.iter().map(|&(k, n)| (k, base.min(n))).collect();
    let mut remaining = target_n - quota.values().sum::<usize>();

    let mut order = nonempty.clone();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    while remaining > 0 {
        let mut progressed = false;
        for &(key, size) in &order {
            if remaining == 0 {
                break;
            }
            let q = quota.get_mut(&key).expect("allocated above");
            if *q < size {
                *q += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

/// Draws a stratified query set; deterministic in `(corpus, idf, target_n, seed)`.
pub fn sample_queries(
    corpus: &Corpus,
    idf: &IdfTable,
    target_n: usize,
    seed: u64,
) -> Result<QuerySet, SamplingError> {
    if target_n == 0 {
        return Err(SamplingError::ZeroTarget);
    }
    let strata = assign_strata(corpus, idf)?;
    let mut members: BTreeMap<StratumKey, Vec<&str>> = BTreeMap::new();
    // `strata` iterates ids ascending, so every member list is sorted.
    for (id, key) in &strata {
        members.entry(*key).or_default().push(id);
    }
    let exhausted = strata.len() < target_n;
    if exhausted {
        log::warn!(
            "requested {target_n} queries but only {} documents are eligible; using all",
            strata.len()
        );
    }
    let sizes = members.iter().map(|(k, v)| (*k, v.len())).collect();
    let quota = allocate(&sizes, target_n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(target_n.min(strata.len()));
    for (key, mut pool) in members {
        let take = quota.get(&key).copied().unwrap_or(0);
        // partial Fisher-Yates
        for i in 0..take {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        entries.extend(pool[..take].iter().map(|id| QueryEntry {
            id: (*id).to_owned(),
            stratum: key,
        }));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(QuerySet {
        entries,
        seed,
        target_n,
        exhausted,
    })
}
