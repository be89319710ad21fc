//! Label-drift diagnostics: per-year keyword statistics, doc-frequency
//! entropy, and the `k² / N_eff` overlap model.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, DocumentRecord};

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("effective vocabulary must be positive, got {0}")]
    NonPositiveVocabulary(f64),
    #[error("keywords per document must be non-negative, got {0}")]
    NegativeK(f64),
    #[error("need at least two keyworded documents, got {0}")]
    TooFewDocuments(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearStats {
    pub year: i32,
    pub n_docs: usize,
    pub mean_k: f64,
    pub median_k: f64,
    pub n_unique: usize,
    pub zero_ratio: f64,
    pub entropy_bits: f64,
    pub n_eff: f64,
    /// No document of this year carries a keyword.
    pub degenerate: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Shannon entropy in bits of the distribution proportional to `counts`.
pub fn entropy_bits(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h = -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>();
    h.max(0.0)
}

fn year_stats(year: i32, docs: &[&DocumentRecord]) -> YearStats {
    let mut ks: Vec<f64> = docs.iter().map(|d| d.keywords().len() as f64).collect();
    ks.sort_by(f64::total_cmp);
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in d.keywords() {
            *df.entry(t.as_str()).or_default() += 1;
        }
    }
    let zeros = docs.iter().filter(|d| !d.is_keyworded()).count();
    let h = entropy_bits(df.values().copied());
    YearStats {
        year,
        n_docs: docs.len(),
        mean_k: ks.iter().sum::<f64>() / ks.len() as f64,
        median_k: median(&ks),
        n_unique: df.len(),
        zero_ratio: zeros as f64 / docs.len() as f64,
        entropy_bits: h,
        n_eff: h.exp2(),
        degenerate: df.is_empty(),
    }
}

/// Statistics for every publication year present, ascending.
pub fn annual_stats(corpus: &Corpus) -> Result<Vec<YearStats>, DriftError> {
    if corpus.is_empty() {
        return Err(DriftError::EmptyCorpus);
    }
    let mut by_year: BTreeMap<i32, Vec<&DocumentRecord>> = BTreeMap::new();
    for r in corpus.records() {
        by_year.entry(r.year()).or_default().push(r);
    }
    Ok(by_year
        .into_iter()
        .map(|(year, docs)| year_stats(year, &docs))
        .collect())
}

/// `(k² / N_eff, exp(−k² / N_eff))`.
pub fn overlap_model(k: f64, n_eff: f64) -> Result<(f64, f64), DriftError> {
    if n_eff.is_nan() || n_eff <= 0.0 {
        return Err(DriftError::NonPositiveVocabulary(n_eff));
    }
    if k.is_nan() || k < 0.0 {
        return Err(DriftError::NegativeK(k));
    }
    let expected = k * k / n_eff;
    Ok((expected, (-expected).exp()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapScenario {
    pub name: String,
    pub k: f64,
    pub entropy_bits: f64,
    pub n_eff: f64,
    pub expected_overlap: f64,
    pub p_zero: f64,
}

impl OverlapScenario {
    /// Scenario driven by an explicit effective vocabulary; `entropy_bits` is
    /// carried for display only.
    pub fn new(name: &str, k: f64, entropy_bits: f64, n_eff: f64) -> Result<Self, DriftError> {
        let (expected_overlap, p_zero) = overlap_model(k, n_eff)?;
        Ok(Self {
            name: name.to_owned(),
            k,
            entropy_bits,
            n_eff,
            expected_overlap,
            p_zero,
        })
    }

    pub fn from_entropy(name: &str, k: f64, entropy_bits: f64) -> Result<Self, DriftError> {
        Self::new(name, k, entropy_bits, entropy_bits.exp2())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The three standard scenarios derived from a corpus: *typical* (median
/// keyword count, median annual entropy), *richer year* (upper-quartile
/// annual entropy) and *aggressive tagging* (75th-percentile keyword count at
/// the typical entropy). Keyword counts are taken over keyworded documents;
/// degenerate years are ignored for entropy.
pub fn corpus_scenarios(corpus: &Corpus, stats: &[YearStats]) -> Result<Vec<OverlapScenario>, DriftError> {
    let mut ks: Vec<f64> = corpus.keyworded().map(|r| r.keywords().len() as f64).collect();
    let mut hs: Vec<f64> = stats.iter().filter(|s| !s.degenerate).map(|s| s.entropy_bits).collect();
    if ks.is_empty() || hs.is_empty() {
        return Err(DriftError::TooFewDocuments(ks.len()));
    }
    ks.sort_by(f64::total_cmp);
    hs.sort_by(f64::total_cmp);
    let (k_typ, k_hi) = (median(&ks), quantile(&ks, 0.75));
    let (h_typ, h_hi) = (median(&hs), quantile(&hs, 0.75));
    Ok(vec![
        OverlapScenario::from_entropy("Typical year", k_typ, h_typ)?,
        OverlapScenario::from_entropy("Richer year", k_typ, h_hi)?,
        OverlapScenario::from_entropy("Aggressive tagging", k_hi, h_typ)?,
    ])
}

/// Monte-Carlo estimate of `(mean |A∩B|, P(|A∩B| = 0))` over random
/// unordered pairs of distinct keyworded documents.
pub fn empirical_overlap<'a>(
    docs: impl IntoIterator<Item = &'a DocumentRecord>,
    sample_pairs: usize,
    seed: u64,
) -> Result<(f64, f64), DriftError> {
    let sets: Vec<HashSet<&str>> = docs
        .into_iter()
        .filter(|d| d.is_keyworded())
        .map(|d| d.keywords().iter().map(String::as_str).collect())
        .collect();
    let n = sets.len();
    if n < 2 {
        return Err(DriftError::TooFewDocuments(n));
    }
    if sample_pairs == 0 {
        return Ok((0.0, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0usize;
    let mut zeros = 0usize;
    for _ in 0..sample_pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let shared = sets[i].intersection(&sets[j]).count();
        total += shared;
        zeros += usize::from(shared == 0);
    }
    let m = sample_pairs as f64;
    Ok((total as f64 / m, zeros as f64 / m))
}

pub fn write_stats_csv<W: Write>(stats: &[YearStats], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "year", "n_docs", "mean_k", "median_k", "n_unique", "zero_ratio", "entropy_bits", "n_eff",
    ])?;
    for s in stats {
        out.write_record([
            s.year.to_string(),
            s.n_docs.to_string(),
            format!("{:.4}", s.mean_k),
            format!("{:.1}", s.median_k),
            s.n_unique.to_string(),
            format!("{:.4}", s.zero_ratio),
            format!("{:.4}", s.entropy_bits),
            format!("{:.2}", s.n_eff),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_scenarios_csv<W: Write>(scenarios: &[OverlapScenario], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["Scenario", "k", "H", "N_eff", "E", "P_zero"])?;
    for s in scenarios {
        out.write_record([
            s.name.clone(),
            format!("{}", s.k),
            format!("{:.1}", s.entropy_bits),
            format!("{:.0}", s.n_eff),
            format!("{:.3}", s.expected_overlap),
            format!("{:.2}", s.p_zero),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn doc(id: &str, year: i32, kws: &[&str]) -> DocumentRecord {
        DocumentRecord::new(id, NaiveDate::from_ymd_opt(year, 1, 15).unwrap(), kws.iter())
    }

    fn corpus(records: Vec<DocumentRecord>) -> Corpus {
        Corpus::from_records(records, Provenance::in_memory()).unwrap()
    }

    #[test]
    fn degenerate_year_has_zero_entropy() {
        let c = corpus(vec![doc("a", 2001, &["x"]), doc("b", 2001, &["x"]), doc("c", 2001, &["x"])]);
        let s = &annual_stats(&c).unwrap()[0];
        assert_eq!(s.entropy_bits, 0.0);
        assert_eq!(s.n_eff, 1.0);
        assert_eq!(s.n_unique, 1);
    }

    #[test]
    fn uniform_year_has_log_m_entropy() {
        let c = corpus(vec![doc("a", 2001, &["x", "y"]), doc("b", 2001, &["z", "w"])]);
        let s = &annual_stats(&c).unwrap()[0];
        assert_abs_diff_eq!(s.entropy_bits, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.n_eff, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_entropy_one_and_a_half_bits() {
        // df = {a: 2, b: 1, c: 1}
        let c = corpus(vec![
            doc("1", 2005, &["a", "b"]),
            doc("2", 2005, &["a", "c"]),
            doc("3", 2005, &[]),
        ]);
        let s = &annual_stats(&c).unwrap()[0];
        assert_abs_diff_eq!(s.entropy_bits, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.n_eff, 2f64.powf(1.5), epsilon = 1e-12);
        assert_abs_diff_eq!(s.n_eff, 2.828, epsilon = 1e-3);
        assert_abs_diff_eq!(s.zero_ratio, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean_k, 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s.median_k, 2.0);
        assert!(!s.degenerate);
    }

    #[test]
    fn years_split_and_flag_empty_years() {
        let c = corpus(vec![doc("a", 2001, &["x"]), doc("b", 2002, &[]), doc("c", 2002, &[])]);
        let stats = annual_stats(&c).unwrap();
        assert_eq!(stats.iter().map(|s| s.year).collect::<Vec<_>>(), [2001, 2002]);
        assert!(stats[1].degenerate);
        assert_eq!(stats[1].entropy_bits, 0.0);
        assert_eq!(stats[1].n_eff, 1.0);
        assert_eq!(stats[1].zero_ratio, 1.0);
        assert_eq!(annual_stats(&corpus(vec![])).unwrap_err(), DriftError::EmptyCorpus);
    }

    #[test]
    fn overlap_model_edge_cases() {
        assert_eq!(overlap_model(0.0, 118.0).unwrap(), (0.0, 1.0));
        assert!(overlap_model(3.0, 0.0).is_err());
        assert!(overlap_model(-1.0, 10.0).is_err());
    }

    #[test]
    fn empirical_overlap_extremes() {
        let same: Vec<_> = (0..10).map(|i| doc(&format!("s{i}"), 2000, &["a", "b", "c"])).collect();
        assert_eq!(empirical_overlap(&same, 1000, 1).unwrap(), (3.0, 0.0));
        let disjoint: Vec<_> = (0..10)
            .map(|i| {
                let t = format!("t{i}");
                doc(&format!("d{i}"), 2000, &[t.as_str()])
            })
            .collect();
        assert_eq!(empirical_overlap(&disjoint, 1000, 1).unwrap(), (0.0, 1.0));
        assert_eq!(
            empirical_overlap(&disjoint[..1], 10, 1).unwrap_err(),
            DriftError::TooFewDocuments(1)
        );
    }

    #[test]
    fn scenario_csv_layout() {
        let s = vec![OverlapScenario::new("Typical year", 3.0, 6.9, 118.0).unwrap()];
        let mut out = Vec::new();
        write_scenarios_csv(&s, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "Scenario,k,H,N_eff,E,P_zero\nTypical year,3,6.9,118,0.076,0.93\n"
        );
    }

    proptest! {
        #[test]
        fn model_consistency_and_monotonicity(k in 0.0f64..20.0, n in 1.0f64..1000.0, dk in 0.01f64..5.0, dn in 0.01f64..100.0) {
            let (e, p) = overlap_model(k, n).unwrap();
            prop_assert_eq!(p, (-e).exp());
            let (e_k, p_k) = overlap_model(k + dk, n).unwrap();
            prop_assert!(e_k > e && p_k <= p);
            let (e_n, p_n) = overlap_model(k, n + dn).unwrap();
            prop_assert!(e_n <= e && p_n >= p);
        }

        #[test]
        fn entropy_bounded_by_log_unique(counts in proptest::collection::vec(1usize..50, 1..30)) {
            let h = entropy_bits(counts.iter().copied());
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (counts.len() as f64).log2() + 1e-12);
        }
    }
}
