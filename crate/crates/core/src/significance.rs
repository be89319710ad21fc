//! Paired bootstrap over queries for head-to-head system comparisons.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricFamily, MetricKey, MetricsReport};

pub const DEFAULT_RESAMPLES: usize = 2000;
pub const MIN_RESAMPLES: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SignificanceError {
    #[error("no queries in common for {0}")]
    NoCommonQueries(String),
    #[error("{0} resamples requested; at least {MIN_RESAMPLES} are required")]
    TooFewResamples(usize),
    #[error("reports were computed with different configurations: {0}")]
    ConfigMismatch(String),
    #[error("report for {0} carries no per-query values")]
    NoPerQueryValues(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub metric: String,
    /// Queries present in both inputs.
    pub n_queries: usize,
    /// Queries present in only one input and therefore ignored.
    pub dropped: usize,
    pub delta_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_two_sided: f64,
    pub resamples: usize,
    pub seed: u64,
}

/// Linear-interpolation percentile of sorted data at fractional position `pos`.
fn at_position(sorted: &[f64], pos: f64) -> f64 {
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean of one resample of `diffs`, drawn with replacement from the PRNG
/// stream reserved for resample `index`.
fn resample_mean(diffs: &[f64], seed: u64, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = diffs.len();
    (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() / n as f64
}

/// Paired bootstrap of `mean(a − b)` over the queries both maps share.
///
/// The interval is the 2.5/97.5 percentile pair of resample means. The
/// two-sided p-value is `2 · min(#{m ≤ 0} + 1, #{m ≥ 0} + 1) / (B + 1)`,
/// capped at 1.
pub fn paired_bootstrap(
    metric: &str,
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, SignificanceError> {
    if resamples < MIN_RESAMPLES {
        return Err(SignificanceError::TooFewResamples(resamples));
    }
    let diffs: Vec<f64> = a
        .iter()
        .filter_map(|(q, x)| b.get(q).map(|y| x - y))
        .collect();
    if diffs.is_empty() {
        return Err(SignificanceError::NoCommonQueries(metric.to_owned()));
    }
    let dropped = a.len() + b.len() - 2 * diffs.len();
    if dropped > 0 {
        log::warn!("{metric}: {dropped} queries present in only one system were ignored");
    }
    let delta_mean = diffs.iter().sum::<f64>() / diffs.len() as f64;

    let mut means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|i| resample_mean(&diffs, seed, i))
        .collect();
    let at_or_below = means.iter().filter(|&&m| m <= 0.0).count();
    let at_or_above = means.iter().filter(|&&m| m >= 0.0).count();
    let p = 2.0 * (at_or_below.min(at_or_above) + 1) as f64 / (resamples + 1) as f64;

    means.sort_by(f64::total_cmp);
    let last = (resamples - 1) as f64;
    let low_pos = 0.025 * last;
    // mirrored so that swapping the systems mirrors the interval
    let high_pos = last - low_pos;

    Ok(BootstrapResult {
        metric: metric.to_owned(),
        n_queries: diffs.len(),
        dropped,
        delta_mean,
        ci_low: at_position(&means, low_pos),
        ci_high: at_position(&means, high_pos),
        p_two_sided: p.min(1.0),
        resamples,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// `"A – B"`.
    pub comparison: String,
    /// Threshold track the row belongs to.
    pub tau: f64,
    /// Table label such as `nDCG@10`.
    pub label: String,
    pub result: BootstrapResult,
}

/// One bootstrap per requested `(family, k)` cell and per τ of the shared
/// configuration. τ-free metrics are repeated under every τ track.
/// Excluded queries (e.g. zero-IDCG for nDCG) are absent from per-query maps,
/// so only queries scored in both reports enter a comparison.
pub fn compare_runs(
    a: &MetricsReport,
    b: &MetricsReport,
    cells: &[(MetricFamily, usize)],
    resamples: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>, SignificanceError> {
    if a.config.k_list != b.config.k_list || a.config.tau_list != b.config.tau_list {
        return Err(SignificanceError::ConfigMismatch(format!(
            "k {:?} vs {:?}, tau {:?} vs {:?}",
            a.config.k_list, b.config.k_list, a.config.tau_list, b.config.tau_list
        )));
    }
    for r in [a, b] {
        if r.per_query.is_none() {
            return Err(SignificanceError::NoPerQueryValues(r.system.clone()));
        }
    }
    let comparison = format!("{} – {}", a.system, b.system);
    let mut rows = Vec::new();
    for &tau in &a.config.tau_list {
        for &(family, k) in cells {
            let key = MetricKey::new(family, k, tau);
            let result = paired_bootstrap(
                &key.to_string(),
                &a.values(&key),
                &b.values(&key),
                resamples,
                seed,
            )?;
            rows.push(ComparisonRow {
                comparison: comparison.clone(),
                tau,
                label: key.label(),
                result,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Aggregate, EvalConfig, PerQuery};
    use approx::assert_abs_diff_eq;

    fn map(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("q{i:04}"), v))
            .collect()
    }

    fn noisy(n: usize, seed: u64, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>() + shift).collect()
    }

    #[test]
    fn identical_systems() {
        let a = map(&noisy(50, 1, 0.0));
        let r = paired_bootstrap("m", &a, &a, 2000, 7).unwrap();
        assert_eq!(r.delta_mean, 0.0);
        assert_eq!((r.ci_low, r.ci_high), (0.0, 0.0));
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn constant_difference() {
        let b = noisy(500, 3, 0.0);
        let a: Vec<f64> = b.iter().map(|x| x + 0.1).collect();
        let r = paired_bootstrap("m", &map(&a), &map(&b), 2000, 11).unwrap();
        assert_abs_diff_eq!(r.delta_mean, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ci_low, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ci_high, 0.1, epsilon = 1e-12);
        assert_eq!(r.p_two_sided, 2.0 / 2001.0);
    }

    #[test]
    fn deterministic_and_antisymmetric() {
        let a = map(&noisy(120, 5, 0.05));
        let b = map(&noisy(120, 6, 0.0));
        let r1 = paired_bootstrap("m", &a, &b, 500, 42).unwrap();
        assert_eq!(r1, paired_bootstrap("m", &a, &b, 500, 42).unwrap());
        let r2 = paired_bootstrap("m", &b, &a, 500, 42).unwrap();
        assert_eq!(r2.delta_mean, -r1.delta_mean);
        assert_abs_diff_eq!(r2.ci_low, -r1.ci_high, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.ci_high, -r1.ci_low, epsilon = 1e-12);
        assert_eq!(r2.p_two_sided, r1.p_two_sided);
        assert!(r1.ci_low <= r1.ci_high);
        assert!(r1.p_two_sided > 0.0 && r1.p_two_sided <= 1.0);
    }

    #[test]
    fn intervals_converge_with_more_resamples() {
        let a = map(&noisy(300, 8, 0.02));
        let b = map(&noisy(300, 9, 0.0));
        let small = paired_bootstrap("m", &a, &b, 1000, 1).unwrap();
        let large = paired_bootstrap("m", &a, &b, 10_000, 1).unwrap();
        assert!((small.ci_low - large.ci_low).abs() < 0.005);
        assert!((small.ci_high - large.ci_high).abs() < 0.005);
    }

    #[test]
    fn errors_and_partial_overlap() {
        let a = map(&[0.1, 0.2, 0.3]);
        assert_eq!(
            paired_bootstrap("m", &a, &a, 99, 0).unwrap_err(),
            SignificanceError::TooFewResamples(99)
        );
        let empty = BTreeMap::new();
        assert!(matches!(
            paired_bootstrap("m", &a, &empty, 100, 0),
            Err(SignificanceError::NoCommonQueries(_))
        ));
        let mut b = a.clone();
        b.remove("q0000");
        b.insert("extra".into(), 0.0);
        let r = paired_bootstrap("m", &a, &b, 100, 0).unwrap();
        assert_eq!(r.n_queries, 2);
        assert_eq!(r.dropped, 2);
    }

    #[test]
    fn resample_streams_are_independent_of_order() {
        // a resample depends only on (seed, index)
        let d = noisy(40, 2, 0.0);
        assert_eq!(resample_mean(&d, 9, 17), resample_mean(&d, 9, 17));
        assert_ne!(resample_mean(&d, 9, 17), resample_mean(&d, 9, 18));
    }

    fn report(system: &str, values: &[(&str, f64, Option<f64>)]) -> MetricsReport {
        let config = EvalConfig::default();
        let mut pq = PerQuery::new();
        for &(q, p10, ndcg) in values {
            let mut m = BTreeMap::new();
            for tau in &config.tau_list {
                m.insert(MetricKey::new(MetricFamily::Precision, 10, *tau).to_string(), p10);
                m.insert(MetricKey::new(MetricFamily::HitRate, 10, *tau).to_string(), p10.ceil());
            }
            if let Some(v) = ndcg {
                m.insert("ndcg@10".into(), v);
            }
            pq.insert(q.into(), m);
        }
        MetricsReport {
            system: system.into(),
            corpus_digest: "d".into(),
            config,
            n_queries: values.len(),
            aggregates: BTreeMap::from([("x".to_owned(), Aggregate { mean: None, n: 0 })]),
            per_query: Some(pq),
            exclusions: BTreeMap::new(),
        }
    }

    #[test]
    fn comparison_rows_per_tau() {
        let a = report("A", &[("q1", 0.5, Some(0.4)), ("q2", 0.3, None), ("q3", 0.2, Some(0.1))]);
        let b = report("B", &[("q1", 0.1, Some(0.2)), ("q2", 0.1, Some(0.3)), ("q3", 0.0, Some(0.1))]);
        let cells = [
            (MetricFamily::Ndcg, 10),
            (MetricFamily::Precision, 10),
            (MetricFamily::HitRate, 10),
        ];
        let rows = compare_runs(&a, &b, &cells, 200, 3).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].label, "nDCG@10");
        assert_eq!(rows[0].comparison, "A – B");
        // q2 excluded from nDCG in A only
        assert_eq!(rows[0].result.n_queries, 2);
        assert_eq!(rows[0].result.delta_mean, rows[3].result.delta_mean);
        assert_eq!(rows[0].result.ci_low, rows[3].result.ci_low);
        assert_eq!(rows[1].result.n_queries, 3);

        let mut other = b.clone();
        other.config.k_list = vec![10];
        assert!(matches!(
            compare_runs(&a, &other, &cells, 200, 3),
            Err(SignificanceError::ConfigMismatch(_))
        ));
    }
}
