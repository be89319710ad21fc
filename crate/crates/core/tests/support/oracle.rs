//! Naive reference implementations: plain loops over full sorts and set
//! algebra, written without reusing any library code path.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// Gains within this distance of a threshold are ties (and relevant).
pub const TIE: f64 = 1e-12;

pub type Docs = BTreeMap<String, Vec<String>>;

pub fn idf(docs: &Docs) -> BTreeMap<String, f64> {
    let tagged: Vec<BTreeSet<&String>> = docs
        .values()
        .filter(|k| !k.is_empty())
        .map(|k| k.iter().collect())
        .collect();
    let n = tagged.len() as f64;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for set in &tagged {
        for t in set {
            *df.entry((*t).clone()).or_insert(0) += 1;
        }
    }
    df.into_iter().map(|(t, d)| (t, (n / d as f64).ln())).collect()
}

pub fn wjacc(a: &[String], b: &[String], idf: &BTreeMap<String, f64>) -> f64 {
    let a: BTreeSet<&String> = a.iter().collect();
    let b: BTreeSet<&String> = b.iter().collect();
    let w = |t: &&String| idf.get(*t).copied().unwrap_or(0.0);
    let num: f64 = a.intersection(&b).map(w).sum();
    let den: f64 = a.union(&b).map(w).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub ndcg: Option<f64>,
    pub precision: f64,
    pub map_topk: f64,
    pub map_rtau: f64,
    pub hit: f64,
    pub rbp: f64,
    pub overlap_count: f64,
    pub weighted_overlap: f64,
    pub r_tau: usize,
}

/// Every metric for one query whose top-`k` list is `ranked` (ids).
pub fn metrics(
    query: &str,
    ranked: &[String],
    docs: &Docs,
    idf: &BTreeMap<String, f64>,
    k: usize,
    tau: f64,
    rbp_p: f64,
) -> Reference {
    let qk = &docs[query];
    let gain = |id: &String| wjacc(qk, &docs[id], idf);
    let top: Vec<&String> = ranked.iter().take(k).collect();

    let mut dcg = 0.0;
    for (i, id) in top.iter().enumerate() {
        let rank = (i + 1) as f64;
        dcg += (2f64.powf(gain(id)) - 1.0) / (rank + 1.0).log2();
    }
    let mut all: Vec<f64> = docs.keys().filter(|d| d.as_str() != query).map(gain).collect();
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut idcg = 0.0;
    for (i, g) in all.iter().take(k).enumerate() {
        let rank = (i + 1) as f64;
        idcg += (2f64.powf(*g) - 1.0) / (rank + 1.0).log2();
    }
    let r_tau = all.iter().filter(|&&g| g >= tau - TIE).count();

    let rel: Vec<bool> = top.iter().map(|id| gain(id) >= tau - TIE).collect();
    let hits = rel.iter().filter(|&&b| b).count();
    let mut ap_sum = 0.0;
    for i in 0..rel.len() {
        if rel[i] {
            let seen = rel[..=i].iter().filter(|&&b| b).count();
            ap_sum += seen as f64 / (i + 1) as f64;
        }
    }
    let map_topk = if hits == 0 { 0.0 } else { ap_sum / hits as f64 };
    let cap = r_tau.min(k);
    let map_rtau = if hits == 0 || cap == 0 { 0.0 } else { ap_sum / cap as f64 };

    let mut rbp = 0.0;
    for (i, id) in ranked.iter().take(10).enumerate() {
        if gain(id) >= tau - TIE {
            rbp += (1.0 - rbp_p) * rbp_p.powi(i as i32);
        }
    }

    let qset: BTreeSet<&String> = qk.iter().collect();
    let mut count = 0.0;
    let mut weighted = 0.0;
    for id in &top {
        for t in docs[*id].iter().collect::<BTreeSet<_>>() {
            if qset.contains(t) {
                count += 1.0;
                weighted += idf.get(t).copied().unwrap_or(0.0);
            }
        }
    }

    Reference {
        ndcg: (idcg > 0.0).then(|| dcg / idcg),
        precision: hits as f64 / k as f64,
        map_topk,
        map_rtau,
        hit: if hits > 0 { 1.0 } else { 0.0 },
        rbp,
        overlap_count: count,
        weighted_overlap: weighted,
        r_tau,
    }
}

/// Full-sort exact search over `vectors` (already unit length), skipping the
/// query itself, ordered by score descending then id ascending.
pub fn brute_force(
    query: &str,
    vectors: &BTreeMap<String, Vec<f32>>,
    k: usize,
) -> Vec<(String, f64)> {
    let q = &vectors[query];
    let mut scored: Vec<(String, f64)> = vectors
        .iter()
        .filter(|(id, _)| id.as_str() != query)
        .map(|(id, v)| {
            let mut s = 0.0f64;
            for i in 0..q.len() {
                s += q[i] as f64 * v[i] as f64;
            }
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
