#[path = "support/cases.rs"]
mod cases;
#[path = "support/oracle.rs"]
mod oracle;

use noisyir::metrics::{evaluate, EvalConfig, MapNormalization, MetricFamily, MetricKey};
use noisyir::relevance::compute_idf;
use noisyir::retrieval::{build_index, run_queries, search};

const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

#[test]
fn idf_and_gains_match_set_algebra() {
    for seed in 0..30 {
        let case = cases::random_case(seed, 30, 6, 8);
        let ours = compute_idf(&case.corpus).unwrap();
        let reference = oracle::idf(&case.docs);
        assert_eq!(ours.len(), reference.len());
        for (t, w) in &reference {
            assert!(close(ours.idf(t), *w), "seed {seed} term {t}");
        }
        for a in case.docs.values() {
            for b in case.docs.values() {
                let g = noisyir::relevance::weighted_jaccard(a, b, &ours).value();
                assert!(close(g, oracle::wjacc(a, b, &reference)), "seed {seed}");
            }
        }
    }
}

#[test]
fn every_metric_matches_reference_loops() {
    for seed in 0..50u64 {
        let case = cases::random_case(1000 + seed, 30, 6, 8);
        let idf = compute_idf(&case.corpus);
        let Ok(idf) = idf else { continue };
        let ref_idf = oracle::idf(&case.docs);
        let index = build_index(&case.store).unwrap();
        let ids: Vec<String> = case.store.ids().map(str::to_owned).collect();
        let out = run_queries("s", &index, ids.iter().map(String::as_str), &case.store, 100).unwrap();
        for norm in [MapNormalization::TopkHits, MapNormalization::RTauCapped] {
            let config = EvalConfig {
                k_list: vec![1, 5, 10, 20],
                map_normalization: norm,
                ..EvalConfig::default()
            };
            let report = evaluate(&out.run, &case.corpus, &idf, &config).unwrap();
            let per_query = report.per_query.as_ref().unwrap();
            for (q, neighbors) in &out.run.results {
                let ranked: Vec<String> = neighbors.iter().map(|n| n.id.clone()).collect();
                let got = &per_query[q];
                for &k in &config.k_list {
                    for &tau in &config.tau_list {
                        let r = oracle::metrics(q, &ranked, &case.docs, &ref_idf, k, tau, 0.9);
                        let val = |f| got.get(&MetricKey::new(f, k, tau).to_string()).copied();
                        match r.ndcg {
                            Some(v) => assert!(close(val(MetricFamily::Ndcg).unwrap(), v), "seed {seed} ndcg"),
                            None => assert!(val(MetricFamily::Ndcg).is_none()),
                        }
                        let map = match norm {
                            MapNormalization::TopkHits => r.map_topk,
                            MapNormalization::RTauCapped => r.map_rtau,
                        };
                        for (f, want) in [
                            (MetricFamily::Precision, r.precision),
                            (MetricFamily::Map, map),
                            (MetricFamily::HitRate, r.hit),
                            (MetricFamily::Rbp, r.rbp),
                            (MetricFamily::OverlapCount, r.overlap_count),
                            (MetricFamily::WeightedOverlap, r.weighted_overlap),
                            (MetricFamily::RelevantCount, r.r_tau as f64),
                        ] {
                            let have = val(f).unwrap();
                            assert!(close(have, want), "seed {seed} q {q} {f:?} k={k} tau={tau}: {have} vs {want}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn search_matches_brute_force() {
    for seed in 0..10u64 {
        let n = 50 + 45 * seed as usize;
        let dim = 2 + (seed as usize * 7) % 63;
        let store = cases::random_store(seed, n, dim);
        let vectors = store.iter().map(|(id, v)| (id.to_owned(), v.to_vec())).collect();
        let index = build_index(&store).unwrap();
        for q in store.ids().step_by(7) {
            for k in [1, 10, n] {
                let ours = search(&index, store.get(q).unwrap(), k, Some(q)).unwrap();
                let reference = oracle::brute_force(q, &vectors, k);
                assert_eq!(ours.len(), reference.len());
                for (a, (id, s)) in ours.iter().zip(&reference) {
                    assert_eq!(&a.id, id);
                    assert!((a.score - s).abs() <= 1e-6);
                }
                assert!(ours.iter().all(|n| n.id != q));
            }
        }
    }
}
