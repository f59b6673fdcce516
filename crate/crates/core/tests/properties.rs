use std::collections::BTreeSet;

use proptest::prelude::*;
use sprs::CsMat;

use hyptopic::corpus::{
    build_document_representation, build_tf, compute_idf, preprocess, Corpus, PreprocessConfig,
    RawDocument,
};
use hyptopic::hierarchy::{assign_documents, build_hierarchy, TrainConfig};
use hyptopic::hypspace::{
    build_hierarchy_matrix, build_similarity_matrix, poincare_distance, EmbeddingTable, Space,
};
use hyptopic::nmf::{factorize_traced, NmfConfig};

fn ball_point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, dim), 0.0f64..0.99).prop_map(|(v, r)| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            v
        } else {
            v.iter().map(|x| x * r / n).collect()
        }
    })
}

fn table(dim: usize, n: usize) -> impl Strategy<Value = EmbeddingTable> {
    prop::collection::vec(ball_point(dim), n).prop_map(move |pts| {
        EmbeddingTable::from_vectors(n, Space::Hyperbolic, pts.into_iter().enumerate()).unwrap()
    })
}

fn euclid(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #[test]
    fn distance_is_a_metric(u in ball_point(4), v in ball_point(4), w in ball_point(4)) {
        let d = poincare_distance(&u, &v);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, poincare_distance(&v, &u));
        prop_assert_eq!(poincare_distance(&u, &u), 0.0);
        prop_assert!(poincare_distance(&u, &w) <= d + poincare_distance(&v, &w) + 1e-9);
        prop_assert!(d >= euclid(&u, &v) * (1.0 - 1e-12));
    }

    #[test]
    fn similarity_matrix_shape(t in table(3, 12), k in 1usize..14, alpha in 0.0f64..1.0) {
        let ms = build_similarity_matrix(&t, k, alpha).unwrap();
        for i in 0..12 {
            prop_assert_eq!(ms.get(i, i), 1.0);
            let row = ms.entries().outer_view(i).unwrap();
            prop_assert!(row.nnz() <= k.min(12));
            for (_, &v) in row.iter() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn raising_alpha_shrinks_support(t in table(3, 10), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let a = build_similarity_matrix(&t, 10, lo).unwrap();
        let b = build_similarity_matrix(&t, 10, hi).unwrap();
        for i in 0..10 {
            for (j, _) in b.entries().outer_view(i).unwrap().iter() {
                prop_assert!(a.get(i, j) > 0.0);
            }
        }
    }

    #[test]
    fn growing_k_h_grows_support(t in table(2, 10), k in 1usize..10) {
        let small = build_hierarchy_matrix(&t, k).unwrap();
        let big = build_hierarchy_matrix(&t, k + 1).unwrap();
        for i in 0..10 {
            let row = small.entries().outer_view(i).unwrap();
            prop_assert_eq!(row.nnz(), k);
            prop_assert_eq!(small.get(i, i), 1.0);
            for (j, _) in row.iter() {
                prop_assert_eq!(big.get(i, j), 1.0);
            }
        }
    }

    #[test]
    fn idf_and_representation_are_nonnegative(
        t in table(3, 8),
        docs in prop::collection::vec(prop::collection::vec(0usize..8, 0..12), 1..20),
        alpha in 0.0f64..1.0,
    ) {
        let words: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
        let corpus = Corpus::from_tokens(docs.iter().enumerate().map(|(d, toks)| {
            (format!("d{d}"), toks.iter().map(|&w| words[w].clone()).collect::<Vec<_>>())
        }));
        let corpus = match corpus {
            Ok(c) if c.vocab().len() == 8 => c,
            _ => return Ok(()),
        };
        let tf = build_tf(&corpus);
        let ms = build_similarity_matrix(&t, 4, alpha).unwrap();
        let idf = compute_idf(&tf, &ms).unwrap();
        prop_assert!(idf.iter().all(|&x| x >= 0.0 && x.is_finite()));
        let a = build_document_representation(&tf, &ms, &idf).unwrap();
        prop_assert!(a.values().data().iter().all(|&x| x > 0.0 && x.is_finite()));
    }

    #[test]
    fn preprocessing_is_idempotent(
        docs in prop::collection::vec(prop::collection::vec("[a-e]{2,4}", 0..10), 1..12),
        min_df in 1usize..3,
    ) {
        let raw: Vec<RawDocument> = docs
            .iter()
            .enumerate()
            .map(|(i, ws)| RawDocument::new(format!("d{i}"), ws.join(" ")))
            .collect();
        let cfg = PreprocessConfig { min_doc_freq: min_df, bundled_stopwords: false, ..PreprocessConfig::default() };
        let Ok(once) = preprocess(&raw, &cfg) else { return Ok(()) };
        let twice = preprocess(&once.document_texts(), &cfg).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn nmf_factors_are_nonnegative_and_objective_falls(
        entries in prop::collection::vec(0.0f64..3.0, 60),
        k in 1usize..4,
        seed in 0u64..100,
    ) {
        let dense = ndarray::Array2::from_shape_vec((6, 10), entries).unwrap();
        let a = CsMat::csr_from_dense(dense.view(), 0.0);
        let cfg = NmfConfig { n_topics: k, max_iter: 50, seed, ..NmfConfig::default() };
        let (f, trace) = factorize_traced(&a, &cfg).unwrap();
        prop_assert!(f.w.iter().chain(f.h.iter()).all(|&x| x >= 0.0 && x.is_finite()));
        for p in trace.objective.windows(2) {
            prop_assert!(p[1] <= p[0] + 1e-10 * p[0].max(1.0));
        }
    }

    #[test]
    fn assignment_partitions_rows(entries in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 24)) {
        let w = ndarray::Array2::from_shape_vec((8, 3), entries).unwrap();
        let a = assign_documents(&w);
        let mut all: Vec<usize> = a.cells.iter().flatten().copied().chain(a.unassigned.iter().copied()).collect();
        all.sort();
        prop_assert_eq!(all, (0..8).collect::<Vec<_>>());
        for (t, cell) in a.cells.iter().enumerate() {
            for &r in cell {
                prop_assert!(w.row(r).iter().all(|&x| x <= w[[r, t]]));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tree_invariants(
        t in table(3, 10),
        docs in prop::collection::vec(prop::collection::vec(0usize..10, 1..15), 12..40),
        depth in 1usize..4,
        seed in 0u64..50,
    ) {
        let words: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let corpus = Corpus::from_tokens(docs.iter().enumerate().map(|(d, toks)| {
            (format!("d{d}"), toks.iter().map(|&w| words[w].clone()).collect::<Vec<_>>())
        })).unwrap();
        if corpus.vocab().len() != 10 {
            return Ok(());
        }
        let tf = build_tf(&corpus);
        let ms = build_similarity_matrix(&t, 4, 0.1).unwrap();
        let mh = build_hierarchy_matrix(&t, 4).unwrap();
        let idf = compute_idf(&tf, &ms).unwrap();
        let a0 = build_document_representation(&tf, &ms, &idf).unwrap();
        let cfg = TrainConfig { n_topics: 2, max_depth: depth, min_docs: 4, seed, max_iter: 60, ..TrainConfig::default() };
        let tree = build_hierarchy(&a0, &mh, &cfg).unwrap();

        prop_assert!(tree.depth() <= depth);
        prop_assert!(tree.stats.peak_live_representations <= depth + 1);
        let parent_sets = std::iter::once((None, a0.nonzero_rows().iter().map(|&r| a0.doc_ids()[r].clone()).collect::<BTreeSet<_>>()))
            .chain(tree.nodes().into_iter().filter(|n| !n.is_leaf()).map(|n| (Some(n), n.doc_ids.iter().cloned().collect())));
        for (parent, docs) in parent_sets {
            let kids = match parent {
                None => tree.roots.iter().collect::<Vec<_>>(),
                Some(p) => {
                    prop_assert!(p.doc_ids.len() >= cfg.min_docs);
                    p.children.iter().collect()
                }
            };
            if kids.is_empty() {
                continue;
            }
            let mut union = BTreeSet::new();
            for k in &kids {
                for d in &k.doc_ids {
                    prop_assert!(union.insert(d.clone()), "document {} in two siblings", d);
                }
            }
            prop_assert!(union.is_subset(&docs));
        }
        let again = build_hierarchy(&a0, &mh, &cfg).unwrap();
        prop_assert_eq!(again, tree);
    }
}
