use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use xlalign::alignment::{
    ac_nonparallel, ac_parallel, layer_hits, language_alignment, similarity_matrix,
    AlignmentOptions, LayerPooling,
};
use xlalign::dumpio::{DumpManifest, EmbeddingDump, LanguageLabel, Pooling};
use xlalign::pooling::{pool_last_token, pool_weighted_average};

/// Independent O(n^3) reference: for each i, scan the whole matrix for
/// entries sharing exactly one index with the diagonal cell (i, i).
fn brute_force(c: ArrayView2<'_, f64>) -> usize {
    let n = c.nrows();
    (0..n)
        .filter(|&i| {
            let mut ok = true;
            for r in 0..n {
                for k in 0..n {
                    if (r == i) ^ (k == i) && c[[r, k]] >= c[[i, i]] {
                        ok = false;
                    }
                }
            }
            ok
        })
        .count()
}

fn matrix(n: usize) -> impl Strategy<Value = Array2<f64>> {
    // coarse grid so ties show up often
    prop::collection::vec((-10i32..=10).prop_map(|v| v as f64 / 10.0), n * n)
        .prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

fn embeddings(n: usize, d: usize) -> impl Strategy<Value = Array2<f32>> {
    prop::collection::vec(-1.0f32..1.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_brute_force(c in matrix(10)) {
        prop_assert_eq!(layer_hits(c.view()).unwrap().hits, brute_force(c.view()));
    }

    #[test]
    fn score_is_k_over_n(n in 1usize..12, seed in any::<u64>()) {
        let c = Array2::from_shape_fn((n, n), |(i, j)| ((seed ^ (i * 31 + j) as u64).wrapping_mul(0x9E37) % 7) as f64);
        let s = layer_hits(c.view()).unwrap();
        prop_assert!(s.hits <= n);
        prop_assert!((0.0..=1.0).contains(&s.value()));
        prop_assert_eq!((s.value() * n as f64).round() as usize, s.hits);
    }

    #[test]
    fn transpose_symmetry(c in matrix(8)) {
        prop_assert_eq!(layer_hits(c.view()).unwrap(), layer_hits(c.t()).unwrap());
    }

    #[test]
    fn joint_permutation_invariance(c in matrix(8), perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle()) {
        let p = Array2::from_shape_fn((8, 8), |(i, j)| c[[perm[i], perm[j]]]);
        prop_assert_eq!(layer_hits(c.view()).unwrap(), layer_hits(p.view()).unwrap());
    }

    #[test]
    fn strictly_monotone_transform_invariance(c in matrix(8), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let f = |x: f64| (a * x + b).exp() + x.powi(3);
        let fc = c.mapv(f);
        prop_assert_eq!(layer_hits(c.view()).unwrap(), layer_hits(fc.view()).unwrap());
    }

    #[test]
    fn positive_scale_invariance(a in embeddings(6, 4), b in embeddings(6, 4), s in 0.01f32..100.0) {
        let c1 = similarity_matrix(a.view(), b.view()).unwrap();
        let c2 = similarity_matrix((&a * s).view(), b.view()).unwrap();
        let c3 = similarity_matrix(a.view(), (&b * s).view()).unwrap();
        prop_assert_eq!(layer_hits(c1.values.view()).unwrap(), layer_hits(c2.values.view()).unwrap());
        prop_assert_eq!(layer_hits(c1.values.view()).unwrap(), layer_hits(c3.values.view()).unwrap());
        for (x, y) in c1.values.iter().zip(c2.values.iter()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn similarity_matches_double_loop(a in embeddings(4, 3), b in embeddings(4, 3)) {
        let c = similarity_matrix(a.view(), b.view()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
                for k in 0..3 {
                    let (x, y) = (a[[i, k]] as f64, b[[j, k]] as f64);
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                let expect = if na.sqrt() < 1e-12 || nb.sqrt() < 1e-12 { 0.0 } else { dot / (na.sqrt() * nb.sqrt()) };
                prop_assert!((c.values[[i, j]] - expect).abs() < 1e-6);
                prop_assert!(c.values[[i, j]].abs() <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn pooling_is_linear(x in embeddings(5, 3), y in embeddings(5, 3), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let mix = &x * a + &y * b;
        for f in [pool_weighted_average, pool_last_token] {
            let lhs = f(mix.view()).unwrap();
            let rhs = f(x.view()).unwrap() * a + f(y.view()).unwrap() * b;
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn constant_tokens_pool_to_themselves(v in prop::collection::vec(-5.0f32..5.0, 4), t in 1usize..40) {
        let tokens = Array2::from_shape_fn((t, 4), |(_, j)| v[j]);
        for f in [pool_weighted_average, pool_last_token] {
            let out = f(tokens.view()).unwrap();
            for (o, e) in out.iter().zip(&v) {
                prop_assert!((o - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn weighted_equals_last_for_one_token(x in embeddings(1, 7)) {
        prop_assert_eq!(pool_weighted_average(x.view()).unwrap(), pool_last_token(x.view()).unwrap());
    }
}

#[test]
fn absolute_cosine_is_not_order_invariant() {
    let c = ndarray::array![[0.9, 0.1, 0.2], [0.3, 0.8, 0.85], [0.2, 0.4, 0.7]];
    let shifted = c.mapv(|v: f64| v.powi(3));
    assert_eq!(layer_hits(c.view()).unwrap(), layer_hits(shifted.view()).unwrap());
    assert_ne!(ac_parallel(c.view()).unwrap(), ac_parallel(shifted.view()).unwrap());
    assert_ne!(ac_nonparallel(c.view()).unwrap(), ac_nonparallel(shifted.view()).unwrap());
}

fn label(s: &str) -> LanguageLabel {
    LanguageLabel::new(s).unwrap()
}

fn dump(lang: &str, layers: Vec<Array2<f32>>) -> EmbeddingDump {
    let (n, d) = layers[0].dim();
    let m = DumpManifest::sentence("m", label(lang), "flores", Pooling::WeightedAverage, layers.len(), n, d);
    EmbeddingDump::new(m, layers).unwrap()
}

#[test]
fn self_alignment_scores_one_everywhere() {
    let layers: Vec<Array2<f32>> = (0..3)
        .map(|l| Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3 + l) % 5) as f32 - (i == j) as u8 as f32 * 3.0))
        .collect();
    let pivot = dump("eng_Latn", layers.clone());
    let same = dump("deu_Latn", layers);
    let p = language_alignment(&pivot, &same, &AlignmentOptions::default()).unwrap();
    assert_eq!(p.per_layer_scores, vec![1.0; 3]);
    assert_eq!(p.pooled_mean, 1.0);
    assert_eq!(p.score, 1.0);
}

#[test]
fn crossed_orthonormal_rows_score_zero() {
    let n = 4;
    let pivot_l = Array2::<f32>::eye(n);
    let crossed = Array2::from_shape_fn((n, n), |(i, j)| pivot_l[[(i + 1) % n, j]]);
    let p = language_alignment(
        &dump("eng_Latn", vec![pivot_l.clone(), pivot_l]),
        &dump("deu_Latn", vec![crossed.clone(), crossed]),
        &AlignmentOptions::default(),
    )
    .unwrap();
    assert_eq!(p.per_layer_scores, vec![0.0, 0.0]);
    assert_eq!(p.pooled_max, 0.0);
}

#[test]
fn mismatched_pairs_and_pooling_are_rejected() {
    let a = dump("eng_Latn", vec![Array2::<f32>::eye(3)]);
    let b = dump("deu_Latn", vec![Array2::<f32>::eye(4)]);
    assert!(language_alignment(&a, &b, &AlignmentOptions::default()).is_err());

    let c = dump("deu_Latn", vec![Array2::<f32>::eye(3)]);
    let opts = AlignmentOptions { pooling: Pooling::LastToken, ..Default::default() };
    let err = language_alignment(&a, &c, &opts).unwrap_err();
    assert!(err.to_string().contains("pooled"), "{err}");
}

#[test]
fn token_dumps_are_pooled_before_scoring() {
    // Every token of sentence i is e_i, so either pooling yields e_i.
    let n = 3;
    let counts = vec![1, 2, 3];
    let mut rows = Vec::new();
    for (i, &t) in counts.iter().enumerate() {
        for _ in 0..t {
            let mut r = vec![0.0f32; n];
            r[i] = 1.0;
            rows.extend(r);
        }
    }
    let total: usize = counts.iter().sum();
    let layer = Array2::from_shape_vec((total, n), rows).unwrap();
    let tm = DumpManifest::token("m", label("deu_Latn"), "flores", 1, counts, n);
    let tokens = EmbeddingDump::new(tm, vec![layer]).unwrap();
    let pivot = dump("eng_Latn", vec![Array2::<f32>::eye(n)]);
    for pooling in [Pooling::WeightedAverage, Pooling::LastToken] {
        let pm = DumpManifest::sentence("m", label("eng_Latn"), "flores", pooling, 1, n, n);
        let pivot = EmbeddingDump::new(pm, pivot.layers().to_vec()).unwrap();
        let opts = AlignmentOptions { pooling, ..Default::default() };
        let p = language_alignment(&pivot, &tokens, &opts).unwrap();
        assert_eq!(p.per_layer_scores, vec![1.0]);
    }
}

#[test]
fn subset_pooling_selects_layers() {
    let good = Array2::<f32>::eye(3);
    let bad = Array2::from_shape_fn((3, 3), |(i, j)| good[[(i + 1) % 3, j]]);
    let pivot = dump("eng_Latn", vec![good.clone(); 4]);
    let lang = dump("deu_Latn", vec![bad.clone(), good.clone(), bad, good]);
    let opts = AlignmentOptions {
        layer_pool: LayerPooling::Mean,
        subset: Some(vec![1, 3]),
        ..Default::default()
    };
    let p = language_alignment(&pivot, &lang, &opts).unwrap();
    assert_eq!(p.per_layer_scores, vec![0.0, 1.0, 0.0, 1.0]);
    assert_eq!(p.pooled_mean, 0.5);
    assert_eq!(p.pooled_max, 1.0);
    assert_eq!(p.subset_pooled, Some(1.0));
    assert_eq!(p.score, 1.0);
    assert!(p.pooled_mean <= p.pooled_max);

    let opts = AlignmentOptions { subset: Some(vec![4]), ..Default::default() };
    assert!(language_alignment(&pivot, &lang, &opts).is_err());
}

#[test]
fn degenerate_sentences_are_reported_not_fatal() {
    let mut l = Array2::<f32>::eye(3);
    l.row_mut(1).fill(0.0);
    let p = language_alignment(
        &dump("eng_Latn", vec![Array2::<f32>::eye(3)]),
        &dump("deu_Latn", vec![l]),
        &AlignmentOptions::default(),
    )
    .unwrap();
    assert_eq!(p.degenerate_sentences, vec![1]);
    assert!((p.per_layer_scores[0] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn parallel_and_sequential_layers_agree() {
    let layers: Vec<Array2<f32>> = (0..6)
        .map(|l| Array2::from_shape_fn((12, 5), |(i, j)| (((i * 13 + j * 7 + l * 3) % 11) as f32).sin()))
        .collect();
    let other: Vec<Array2<f32>> = layers.iter().map(|m| m.mapv(|v| v + 0.3 * (v * 7.0).cos())).collect();
    let pivot = dump("eng_Latn", layers.clone());
    let lang = dump("deu_Latn", other.clone());
    let p = language_alignment(&pivot, &lang, &AlignmentOptions::default()).unwrap();
    let sequential: Vec<f64> = layers
        .iter()
        .zip(&other)
        .map(|(a, b)| layer_hits(similarity_matrix(b.view(), a.view()).unwrap().values.view()).unwrap().value())
        .collect();
    assert_eq!(p.per_layer_scores, sequential);
    let again = language_alignment(&pivot, &lang, &AlignmentOptions::default()).unwrap();
    assert_eq!(p, again);
}
