//! Invariants checked against brute-force oracles on generated inputs.

use proptest::prelude::*;
use ragclf::data::{self, load_jsonl, write_jsonl, Label, SplitSpec};
use ragclf::index::{read_index, write_index};
use ragclf::linalg::Matrix;
use ragclf::metrics::{
    mrr_at_k, ndcg_at_k, recall_at_k, report_from_counts, roc_auc, roc_curve, trapezoid_auc, ConfusionCounts, RankedList,
};
use ragclf::nn::layers::dropout_mask;
use ragclf::nn::{attention_apply, read_checkpoint, write_checkpoint, AttentionParams, BatchNormParams, ClassifierModel, ModelSpec};
use ragclf::preprocess::{fit_transform, inverse_transform};
use ragclf::rng::{stream, Stream};
use ragclf::{DenseVector, FlatIndex};

/// Small integer coordinates so that distance ties are common.
fn index_case() -> impl Strategy<Value = (usize, Vec<Vec<f32>>, Vec<f32>)> {
    (1usize..6, 1usize..40).prop_flat_map(|(d, n)| {
        let v = prop::collection::vec((-3i8..=3).prop_map(f32::from), d);
        (Just(d), prop::collection::vec(v.clone(), n), v)
    })
}

fn oracle(vectors: &[Vec<f32>], q: &[f32], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, v)| {
            let d = v.iter().zip(q).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
            (i, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn build(vectors: &[Vec<f32>], d: usize) -> FlatIndex {
    FlatIndex::build(
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("v{i}"), DenseVector::new(v.clone()).unwrap())),
        d,
    )
    .unwrap()
}

fn auc_oracle(labels: &[Label], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == Label::Real && lj == Label::Fake {
                pairs += 1.0;
                wins += match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<Label>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n)
                .prop_filter("both classes", |v| v.contains(&true) && v.contains(&false))
                .prop_map(|v| v.into_iter().map(|b| if b { Label::Real } else { Label::Fake }).collect()),
            prop::collection::vec((0u8..16).prop_map(|s| f64::from(s) / 16.0), n),
        )
    })
}

fn ranked_list() -> impl Strategy<Value = RankedList> {
    (prop::collection::vec(any::<bool>(), 0..25), 0usize..5).prop_filter_map("needs a relevant item", |(marks, extra)| {
        let total = marks.iter().filter(|&&r| r).count() + extra;
        if total == 0 {
            return None;
        }
        let ids = (0..marks.len()).map(|i| format!("d{i}")).collect();
        RankedList::new(ids, marks, total).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn search_matches_full_scan((d, vectors, q) in index_case(), k_frac in 0.0f64..1.0, exclude in any::<bool>()) {
        let index = build(&vectors, d);
        let skip = (exclude && vectors.len() > 1).then_some(vectors.len() / 2);
        let available = vectors.len() - usize::from(skip.is_some());
        let k = 1 + ((available - 1) as f64 * k_frac) as usize;
        let exclude_id = skip.map(|i| format!("v{i}"));
        let hits = index.search(&q, k, exclude_id.as_deref()).unwrap();
        let expected = oracle(&vectors, &q, k, skip);
        let got: Vec<(String, f64)> = hits.hits.iter().map(|h| (h.id.clone(), h.distance)).collect();
        let want: Vec<(String, f64)> = expected.iter().map(|&(i, dist)| (format!("v{i}"), dist)).collect();
        prop_assert_eq!(got, want);
        prop_assert!(index.search(&q, available + 1, exclude_id.as_deref()).is_err());
    }

    #[test]
    fn index_bytes_round_trip((d, vectors, q) in index_case()) {
        let index = build(&vectors, d);
        let mut bytes = Vec::new();
        write_index(&index, &mut bytes).unwrap();
        let back = read_index(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &index);
        let k = vectors.len();
        prop_assert_eq!(back.search(&q, k, None).unwrap(), index.search(&q, k, None).unwrap());
    }

    #[test]
    fn auc_is_the_pairwise_win_rate((labels, scores) in scored_labels()) {
        let auc = roc_auc(&labels, &scores).unwrap();
        prop_assert!((auc - auc_oracle(&labels, &scores)).abs() < 1e-12);
        prop_assert!((auc - trapezoid_auc(&roc_curve(&labels, &scores).unwrap())).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn auc_ignores_monotone_rescaling((labels, scores) in scored_labels()) {
        let auc = roc_auc(&labels, &scores).unwrap();
        // exact in binary floating point for scores on a 1/16 grid
        let affine: Vec<f64> = scores.iter().map(|s| 4.0 * s - 1.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        prop_assert_eq!(roc_auc(&labels, &affine).unwrap(), auc);
        prop_assert_eq!(roc_auc(&labels, &cubed).unwrap(), auc);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&labels, &negated).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_bounded_and_monotone(lists in prop::collection::vec(ranked_list(), 1..6)) {
        let mut last = (0.0, 0.0);
        for k in 1..=30 {
            let mrr = mrr_at_k(&lists, k).unwrap();
            let recall = recall_at_k(&lists, k).unwrap();
            let ndcg = ndcg_at_k(&lists, k).unwrap();
            for v in [mrr, recall, ndcg] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
            prop_assert!(mrr >= last.0 && recall >= last.1);
            last = (mrr, recall);
        }
    }

    #[test]
    fn ndcg_matches_definition(list in ranked_list(), k in 1usize..30) {
        let disc = |i: usize| 1.0 / ((i + 2) as f64).log2();
        let dcg: f64 = list.relevant().iter().take(k).enumerate().filter(|(_, &r)| r).map(|(i, _)| disc(i)).sum();
        let ideal: f64 = (0..list.total_relevant().min(k)).map(disc).sum();
        let got = ndcg_at_k(std::slice::from_ref(&list), k).unwrap();
        prop_assert!((got - dcg / ideal).abs() < 1e-12);
    }

    #[test]
    fn classification_averages_are_consistent(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let r = report_from_counts(ConfusionCounts { tp, fp, tn, fn_ });
        let n = (tp + fp + tn + fn_) as f64;
        prop_assert!((r.accuracy - (tp + tn) as f64 / n).abs() < 1e-15);
        prop_assert!((r.macro_avg.f1 - (r.real.f1 + r.fake.f1) / 2.0).abs() < 1e-15);
        let w = (r.real.f1 * r.real.support as f64 + r.fake.f1 * r.fake.support as f64) / n;
        prop_assert!((r.weighted_avg.f1 - w).abs() < 1e-12);
        prop_assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
        for m in [r.real, r.fake] {
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
            prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15 || m.f1 == 0.0);
        }
    }

    #[test]
    fn scaler_standardizes_and_inverts(rows in 2usize..30, cols in 1usize..6, seed in any::<u64>()) {
        let x = common_matrix(rows, cols, seed);
        let (params, z) = fit_transform(&x).unwrap();
        for j in 0..cols {
            let col: Vec<f64> = (0..rows).map(|i| z.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
        let back = inverse_transform(&params, &z).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn split_partitions_and_stratifies(n_real in 1usize..40, n_fake in 1usize..40, frac in 0.1f64..0.9, seed in any::<u64>()) {
        prop_assume!(n_real + n_fake >= 2);
        let ds = data::synthesize(seed, n_real, n_fake, 2, 1.0).unwrap();
        let spec = SplitSpec { train_fraction: frac, seed, stratified: true };
        let (train, test) = data::split(&ds, &spec).unwrap();
        let mut ids: Vec<String> = train.records().iter().chain(test.records()).map(|r| r.article_id.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = ds.records().iter().map(|r| r.article_id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
        prop_assert_eq!(train.count(Label::Real), (frac * n_real as f64).round() as usize);
        prop_assert_eq!(train.count(Label::Fake), (frac * n_fake as f64).round() as usize);
        prop_assert_eq!(data::split(&ds, &spec).unwrap(), (train, test));
    }

    #[test]
    fn jsonl_round_trip(n in 2usize..20, dim in 1usize..8, seed in any::<u64>()) {
        let ds = data::synthesize(seed, n, n, dim, 1.5).unwrap();
        let mut bytes = Vec::new();
        write_jsonl(&ds, &mut bytes).unwrap();
        prop_assert_eq!(load_jsonl(bytes.as_slice()).unwrap(), ds);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), variant in 0u8..3, k in 1usize..8, cos in any::<bool>()) {
        let spec = match variant {
            0 => ModelSpec::model_i(k, cos),
            1 => ModelSpec::model_ii(k, cos, None),
            _ => ModelSpec::model_ii(k, cos, Some(5)),
        }
        .with_hidden([7, 3]);
        let model = ClassifierModel::new(&spec, &mut stream(seed, Stream::Init)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn attention_gates_form_a_distribution(d in 1usize..10, seed in any::<u64>()) {
        let w = common_matrix(d, d, seed);
        let e = common_matrix(1, d, seed ^ 1);
        let params = AttentionParams { weights: w };
        let out = attention_apply(&params, e.row(0)).unwrap();
        prop_assert!((out.gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(out.gates.iter().all(|&a| a > 0.0));
        let zero = attention_apply(&AttentionParams::zeros(d), e.row(0)).unwrap();
        for (r, x) in zero.refined.iter().zip(e.row(0)) {
            prop_assert!((r - x / d as f64).abs() < 1e-15);
        }
    }
}

fn common_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand_distr::{Distribution, Normal};
    let mut rng = stream(seed, Stream::Synthesize);
    let dist = Normal::new(3.0, 2.0).unwrap();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(&mut rng)).collect())
}

#[test]
fn dropout_mask_preserves_expectation() {
    let mut rng = stream(0, Stream::Dropout);
    for p in [0.1, 0.5, 0.8] {
        let mask = dropout_mask(500, 400, p, &mut rng);
        let mean = mask.as_slice().iter().sum::<f64>() / 200_000.0;
        let zeros = mask.as_slice().iter().filter(|&&m| m == 0.0).count() as f64 / 200_000.0;
        // 200k Bernoulli draws: a few standard errors
        assert!((mean - 1.0).abs() < 0.02 * (p / (1.0 - p)).sqrt().max(0.5), "p {p}: mean {mean}");
        assert!((zeros - p).abs() < 0.005, "p {p}: dropped {zeros}");
    }
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let x = common_matrix(64, 5, 11);
    let bn = BatchNormParams::new(5);
    let (y, _) = bn.forward_train(&x);
    for j in 0..5 {
        let col: Vec<f64> = (0..64).map(|i| y.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / 64.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
        // eps 1e-5 in the denominator shrinks the variance slightly
        assert!((var - 1.0).abs() < 1e-5, "column {j}: var {var}");
    }
}
