//! Acceptance checks, one PASS/FAIL line each. Runs on a single thread and
//! exits nonzero if any check fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use ragclf::data::{Dataset, Label};
use ragclf::index::{load_index, write_index};
use ragclf::metrics::{f1, ndcg_at_k, report_from_counts, roc_auc, roc_curve, trapezoid_auc, ConfusionCounts, RankedList};
use ragclf::nn::{load_checkpoint, write_checkpoint, Batch, ClassifierModel, Mode, ModelSpec, RetrievalBatch, Variant};
use ragclf::pipeline::commands::{split_dataset, INDEX_FILE, METRICS_FILE, MODEL_FILE, SCALER_FILE};
use ragclf::pipeline::run::scores;
use ragclf::pipeline::{cmd_evaluate, cmd_train, EvalTarget, PipelineConfig, Relevance, TrainedRun};
use ragclf::preprocess::ScalerParams;
use ragclf::rng::{stream, Stream};
use ragclf::{DenseVector, FlatIndex};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Exact squared distance: differences and squares of `f32` values are exact
/// in `f64`, and the sum is compensated.
fn oracle_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let d = f64::from(x) - f64::from(y);
        let t = sum + d * d;
        carry += if sum.abs() >= (d * d).abs() {
            (sum - t) + d * d
        } else {
            (d * d - t) + sum
        };
        sum = t;
    }
    sum + carry
}

fn index_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(2024, Stream::Synthesize);
    let mut mismatches = Vec::new();
    let mut worst_rel = 0.0f64;
    let mut ties = 0usize;
    for case in 0..1000 {
        let n = rng.random_range(1..=2000usize);
        let d = rng.random_range(1..=128usize);
        let mut vectors: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z as f32
                    })
                    .collect()
            })
            .collect();
        // a quarter of the cases get exact duplicates to exercise tie order
        if case % 4 == 0 && n > 2 {
            for _ in 0..n / 10 + 1 {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                vectors[j] = vectors[i].clone();
            }
        }
        let index = FlatIndex::build(
            vectors
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("e{i}"), DenseVector::new(v.clone()).unwrap())),
            d,
        )
        .unwrap();
        // half the queries are stored entries searched with self-exclusion
        let (query, skip) = if case % 2 == 1 && n > 1 {
            let i = rng.random_range(0..n);
            (vectors[i].clone(), Some(i))
        } else {
            let q: Vec<f32> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z as f32
                })
                .collect();
            (q, None)
        };
        let available = n - usize::from(skip.is_some());
        let k = rng.random_range(1..=available.min(32));
        let exclude = skip.map(|i| format!("e{i}"));
        let hits = index.search(&query, k, exclude.as_deref()).unwrap();

        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&i| Some(i) != skip)
            .map(|i| (oracle_distance(&vectors[i], &query), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ties += all.windows(2).take(k).filter(|w| w[0].0 == w[1].0).count();
        let ok = hits.len() == k
            && hits.hits.iter().zip(&all).all(|(h, &(dist, i))| {
                let rel = (h.distance - dist).abs() / dist.max(f64::MIN_POSITIVE);
                worst_rel = worst_rel.max(if dist == 0.0 { h.distance } else { rel });
                h.id == format!("e{i}") && (h.distance - dist).abs() <= 1e-6 * dist
            });
        if !ok {
            mismatches.push(case);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < 60.0,
        format!(
            "1000 cases, {} mismatches {:?}, max relative distance error {worst_rel:.1e}, {ties} tied neighbours, {secs:.1} s",
            mismatches.len(),
            &mismatches[..mismatches.len().min(5)]
        ),
    )
}

fn gradient_fidelity() -> Outcome {
    let labels = common::alternating_labels(16);
    let scaler_for = |w: usize| ScalerParams {
        mean: (0..w).map(|j| 0.2 * j as f64 - 0.5).collect(),
        std: (0..w).map(|j| 0.7 + 0.3 * j as f64).collect(),
        epsilon: 1e-8,
    };
    let mut lines = Vec::new();
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut run = |name: &str, checks: Vec<common::TensorCheck>| {
        let mut per_layer: BTreeMap<String, usize> = BTreeMap::new();
        for t in &checks {
            let layer = t.name.split('.').next().unwrap().to_owned();
            *per_layer.entry(layer).or_default() += t.checked;
            worst = worst.max(t.max_rel);
            if !t.failures.is_empty() {
                pass = false;
                lines.push(format!("{name}: {}", t.failures.join("; ")));
            }
        }
        let min_layer = per_layer.values().copied().min().unwrap_or(0);
        if min_layer < 20 {
            pass = false;
        }
        lines.push(format!("{name} layers {:?} (min {min_layer} params)", per_layer.keys().collect::<Vec<_>>()));
    };

    let x = common::normal_matrix(16, 10, 1);
    let spec = ModelSpec::model_i(5, true).with_hidden([24, 20]);
    let model = ClassifierModel::new(&spec, &mut stream(1, Stream::Init)).unwrap();
    run("ModelI", common::gradcheck(model, Batch::Features(&x), Mode::Train, &labels, None));

    let spec = ModelSpec::model_ii(5, true, None).with_hidden([24, 20]).with_dropout(0.0);
    let mut model = ClassifierModel::new(&spec, &mut stream(2, Stream::Init)).unwrap();
    perturb_batchnorm(&mut model);
    run("ModelII", common::gradcheck(model, Batch::Features(&x), Mode::Train, &labels, None));

    let d = 6;
    let spec = ModelSpec::model_ii(5, true, Some(d)).with_hidden([24, 20]).with_dropout(0.0);
    let mut model = ClassifierModel::new(&spec, &mut stream(3, Stream::Init)).unwrap();
    perturb_batchnorm(&mut model);
    let w = common::normal_matrix(d, d, 4);
    for (dst, src) in model.attention.as_mut().unwrap().weights.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *dst = 0.4 * src;
    }
    let batch = RetrievalBatch {
        queries: common::normal_matrix(16, d, 5),
        neighbors: (0..16).map(|i| common::normal_matrix(5, d, 100 + i)).collect(),
    };
    let scaler = scaler_for(spec.input_width());
    run(
        "ModelII+attention",
        common::gradcheck(
            model,
            Batch::Retrieval {
                batch: &batch,
                scaler: &scaler,
            },
            Mode::Train,
            &labels,
            Some(&scaler),
        ),
    );
    outcome(pass, format!("{}; worst relative error {worst:.1e}", lines.join("; ")))
}

fn perturb_batchnorm(model: &mut ClassifierModel) {
    for bn in model.batchnorm.as_mut().unwrap() {
        for j in 0..bn.gamma.len() {
            bn.gamma[j] = 0.6 + 0.05 * j as f64;
            bn.beta[j] = 0.1 - 0.02 * j as f64;
        }
    }
}

fn metric_units() -> Outcome {
    let f = f1(1.0, 0.8333);
    let counts = report_from_counts(ConfusionCounts {
        tp: 5,
        fp: 0,
        tn: 14,
        fn_: 1,
    });
    let from_counts = (counts.real.precision, counts.real.recall, counts.real.f1);
    let list = RankedList::from_marks(vec!["a".into(), "b".into(), "c".into()], vec![false, true, false]).unwrap();
    let ndcg = ndcg_at_k(&[list], 10).unwrap();
    let ndcg_want = 1.0 / 3f64.log2();

    let mut rng = stream(17, Stream::Synthesize);
    let mut labels: Vec<Label> = (0..200).map(|i| if i < 90 { Label::Real } else { Label::Fake }).collect();
    labels.shuffle(&mut rng);
    // coarse grid so that ties occur
    let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.random_range(0..60u8)) / 59.0).collect();
    let rank = roc_auc(&labels, &scores).unwrap();
    let trap = trapezoid_auc(&roc_curve(&labels, &scores).unwrap());

    let f_ok = (f - 0.9091).abs() <= 5e-5 && (from_counts.2 - 0.9091).abs() <= 5e-5;
    let ndcg_ok = (ndcg - ndcg_want).abs() <= 1e-9;
    let auc_ok = (rank - trap).abs() <= 1e-10;
    outcome(
        f_ok && ndcg_ok && auc_ok,
        format!(
            "F1(1.0, 0.8333) = {f:.6}; counts 5/0/14/1 give P {:.4} R {:.4} F1 {:.4}; nDCG rank 2 = {ndcg:.12} (want {ndcg_want:.12}); AUC rank {rank:.12} vs trapezoid {trap:.12}",
            from_counts.0, from_counts.1, from_counts.2
        ),
    )
}

/// The benchmark configuration: ModelII, attention, k = 5 with cosines.
fn benchmark(seed: u64, separation: f64) -> PipelineConfig {
    PipelineConfig {
        include_cosines: true,
        epochs: 20,
        learning_rate: 0.01,
        batch_size: 32,
        seed,
        ..PipelineConfig::synthetic(500, 500, 32, separation)
    }
}

struct RunResult {
    accuracy: f64,
    auc: f64,
    seconds: f64,
}

fn train_and_test(cfg: &PipelineConfig) -> RunResult {
    let start = Instant::now();
    let (train, test) = split_dataset(cfg).unwrap();
    let run = TrainedRun::fit(cfg, &train).unwrap();
    let relevance = Relevance::from_config(cfg, &train).unwrap();
    let eval = run.evaluate(test.records(), &relevance, &cfg.ranking_cutoffs).unwrap();
    RunResult {
        accuracy: eval.report.accuracy,
        auc: eval.report.auc.unwrap(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

const SEEDS: std::ops::Range<u64> = 0..10;

fn synthetic_detection(seed_accuracies: &mut Vec<f64>) -> Outcome {
    let headline = train_and_test(&benchmark(42, 2.0));
    for seed in SEEDS {
        seed_accuracies.push(train_and_test(&benchmark(seed, 2.0)).accuracy);
    }
    let min = seed_accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let checks = [
        headline.accuracy >= 0.95,
        headline.auc >= 0.98,
        headline.seconds < 60.0,
        min >= 0.90,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "seed 42: accuracy {:.4} (need >= 0.95: {}), AUC {:.4} (need >= 0.98: {}), {:.1} s; seeds 0-9 accuracy [{}] min {min:.3} (need >= 0.90: {})",
            headline.accuracy,
            ok(checks[0]),
            headline.auc,
            ok(checks[1]),
            headline.seconds,
            fmt_list(seed_accuracies),
            ok(checks[3]),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "MISSED"
    }
}

fn null_data() -> Outcome {
    let aucs: Vec<f64> = SEEDS.map(|s| train_and_test(&benchmark(s, 0.0)).auc).collect();
    let m = mean(&aucs);
    let inside = aucs.iter().filter(|a| (*a - 0.5).abs() <= 0.07).count();
    outcome(
        (m - 0.5).abs() <= 0.07,
        format!("AUC over seeds 0-9 [{}], mean {m:.4} (band 0.5 ± 0.07); {inside}/10 seeds individually inside the band", fmt_list(&aucs)),
    )
}

fn determinism_and_persistence() -> (Outcome, Outcome) {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let cfg = PipelineConfig {
            out_dir: tmp.path().join(name),
            ..benchmark(42, 2.0)
        };
        let trained = cmd_train(&cfg, false).unwrap();
        cmd_evaluate(&cfg.out_dir, &EvalTarget::Test).unwrap();
        runs.push((cfg, trained));
    }
    let read = |i: usize, f: &str| std::fs::read(runs[i].0.out_dir.join(f)).unwrap();
    let ckpt_same = read(0, MODEL_FILE) == read(1, MODEL_FILE);
    let metrics_same = read(0, METRICS_FILE) == read(1, METRICS_FILE);
    let det = outcome(
        ckpt_same && metrics_same,
        format!(
            "two training runs at seed 42: checkpoint {} ({} bytes), metrics JSON {} ({} bytes)",
            same(ckpt_same),
            read(0, MODEL_FILE).len(),
            same(metrics_same),
            read(0, METRICS_FILE).len()
        ),
    );

    let (cfg, out) = &runs[0];
    let trained = &out.trained;
    let dir = &cfg.out_dir;
    let index = load_index(dir.join(INDEX_FILE)).unwrap();
    let model = load_checkpoint(dir.join(MODEL_FILE)).unwrap();
    let scaler: ScalerParams = serde_json::from_slice(&read(0, SCALER_FILE)).unwrap();
    let mut index_bytes = Vec::new();
    write_index(&index, &mut index_bytes).unwrap();
    let mut model_bytes = Vec::new();
    write_checkpoint(&model, &mut model_bytes).unwrap();
    let files_exact = index_bytes == read(0, INDEX_FILE) && model_bytes == read(0, MODEL_FILE);
    let values_exact = index == trained.index && model == trained.model && scaler == trained.scaler;

    let (train, test): (Dataset, Dataset) = split_dataset(cfg).unwrap();
    let mut search_same = true;
    let mut queries = 0;
    for r in train.records().iter().chain(test.records()) {
        let q = r.vector.as_slice();
        let before = trained.index.search(q, 10, Some(&r.article_id)).unwrap();
        let after = index.search(q, 10, Some(&r.article_id)).unwrap();
        search_same &= before == after;
        queries += 1;
    }
    let before = trained.scores(test.records()).unwrap();
    let after = scores(&index, &scaler, &model, test.records()).unwrap();
    let predict_same = before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()) && before.len() == after.len();
    let per = outcome(
        files_exact && values_exact && search_same && predict_same,
        format!(
            "re-serialized files {}, loaded values {}, {queries} searches {}, {} test scores {} bit for bit",
            same(files_exact),
            same(values_exact),
            same(search_same),
            after.len(),
            same(predict_same)
        ),
    );
    (det, per)
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "DIFFER"
    }
}

fn ablation(model_ii: &[f64]) -> Outcome {
    let model_i = |cosines: bool| -> Vec<f64> {
        SEEDS
            .map(|s| {
                let cfg = PipelineConfig {
                    variant: Variant::ModelI,
                    include_cosines: cosines,
                    ..benchmark(s, 2.0)
                };
                train_and_test(&cfg).accuracy
            })
            .collect()
    };
    let with_cos = model_i(true);
    let distances = model_i(false);
    let (a, b, c) = (mean(model_ii), mean(&with_cos), mean(&distances));
    let slack = 0.02;
    outcome(
        a + slack >= b && b + slack >= c,
        format!(
            "mean accuracy over seeds 0-9: ModelII+attention {a:.4} >= ModelI {b:.4} >= ModelI distances only {c:.4} (2 pp slack)"
        ),
    )
}

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();
    let total = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |n: u8, name: &'static str, o: Outcome| {
        println!("criterion {n} {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "index oracle equivalence", index_oracle());
    report(2, "gradient fidelity", gradient_fidelity());
    report(3, "metric unit values", metric_units());
    let mut seed_accuracies = Vec::new();
    report(4, "synthetic detection", synthetic_detection(&mut seed_accuracies));
    report(5, "null-data sanity", null_data());
    let (det, per) = determinism_and_persistence();
    report(6, "determinism", det);
    report(7, "persistence", per);
    report(8, "ablation ordering", ablation(&seed_accuracies));

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.1} s{}",
        results.len() - failed.len(),
        results.len(),
        total.elapsed().as_secs_f64(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
