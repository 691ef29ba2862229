//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Closed-form criteria pin the published constants exactly; protocol
//! criteria run the full pipeline at desk scale with fixed seeds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use manyshot_cli::corpus::{self, CorpusRecord};
use manyshot_core::codec::{
    amortization_ratio, build_prompt, build_target, compression_report, parse_response, round_to,
    to_int999, TokenProfile,
};
use manyshot_core::guard::{balanced_accuracy, binomial_tail, cohens_kappa, consensus_quotas, macro_f1};
use manyshot_core::harness::{
    chunk_eval, chunk_task, plan_chunks, split_dataset, EvalOptions, RfTeacherBackend,
};
use manyshot_core::pipeline::{build_task, fit_teacher, synthesize_dataset, TaskOutcome};
use manyshot_core::trees::{
    knn_predict, rf_predict, FeatureSubsample, KnnParams, RandomForestParams, TEACHER_SEED,
};
use manyshot_core::{CorpusConfig, Matrix};
use proptest::prelude::*;

fn pass(number: u32, name: &str) {
    println!("ACCEPTANCE {number:02} {name}: PASS");
}

#[test]
fn acceptance_01_amortization_ratio() {
    let ratio = amortization_ratio(1024, 50);
    assert!(
        (ratio - 47.7).abs() <= 0.05,
        "amortization(1024, 50) = {ratio}, expected 47.7 +/- 0.05"
    );
    pass(1, "amortization 47.7x");
}

#[test]
fn acceptance_02_compression_table() {
    let merged = compression_report(&TokenProfile::merged_3digit());
    assert_eq!(round_to(merged.tabular, 2), 2.0);
    assert_eq!(round_to(merged.normalization_no_delim, 2), 4.5);
    assert_eq!(round_to(merged.normalization_with_delim, 2), 2.75);
    assert_eq!(round_to(merged.overall, 1), 5.5);
    let digit = compression_report(&TokenProfile::digit_level());
    assert_eq!(round_to(digit.tabular, 2), 1.71);
    assert_eq!(round_to(digit.normalization_no_delim, 2), 2.17);
    assert_eq!(round_to(digit.normalization_with_delim, 2), 1.88);
    assert_eq!(round_to(digit.overall, 1), 3.2);
    pass(2, "compression ratios 2.0/1.71/4.5/2.75/2.17/1.88/5.5/3.2");
}

#[test]
fn acceptance_03_integer_mapping_anchors() {
    assert_eq!(to_int999(0.0), 500);
    assert_eq!(to_int999(4.166), 999);
    pass(3, "to_int999 anchors 0->500, 4.166->999");
}

#[test]
fn acceptance_04_teacher_and_baseline_defaults() {
    let rf = RandomForestParams::teacher_default();
    assert_eq!(rf.n_estimators, 30);
    assert_eq!(rf.seed, TEACHER_SEED, "random state must be fixed");
    assert_eq!(rf.feature_subsample, FeatureSubsample::Sqrt);
    assert_eq!(RfTeacherBackend::default().params, rf);

    let knn = KnnParams::default();
    assert_eq!(knn.k, 8);
    assert_eq!(knn.minkowski_p, 2.0);
    // Inverse-distance weighting, checked on a hand case: neighbors at
    // distances 1 and 2 of different classes -> weights 1 vs 0.5.
    let train = Matrix::from_rows(&[vec![0.0], vec![3.0]]);
    let preds = knn_predict(&train, &[0, 1], &Matrix::from_rows(&[vec![1.0]]), 2, &knn).unwrap();
    assert!((preds[0].probabilities[0] - 1.0 / 1.5).abs() < 1e-12);
    assert!((preds[0].probabilities[1] - 0.5 / 1.5).abs() < 1e-12);
    pass(4, "RF n_estimators=30 fixed seed; kNN k=8 distance weights p=2");
}

#[test]
fn acceptance_05_corpus_policy_over_1000_tasks() {
    let config = CorpusConfig::default();
    let mut bytes = Vec::new();
    let summary = corpus::generate(&config, 1000, 4, &mut bytes, None).unwrap();
    assert_eq!(summary.admitted, 1000);
    let text = String::from_utf8(bytes).unwrap();
    let records: Vec<CorpusRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 1000);
    for r in &records {
        assert!((5..=50).contains(&r.d), "task {}: d = {}", r.task_id, r.d);
        assert!((2..=10).contains(&r.k), "task {}: K = {}", r.task_id, r.k);
        assert!(r.m <= 1024 && r.m >= 1, "task {}: M = {}", r.task_id, r.m);
        assert_eq!(r.n, 50, "task {}: N = {}", r.task_id, r.n);
        let cost = r
            .costs
            .iter()
            .find(|c| c.profile == config.budget_profile.name)
            .expect("configured profile cost present");
        assert!(
            cost.total <= 32_768,
            "task {}: {} tokens over budget",
            r.task_id,
            cost.total
        );
        assert!(r.guard.pass);
    }
    pass(5, "1000 tasks satisfy d/K/M/N policy and the 32k budget");
}

#[test]
fn acceptance_06_binomial_tail_against_bruteforce_oracle() {
    // Exact oracle: Pascal-triangle binomials (exact in f64 up to n=50)
    // times powers, summed directly.
    let mut pascal: Vec<Vec<f64>> = vec![vec![1.0]];
    for n in 1..=50usize {
        let prev = &pascal[n - 1];
        let mut row = vec![1.0];
        for k in 1..n {
            row.push(prev[k - 1] + prev[k]);
        }
        row.push(1.0);
        pascal.push(row);
    }
    let mut cases = 0u64;
    for (n, pascal_row) in pascal.iter().enumerate() {
        for p10 in 1..=9u32 {
            let p0 = p10 as f64 / 10.0;
            for correct in 0..=n {
                let oracle: f64 = (correct..=n)
                    .map(|k| {
                        pascal_row[k] * p0.powi(k as i32) * (1.0 - p0).powi((n - k) as i32)
                    })
                    .sum();
                let ours = binomial_tail(n, p0, correct).unwrap();
                let rel = (ours - oracle).abs() / oracle;
                assert!(
                    rel < 1e-12,
                    "n={n} p0={p0} correct={correct}: ours={ours} oracle={oracle} rel={rel}"
                );
                cases += 1;
            }
        }
    }
    // Complete sweep: 9 prior values x sum_{n=0..50} (n+1) cases.
    assert_eq!(cases, 9 * 51 * 52 / 2);
    pass(6, "binomial tail matches brute-force oracle to 1e-12");
}

#[test]
fn acceptance_07_metric_oracles_on_constructed_matrices() {
    struct Case {
        name: &'static str,
        y_true: Vec<u8>,
        y_pred: Vec<u8>,
        k: usize,
        kappa: f64,
        bacc: f64,
        f1: f64,
    }
    let cases = vec![
        Case {
            name: "perfect binary",
            y_true: vec![0, 0, 1, 1],
            y_pred: vec![0, 0, 1, 1],
            k: 2,
            kappa: 1.0,
            bacc: 1.0,
            f1: 1.0,
        },
        Case {
            name: "constant majority 3:1",
            y_true: vec![0, 0, 0, 1],
            y_pred: vec![0, 0, 0, 0],
            k: 2,
            kappa: 0.0,
            bacc: 0.5,
            f1: 3.0 / 7.0,
        },
        Case {
            name: "disjoint",
            y_true: vec![0, 0, 0],
            y_pred: vec![1, 1, 1],
            k: 2,
            kappa: 0.0,
            bacc: 0.0,
            f1: 0.0,
        },
        Case {
            name: "confusion [[3,1],[1,3]]",
            y_true: vec![0, 0, 0, 0, 1, 1, 1, 1],
            y_pred: vec![0, 0, 0, 1, 0, 1, 1, 1],
            k: 2,
            kappa: 0.5,
            bacc: 0.75,
            f1: 0.75,
        },
        Case {
            name: "three classes, one slip",
            y_true: vec![0, 0, 1, 1, 2, 2],
            y_pred: vec![0, 0, 1, 1, 2, 0],
            k: 3,
            kappa: 0.75,
            bacc: 5.0 / 6.0,
            f1: (0.8 + 1.0 + 2.0 / 3.0) / 3.0,
        },
        Case {
            name: "anti-diagonal",
            y_true: vec![0, 0, 1, 1],
            y_pred: vec![1, 1, 0, 0],
            k: 2,
            kappa: -1.0,
            bacc: 0.0,
            f1: 0.0,
        },
        Case {
            name: "recalls 1.0/0.5/0.0",
            y_true: vec![0, 0, 1, 1, 2, 2],
            y_pred: vec![0, 0, 1, 0, 0, 1],
            k: 3,
            kappa: 0.25,
            bacc: 0.5,
            f1: (2.0 / 3.0 + 0.5) / 3.0,
        },
        Case {
            name: "always-majority priors 0.8/0.2",
            y_true: vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1],
            y_pred: vec![0; 10],
            k: 2,
            kappa: 0.0,
            bacc: 0.5,
            f1: (2.0 * 0.8 / 1.8) / 2.0,
        },
        Case {
            name: "empty third class",
            y_true: vec![0, 0, 0, 1],
            y_pred: vec![0, 0, 1, 1],
            k: 3,
            kappa: 0.5,
            bacc: 5.0 / 6.0,
            f1: (0.8 + 2.0 / 3.0) / 3.0,
        },
        Case {
            name: "single-class truth, correct",
            y_true: vec![1, 1, 1],
            y_pred: vec![1, 1, 1],
            k: 2,
            kappa: 0.0,
            bacc: 1.0,
            f1: 0.5,
        },
        Case {
            name: "four classes, one confusion",
            y_true: vec![0, 1, 2, 3],
            y_pred: vec![0, 1, 2, 0],
            k: 4,
            kappa: 2.0 / 3.0,
            bacc: 0.75,
            f1: (2.0 / 3.0 + 1.0 + 1.0) / 4.0,
        },
    ];
    assert!(cases.len() >= 10);
    for case in &cases {
        let kappa = cohens_kappa(&case.y_true, &case.y_pred).unwrap();
        let bacc = balanced_accuracy(&case.y_true, &case.y_pred, case.k).unwrap();
        let f1 = macro_f1(&case.y_true, &case.y_pred, case.k).unwrap();
        assert!((kappa - case.kappa).abs() < 1e-12, "{}: kappa {kappa} vs {}", case.name, case.kappa);
        assert!((bacc - case.bacc).abs() < 1e-12, "{}: bacc {bacc} vs {}", case.name, case.bacc);
        assert!((f1 - case.f1).abs() < 1e-12, "{}: f1 {f1} vs {}", case.name, case.f1);
    }
    pass(7, "kappa/bacc/macro-F1 match hand values on 11 matrices");
}

#[test]
fn acceptance_08_consensus_contract_over_200_tasks() {
    let mut config = CorpusConfig {
        m_max: 128,
        ..CorpusConfig::default()
    };
    config.guard.consensus = true;

    let next_id = AtomicU64::new(0);
    let collected = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..4 {
            scope.spawn(|| loop {
                {
                    let got = collected.lock().unwrap();
                    if got.len() >= 200 {
                        break;
                    }
                }
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                if let TaskOutcome::Admitted(built) = build_task(&config, id).unwrap() {
                    collected.lock().unwrap().push(built);
                }
            });
        }
    });
    let built_tasks = collected.into_inner().unwrap();
    assert!(built_tasks.len() >= 200);

    for built in built_tasks.iter().take(200) {
        let task = &built.task;
        let pre = built.pre_consensus.as_ref().expect("warm-up keeps pre-consensus queries");
        // Exactly N_conse queries, all teacher-correct.
        assert_eq!(task.n(), 20);
        let (model, _) = fit_teacher(task).unwrap();
        let encoded = manyshot_core::codec::encode_task(task).unwrap();
        let preds = rf_predict(&model, &encoded.query_matrix()).unwrap();
        for (p, gt) in preds.iter().zip(&task.query_y) {
            assert_eq!(p.label, *gt, "task {}: retained query disagrees", built.task_id);
        }
        // Class counts follow largest-remainder quotas over the classes
        // that survived filtering, weighted by demonstration labels.
        let mut demo_counts = vec![0usize; task.k];
        for &l in &task.demo_y {
            demo_counts[l as usize] += 1;
        }
        let mut retained = vec![0usize; task.k];
        for (&t, &p) in pre.query_y.iter().zip(&built.teacher_preds) {
            if t == p {
                retained[t as usize] += 1;
            }
        }
        let eligible: Vec<usize> = (0..task.k).filter(|&c| retained[c] > 0).collect();
        let quotas = consensus_quotas(&demo_counts, &eligible, 20);
        let mut actual = vec![0usize; task.k];
        for &l in &task.query_y {
            actual[l as usize] += 1;
        }
        for (slot, &class) in eligible.iter().enumerate() {
            let diff = actual[class] as i64 - quotas[slot] as i64;
            assert!(
                diff.abs() <= 1,
                "task {}: class {class} count {} vs quota {}",
                built.task_id,
                actual[class],
                quotas[slot]
            );
        }
        assert_eq!(actual.iter().sum::<usize>(), 20);
        // Demo block byte-identical to the unfiltered prompt's.
        let pre_prompt = build_prompt(pre, &config.header, &[]).unwrap();
        assert_eq!(pre_prompt.demo_block, built.prompt.demo_block);
    }
    pass(8, "consensus: 20 teacher-correct queries, quota counts, demo block intact");
}

/// Synthesize `count` guard-free datasets, skipping degenerate draws.
fn eval_datasets(count: usize, rows: usize, base_seed: u64) -> Vec<manyshot_core::harness::Dataset> {
    let cfg = CorpusConfig::default();
    let mut out = Vec::new();
    let mut seed = base_seed;
    while out.len() < count {
        if let Ok(table) = synthesize_dataset(&cfg, rows, seed) {
            out.push(split_dataset(table, 0.8, seed).unwrap());
        }
        seed = seed.wrapping_add(1);
    }
    out
}

#[test]
fn acceptance_09_pipeline_oracle_equivalence() {
    let backend = RfTeacherBackend::default();
    let opts = EvalOptions {
        n: 25,
        v: 1,
        seed: 17,
        ..EvalOptions::default()
    };
    for (i, ds) in eval_datasets(50, 300, 1000).iter().enumerate() {
        let m = 64.min(ds.train_idx.len());
        let slice = chunk_eval(ds, m, &opts, &backend).unwrap();
        let plans = plan_chunks(ds, m, opts.n, opts.seed).unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        for plan in &plans {
            let task = chunk_task(ds, plan, opts.seed);
            let encoded = manyshot_core::codec::encode_task(&task).unwrap();
            let model = backend.fit_model(&encoded, task.k).unwrap();
            let preds = rf_predict(&model, &encoded.query_matrix()).unwrap();
            correct += preds
                .iter()
                .zip(&task.query_y)
                .filter(|(p, &g)| p.label == g)
                .count();
            total += task.n();
        }
        assert_eq!(slice.correct, correct, "dataset {i}");
        assert_eq!(slice.total, total, "dataset {i}");
        assert_eq!(
            slice.accuracy,
            correct as f64 / total as f64,
            "dataset {i}: harness accuracy differs from direct teacher"
        );
    }
    pass(9, "harness accuracy == direct rf_predict on 50 tasks (exact)");
}

#[test]
fn acceptance_10_order_robustness_v5_equals_v1() {
    let backend = RfTeacherBackend::default();
    let base = EvalOptions {
        n: 25,
        seed: 29,
        ..EvalOptions::default()
    };
    for (i, ds) in eval_datasets(50, 300, 2000).iter().enumerate() {
        let m = 64.min(ds.train_idx.len());
        let v1 = chunk_eval(ds, m, &EvalOptions { v: 1, ..base.clone() }, &backend).unwrap();
        let v5 = chunk_eval(ds, m, &EvalOptions { v: 5, ..base.clone() }, &backend).unwrap();
        assert_eq!(v1.chunks.len(), v5.chunks.len());
        for (c1, c5) in v1.chunks.iter().zip(&v5.chunks) {
            assert_eq!(
                c1.predictions, c5.predictions,
                "dataset {i} chunk {}: V=5 changed a label",
                c1.chunk_index
            );
        }
    }
    pass(10, "V=5 shuffled aggregation matches V=1 per query on 50 tasks");
}

#[test]
fn acceptance_11_shot_scaling_echo() {
    let backend = RfTeacherBackend::default();
    let opts = EvalOptions {
        n: 50,
        v: 1,
        seed: 11,
        ..EvalOptions::default()
    };
    let datasets = eval_datasets(50, 768, 11);
    let mean_acc = |m: usize| -> f64 {
        let sum: f64 = datasets
            .iter()
            .map(|ds| chunk_eval(ds, m, &opts, &backend).unwrap().accuracy)
            .sum();
        sum / datasets.len() as f64
    };
    let acc8 = mean_acc(8);
    let acc512 = mean_acc(512);
    assert!(
        acc512 >= acc8 + 0.05,
        "mean accuracy: 8 shots {acc8:.4}, 512 shots {acc512:.4}, margin < 0.05"
    );
    pass(11, "RF mean accuracy rises >= 0.05 from 8 to 512 shots");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, .. ProptestConfig::default() })]

    #[test]
    fn acceptance_12a_int999_monotone(a in -1e9f64..1e9, b in -1e9f64..1e9) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(to_int999(lo) <= to_int999(hi));
    }

    #[test]
    fn acceptance_12b_target_round_trip(labels in prop::collection::vec(0u8..10, 1..60)) {
        let ids: Vec<u32> = (0..labels.len() as u32).collect();
        let parsed = parse_response(&build_target(&labels), &ids, 10).unwrap();
        for (id, label) in ids.iter().zip(&labels) {
            prop_assert_eq!(parsed[id], *label);
        }
    }
}

#[test]
fn acceptance_12_codec_property_suites() {
    // The two proptest blocks above each run 10,000 randomized cases;
    // this marker test reports the criterion.
    pass(12, "codec monotonicity and round-trip suites at 10k cases each");
}
