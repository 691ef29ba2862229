//! Oracle checks for the tree learners: exhaustive split-search
//! equivalence on small instances, bootstrap row-identity invariance,
//! and the clamped-exponential hyperparameter distributions.

use manyshot_core::rng::Rng;
use manyshot_core::scm::sample_gbdt_hyperparams;
use manyshot_core::trees::{
    fit_decision_tree, fit_random_forest_with_bootstrap, rf_predict, ClsNode, DecisionTree,
    FeatureSubsample, RandomForestParams, TreeParams,
};
use manyshot_core::Matrix;

fn gini(counts: &[u32]) -> f64 {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t) * (c as f64 / t)).sum::<f64>()
}

/// Exhaustive best weighted child Gini over every (feature, boundary)
/// split of the given rows. None when no split separates the rows.
fn oracle_best_gini(x: &Matrix, y: &[u8], n_classes: usize, rows: &[usize]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for feature in 0..x.cols() {
        let mut values: Vec<f64> = rows.iter().map(|&i| x.get(i, feature)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let threshold = 0.5 * (w[0] + w[1]);
            let mut left = vec![0u32; n_classes];
            let mut right = vec![0u32; n_classes];
            for &i in rows {
                if x.get(i, feature) <= threshold {
                    left[y[i] as usize] += 1;
                } else {
                    right[y[i] as usize] += 1;
                }
            }
            let nl: u32 = left.iter().sum();
            let nr: u32 = right.iter().sum();
            let weighted =
                (nl as f64 * gini(&left) + nr as f64 * gini(&right)) / rows.len() as f64;
            if best.is_none_or(|b| weighted < b) {
                best = Some(weighted);
            }
        }
    }
    best
}

/// Walk the fitted tree, recomputing each internal node's row set, and
/// compare its split quality against the exhaustive oracle.
fn assert_splits_optimal(
    tree: &DecisionTree,
    node: usize,
    rows: Vec<usize>,
    x: &Matrix,
    y: &[u8],
) {
    match &tree.nodes[node] {
        ClsNode::Leaf { .. } => {}
        ClsNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let mut left_counts = vec![0u32; tree.n_classes];
            let mut right_counts = vec![0u32; tree.n_classes];
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x.get(i, *feature) <= *threshold);
            for &i in &left_rows {
                left_counts[y[i] as usize] += 1;
            }
            for &i in &right_rows {
                right_counts[y[i] as usize] += 1;
            }
            let achieved = (left_rows.len() as f64 * gini(&left_counts)
                + right_rows.len() as f64 * gini(&right_counts))
                / rows.len() as f64;
            let optimal = oracle_best_gini(x, y, tree.n_classes, &rows).unwrap();
            assert!(
                (achieved - optimal).abs() < 1e-9,
                "node {node}: achieved {achieved}, oracle {optimal}"
            );
            assert_splits_optimal(tree, *left, left_rows, x, y);
            assert_splits_optimal(tree, *right, right_rows, x, y);
        }
    }
}

#[test]
fn cart_reproduces_exhaustive_gini_optimum_everywhere() {
    let mut rng = Rng::from_seed(0xCAB7);
    for case in 0..300 {
        let n = 4 + (rng.below(13)) as usize; // 4..=16 rows
        let d = 1 + (rng.below(3)) as usize; // 1..=3 binary features
        let k = 2 + (rng.below(2)) as usize; // 2..=3 classes
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.below(2) as f64).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<u8> = (0..n).map(|_| rng.below(k as u64) as u8).collect();
        let all: Vec<usize> = (0..n).collect();
        let params = TreeParams {
            max_depth: None,
            min_samples_split: 2,
            feature_subsample: FeatureSubsample::All,
        };
        let mut fit_rng = Rng::from_seed(case);
        let tree = fit_decision_tree(&x, &y, k, &all, &params, &mut fit_rng).unwrap();
        assert_splits_optimal(&tree, 0, all, &x, &y);
    }
}

#[test]
fn rf_accuracy_invariant_to_row_identity_relabeling() {
    let mut rng = Rng::from_seed(0xF0F0);
    let n = 60;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.normal(), rng.normal(), rng.normal()])
        .collect();
    let x = Matrix::from_rows(&rows);
    let y: Vec<u8> = rows
        .iter()
        .map(|r| if r[0] + 0.3 * r[1] > 0.0 { 1 } else { 0 })
        .collect();

    let params = RandomForestParams {
        n_estimators: 12,
        ..RandomForestParams::teacher_default()
    };
    let draws: Vec<Vec<usize>> = (0..params.n_estimators)
        .map(|_| (0..n).map(|_| rng.below(n as u64) as usize).collect())
        .collect();

    let perm = rng.permutation(n);
    let mut inv = vec![0usize; n];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let x_perm = x.gather_rows(&perm);
    let y_perm: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
    // Map each draw through the permutation so tree t trains on the
    // same multiset of physical rows in both fits.
    let draws_perm: Vec<Vec<usize>> = draws
        .iter()
        .map(|d| d.iter().map(|&i| inv[i]).collect())
        .collect();

    let model_a = fit_random_forest_with_bootstrap(&x, &y, 2, &params, &draws).unwrap();
    let model_b =
        fit_random_forest_with_bootstrap(&x_perm, &y_perm, 2, &params, &draws_perm).unwrap();

    let held_out: Vec<Vec<f64>> = (0..40)
        .map(|_| vec![rng.normal(), rng.normal(), rng.normal()])
        .collect();
    let hx = Matrix::from_rows(&held_out);
    let gt: Vec<u8> = held_out
        .iter()
        .map(|r| if r[0] + 0.3 * r[1] > 0.0 { 1 } else { 0 })
        .collect();
    let acc = |model| {
        let preds = rf_predict(model, &hx).unwrap();
        preds.iter().zip(&gt).filter(|(p, &g)| p.label == g).count()
    };
    assert_eq!(acc(&model_a), acc(&model_b));
}

#[test]
#[allow(clippy::needless_range_loop)]
fn gbdt_hyperparameter_pmfs_match_clamped_exponential() {
    let mut rng = Rng::from_seed(0xE5717);
    let n = 10_000usize;
    let mut est_counts = [0usize; 5];
    let mut depth_counts = [0usize; 5];
    for _ in 0..n {
        let (e, d) = sample_gbdt_hyperparams(&mut rng);
        assert!((1..=4).contains(&e), "n_estimators {e}");
        assert!((2..=4).contains(&d), "max_depth {d}");
        est_counts[e] += 1;
        depth_counts[d as usize] += 1;
    }
    // P[floor(1+X) = k] = e^{-(k-1)/2} - e^{-k/2}; P[= 4] = e^{-3/2}.
    let within_3sigma = |observed: usize, p: f64| {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let p_hat = observed as f64 / n as f64;
        (p_hat - p).abs() <= 3.0 * sigma + 1e-9
    };
    for k in 1..=3usize {
        let p = (-((k - 1) as f64) / 2.0).exp() - (-(k as f64) / 2.0).exp();
        assert!(within_3sigma(est_counts[k], p), "estimators pmf at {k}");
    }
    assert!(
        within_3sigma(est_counts[4], (-1.5f64).exp()),
        "estimators mass at 4: {} vs {}",
        est_counts[4] as f64 / n as f64,
        (-1.5f64).exp()
    );
    // max_depth = min(4, floor(2+X)): P[= 2] = 1 - e^{-1/2}, P[= 3] =
    // e^{-1/2} - e^{-1}, P[= 4] = e^{-1}.
    assert!(within_3sigma(depth_counts[2], 1.0 - (-0.5f64).exp()));
    assert!(within_3sigma(depth_counts[3], (-0.5f64).exp() - (-1.0f64).exp()));
    assert!(within_3sigma(depth_counts[4], (-1.0f64).exp()));
}
