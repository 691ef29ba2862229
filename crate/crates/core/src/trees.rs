//! From-scratch tree learners: CART decision trees (Gini), a bagged
//! random-forest classifier, a multi-output gradient-boosted regression
//! ensemble, and a brute-force kNN classifier.
//!
//! Splits use midpoint thresholds between consecutive sorted feature
//! values, Gini impurity for classification and summed per-output
//! variance reduction for regression. min_samples_split is 2 and there
//! is no pruning; the shallow depth caps used by the SCM regressors are
//! the only regularizer they need.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream_seed, Rng};

/// Node of a classification tree. Leaves store training class counts so
/// predictions can expose leaf frequencies as probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum ClsNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<ClsNode>,
    pub n_classes: usize,
    pub n_features: usize,
    pub depth: u32,
}

impl DecisionTree {
    /// Leaf class counts for one row.
    pub fn leaf_counts(&self, row: &[f64]) -> &[u32] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                ClsNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                ClsNode::Leaf { counts } => return counts,
            }
        }
    }

    /// Leaf class frequencies (sum to 1).
    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let counts = self.leaf_counts(row);
        let total: u32 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSubsample {
    All,
    /// max(1, floor(sqrt(d))) features per split.
    Sqrt,
}

impl FeatureSubsample {
    fn count(&self, d: usize) -> usize {
        match self {
            FeatureSubsample::All => d,
            FeatureSubsample::Sqrt => {
                let k = libm::sqrt(d as f64) as usize;
                k.max(1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<u32>,
    pub min_samples_split: usize,
    pub feature_subsample: FeatureSubsample,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            feature_subsample: FeatureSubsample::All,
        }
    }
}

fn gini(counts: &[u32], total: f64) -> f64 {
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / total;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

struct ClsBuilder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    n_classes: usize,
    params: &'a TreeParams,
    nodes: Vec<ClsNode>,
    depth: u32,
}

impl<'a> ClsBuilder<'a> {
    fn class_counts(&self, rows: &[usize]) -> Vec<u32> {
        let mut counts = alloc::vec![0u32; self.n_classes];
        for &i in rows {
            counts[self.y[i] as usize] += 1;
        }
        counts
    }

    /// Best (feature, threshold, weighted child Gini) over the candidate
    /// features, or None when no feature admits a split. First strictly
    /// better candidate wins, so ties resolve in candidate order.
    fn best_split(
        &self,
        rows: &[usize],
        candidates: &[usize],
    ) -> Option<(usize, f64, f64)> {
        let n = rows.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &feature in candidates {
            order.sort_unstable_by(|&a, &b| {
                self.x
                    .get(a, feature)
                    .partial_cmp(&self.x.get(b, feature))
                    .unwrap()
            });
            let mut left = alloc::vec![0u32; self.n_classes];
            let mut right = self.class_counts(&order);
            let mut n_left = 0.0;
            for w in 0..order.len() - 1 {
                let i = order[w];
                let c = self.y[i] as usize;
                left[c] += 1;
                right[c] -= 1;
                n_left += 1.0;
                let v = self.x.get(i, feature);
                let v_next = self.x.get(order[w + 1], feature);
                if v_next <= v {
                    continue; // no boundary between equal values
                }
                let n_right = n - n_left;
                let weighted =
                    (n_left * gini(&left, n_left) + n_right * gini(&right, n_right)) / n;
                let improves = match best {
                    None => true,
                    Some((_, _, cur)) => weighted < cur - 1e-12,
                };
                if improves {
                    best = Some((feature, 0.5 * (v + v_next), weighted));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &[usize], depth: u32, rng: &mut Rng) -> usize {
        self.depth = self.depth.max(depth);
        let counts = self.class_counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || rows.len() < self.params.min_samples_split {
            let id = self.nodes.len();
            self.nodes.push(ClsNode::Leaf { counts });
            return id;
        }

        let d = self.x.cols();
        let k = self.params.feature_subsample.count(d);
        let candidates = if k >= d {
            (0..d).collect()
        } else {
            rng.choose_distinct(d, k)
        };

        match self.best_split(rows, &candidates) {
            None => {
                let id = self.nodes.len();
                self.nodes.push(ClsNode::Leaf { counts });
                id
            }
            Some((feature, threshold, _)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.x.get(i, feature) <= threshold);
                let id = self.nodes.len();
                self.nodes.push(ClsNode::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let left = self.build(&left_rows, depth + 1, rng);
                let right = self.build(&right_rows, depth + 1, rng);
                if let ClsNode::Split {
                    left: l, right: r, ..
                } = &mut self.nodes[id]
                {
                    *l = left;
                    *r = right;
                }
                id
            }
        }
    }
}

/// Fit a single CART classifier on the given row subset.
pub fn fit_decision_tree(
    x: &Matrix,
    y: &[u8],
    n_classes: usize,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    if rows.is_empty() || x.rows() == 0 {
        return Err(Error::Sizing("cannot fit a tree on zero rows".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::Validation("label count != row count".into()));
    }
    let mut builder = ClsBuilder {
        x,
        y,
        n_classes,
        params,
        nodes: Vec::new(),
        depth: 0,
    };
    builder.build(rows, 0, rng);
    Ok(DecisionTree {
        nodes: builder.nodes,
        n_classes,
        n_features: x.cols(),
        depth: builder.depth,
    })
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<u32>,
    pub min_samples_split: usize,
    pub feature_subsample: FeatureSubsample,
    pub seed: u64,
}

impl RandomForestParams {
    /// Teacher/baseline configuration: 30 trees, fixed seed, sqrt(d)
    /// features per split, unlimited depth.
    pub fn teacher_default() -> Self {
        RandomForestParams {
            n_estimators: 30,
            max_depth: None,
            min_samples_split: 2,
            feature_subsample: FeatureSubsample::Sqrt,
            seed: TEACHER_SEED,
        }
    }
}

/// Fixed random state of the teacher forest.
pub const TEACHER_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub bootstrap_seeds: Vec<u64>,
    pub n_classes: usize,
    pub n_features: usize,
    pub params: RandomForestParams,
}

/// One prediction: argmax label plus the full probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub probabilities: Vec<f64>,
}

/// Lowest class id wins exact ties.
pub fn argmax_label(scores: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best as u8
}

pub fn fit_random_forest(
    x: &Matrix,
    y: &[u8],
    n_classes: usize,
    params: &RandomForestParams,
) -> Result<RandomForestModel> {
    if x.rows() == 0 {
        return Err(Error::Sizing("empty training set".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::Validation("label count != row count".into()));
    }
    if y.iter().any(|&l| l as usize >= n_classes) {
        return Err(Error::Validation("label out of range".into()));
    }
    let n = x.rows();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        feature_subsample: params.feature_subsample,
    };
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut bootstrap_seeds = Vec::with_capacity(params.n_estimators);
    for t in 0..params.n_estimators {
        let tree_seed = stream_seed(params.seed, t as u64);
        bootstrap_seeds.push(tree_seed);
        let mut rng = Rng::from_seed(tree_seed);
        let rows: Vec<usize> = (0..n).map(|_| rng.below(n as u64) as usize).collect();
        trees.push(fit_decision_tree(x, y, n_classes, &rows, &tree_params, &mut rng)?);
    }
    Ok(RandomForestModel {
        trees,
        bootstrap_seeds,
        n_classes,
        n_features: x.cols(),
        params: params.clone(),
    })
}

/// Forest fit with explicit bootstrap draws; the public fit derives the
/// draws from per-tree seeds. Exposed so row-identity invariance can be
/// asserted directly in tests.
pub fn fit_random_forest_with_bootstrap(
    x: &Matrix,
    y: &[u8],
    n_classes: usize,
    params: &RandomForestParams,
    draws: &[Vec<usize>],
) -> Result<RandomForestModel> {
    if draws.len() != params.n_estimators {
        return Err(Error::Validation("one draw per estimator required".into()));
    }
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        feature_subsample: params.feature_subsample,
    };
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut bootstrap_seeds = Vec::with_capacity(params.n_estimators);
    for (t, rows) in draws.iter().enumerate() {
        let tree_seed = stream_seed(params.seed, t as u64);
        bootstrap_seeds.push(tree_seed);
        // Skip past the bootstrap portion of the stream so feature
        // sampling matches the seed-derived fit.
        let mut rng = Rng::from_seed(tree_seed);
        for _ in 0..x.rows() {
            rng.below(x.rows() as u64);
        }
        trees.push(fit_decision_tree(x, y, n_classes, rows, &tree_params, &mut rng)?);
    }
    Ok(RandomForestModel {
        trees,
        bootstrap_seeds,
        n_classes,
        n_features: x.cols(),
        params: params.clone(),
    })
}

/// Mean of per-tree leaf frequencies; argmax with lowest-id tie-break.
pub fn rf_predict(model: &RandomForestModel, x: &Matrix) -> Result<Vec<Prediction>> {
    if x.cols() != model.n_features {
        return Err(Error::Schema(alloc::format!(
            "model expects {} features, input has {}",
            model.n_features,
            x.cols()
        )));
    }
    let mut out = Vec::with_capacity(x.rows());
    for row in x.iter_rows() {
        let mut probs = alloc::vec![0.0f64; model.n_classes];
        for tree in &model.trees {
            for (p, q) in probs.iter_mut().zip(tree.predict_proba(row)) {
                *p += q;
            }
        }
        let inv = 1.0 / model.trees.len() as f64;
        for p in &mut probs {
            *p *= inv;
        }
        out.push(Prediction {
            label: argmax_label(&probs),
            probabilities: probs,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Multi-output regression trees and gradient boosting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<RegNode>,
    pub out_dim: usize,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> &[f64] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                RegNode::Leaf { value } => return value,
            }
        }
    }
}

struct RegBuilder<'a> {
    x: &'a Matrix,
    targets: &'a Matrix, // n x out_dim
    max_depth: u32,
    min_samples_split: usize,
    nodes: Vec<RegNode>,
}

impl<'a> RegBuilder<'a> {
    fn mean_vector(&self, rows: &[usize]) -> Vec<f64> {
        let out_dim = self.targets.cols();
        let mut mean = alloc::vec![0.0f64; out_dim];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(self.targets.row(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }

    /// Summed-over-outputs SSE split search; smaller is better, first
    /// strictly better candidate wins.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let out_dim = self.targets.cols();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for feature in 0..self.x.cols() {
            order.sort_unstable_by(|&a, &b| {
                self.x
                    .get(a, feature)
                    .partial_cmp(&self.x.get(b, feature))
                    .unwrap()
            });
            let mut left_sum = alloc::vec![0.0f64; out_dim];
            let mut left_sq = alloc::vec![0.0f64; out_dim];
            let mut right_sum = alloc::vec![0.0f64; out_dim];
            let mut right_sq = alloc::vec![0.0f64; out_dim];
            for &i in &order {
                for (o, v) in self.targets.row(i).iter().enumerate() {
                    right_sum[o] += v;
                    right_sq[o] += v * v;
                }
            }
            let mut n_left = 0.0f64;
            let n = rows.len() as f64;
            for w in 0..order.len() - 1 {
                let i = order[w];
                for (o, v) in self.targets.row(i).iter().enumerate() {
                    left_sum[o] += v;
                    left_sq[o] += v * v;
                    right_sum[o] -= v;
                    right_sq[o] -= v * v;
                }
                n_left += 1.0;
                let v = self.x.get(i, feature);
                let v_next = self.x.get(order[w + 1], feature);
                if v_next <= v {
                    continue;
                }
                let n_right = n - n_left;
                let mut sse = 0.0;
                for o in 0..out_dim {
                    sse += left_sq[o] - left_sum[o] * left_sum[o] / n_left;
                    sse += right_sq[o] - right_sum[o] * right_sum[o] / n_right;
                }
                let improves = match best {
                    None => true,
                    Some((_, _, cur)) => sse < cur - 1e-12,
                };
                if improves {
                    best = Some((feature, 0.5 * (v + v_next), sse));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &[usize], depth: u32) -> usize {
        if depth >= self.max_depth || rows.len() < self.min_samples_split {
            let id = self.nodes.len();
            let value = self.mean_vector(rows);
            self.nodes.push(RegNode::Leaf { value });
            return id;
        }
        match self.best_split(rows) {
            None => {
                let id = self.nodes.len();
                let value = self.mean_vector(rows);
                self.nodes.push(RegNode::Leaf { value });
                id
            }
            Some((feature, threshold, _)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.x.get(i, feature) <= threshold);
                let id = self.nodes.len();
                self.nodes.push(RegNode::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let left = self.build(&left_rows, depth + 1);
                let right = self.build(&right_rows, depth + 1);
                if let RegNode::Split {
                    left: l, right: r, ..
                } = &mut self.nodes[id]
                {
                    *l = left;
                    *r = right;
                }
                id
            }
        }
    }
}

/// Squared-error gradient-boosted multi-output regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRegressor {
    pub stages: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub base: Vec<f64>,
    pub n_estimators: usize,
    pub max_depth: u32,
    pub n_features: usize,
    /// Training MSE after each stage, for loss-monotonicity audits.
    pub stage_mse: Vec<f64>,
}

impl TreeRegressor {
    pub fn out_dim(&self) -> usize {
        self.base.len()
    }

    pub fn predict(&self, row: &[f64]) -> Vec<f64> {
        let mut out = self.base.clone();
        for stage in &self.stages {
            for (o, v) in out.iter_mut().zip(stage.predict(row)) {
                *o += self.learning_rate * v;
            }
        }
        out
    }
}

pub const GBDT_LEARNING_RATE: f64 = 0.3;

/// Squared-error boosting: base prediction is the column mean of `y`,
/// each stage fits the residuals. Training loss is non-increasing per
/// stage by construction (leaf values are residual means).
pub fn fit_gbdt_regressor(
    x: &Matrix,
    y: &Matrix,
    n_estimators: usize,
    max_depth: u32,
) -> Result<TreeRegressor> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Degenerate(alloc::format!(
            "gbdt needs at least 2 rows, got {n}"
        )));
    }
    if y.rows() != n {
        return Err(Error::Validation("target count != row count".into()));
    }
    let out_dim = y.cols();
    let rows: Vec<usize> = (0..n).collect();

    let mut base = alloc::vec![0.0f64; out_dim];
    for row in y.iter_rows() {
        for (b, v) in base.iter_mut().zip(row) {
            *b += v;
        }
    }
    for b in &mut base {
        *b /= n as f64;
    }

    let mut preds: Vec<Vec<f64>> = (0..n).map(|_| base.clone()).collect();
    let mut stages = Vec::with_capacity(n_estimators);
    let mut stage_mse = Vec::with_capacity(n_estimators);
    for _ in 0..n_estimators {
        let mut residuals = Matrix::zeros(n, out_dim);
        for (i, pred) in preds.iter().enumerate() {
            for (o, p) in pred.iter().enumerate() {
                residuals.set(i, o, y.get(i, o) - p);
            }
        }
        let mut builder = RegBuilder {
            x,
            targets: &residuals,
            max_depth,
            min_samples_split: 2,
            nodes: Vec::new(),
        };
        builder.build(&rows, 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
            out_dim,
        };
        for (i, pred) in preds.iter_mut().enumerate() {
            for (p, v) in pred.iter_mut().zip(tree.predict(x.row(i))) {
                *p += GBDT_LEARNING_RATE * v;
            }
        }
        stages.push(tree);
        let mut mse = 0.0;
        for (i, pred) in preds.iter().enumerate() {
            for (o, p) in pred.iter().enumerate() {
                let e = y.get(i, o) - p;
                mse += e * e;
            }
        }
        stage_mse.push(mse / (n * out_dim) as f64);
    }

    Ok(TreeRegressor {
        stages,
        learning_rate: GBDT_LEARNING_RATE,
        base,
        n_estimators,
        max_depth,
        n_features: x.cols(),
        stage_mse,
    })
}

// ---------------------------------------------------------------------------
// kNN
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    pub minkowski_p: f64,
}

impl Default for KnnParams {
    /// Baseline configuration: 8 neighbors, inverse-distance weights,
    /// Minkowski p = 2.
    fn default() -> Self {
        KnnParams {
            k: 8,
            minkowski_p: 2.0,
        }
    }
}

fn minkowski(a: &[f64], b: &[f64], p: f64) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = libm::fabs(x - y);
        acc += libm::pow(d, p);
    }
    libm::pow(acc, 1.0 / p)
}

/// Inverse-distance-weighted vote among the k nearest neighbors. A query
/// that exactly matches a training point takes that point's label
/// outright (first such point by index). Scores are normalized to sum
/// to one. k is clamped to the training size.
pub fn knn_predict(
    train_x: &Matrix,
    train_y: &[u8],
    query_x: &Matrix,
    n_classes: usize,
    params: &KnnParams,
) -> Result<Vec<Prediction>> {
    if train_x.rows() == 0 {
        return Err(Error::Sizing("empty training set".into()));
    }
    if query_x.cols() != train_x.cols() {
        return Err(Error::Schema(alloc::format!(
            "train has {} features, query has {}",
            train_x.cols(),
            query_x.cols()
        )));
    }
    if train_y.len() != train_x.rows() {
        return Err(Error::Validation("label count != row count".into()));
    }
    let k = params.k.min(train_x.rows());
    let mut out = Vec::with_capacity(query_x.rows());
    for q in query_x.iter_rows() {
        let mut dists: Vec<(f64, usize)> = train_x
            .iter_rows()
            .enumerate()
            .map(|(i, t)| (minkowski(q, t, params.minkowski_p), i))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut scores = alloc::vec![0.0f64; n_classes];
        if dists[0].0 == 0.0 {
            scores[train_y[dists[0].1] as usize] = 1.0;
        } else {
            for &(d, i) in dists.iter().take(k) {
                scores[train_y[i] as usize] += 1.0 / d;
            }
            let total: f64 = scores.iter().sum();
            for s in &mut scores {
                *s /= total;
            }
        }
        out.push(Prediction {
            label: argmax_label(&scores),
            probabilities: scores,
        });
    }
    Ok(out)
}
