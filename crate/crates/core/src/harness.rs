//! Chunked many-shot evaluation protocol with pluggable predictors.
//!
//! Test rows are partitioned into chunks of size N; every chunk gets a
//! fresh draw of M demonstrations, V demonstration-shuffled prompt
//! variants, and aggregated scoring. Chunk partitions depend only on the
//! seed, so shot sweeps reuse them across M values; demonstration draws
//! are fresh per (chunk, M).
//!
//! Local backends consume the same encoded [0,999] integer representation
//! the prompt text carries, and canonicalize the demonstration order
//! before fitting, which makes them order-invariant across prompt
//! variants: V = 5 and V = 1 must agree query by query, and any
//! difference is a harness bug.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::codec::{
    build_prompt_encoded, encode_task, EncodedPrompt, EncodedTask, ParseFailureKind, PromptHeader,
    TokenProfile,
};
use crate::consistency::{aggregate, hard_vote_fallback, make_variants, VariantPrediction};
use crate::error::{Error, Result};

use crate::rng::{stream_seed, Rng};
use crate::task::{TaskInstance, TaskTable};
use crate::trees::{
    fit_random_forest, knn_predict, rf_predict, KnnParams, Prediction, RandomForestModel,
    RandomForestParams,
};

const SALT_CHUNK_DEMOS: u64 = 0xD311;
const SALT_VARIANTS: u64 = 0x5113;

/// What a backend returns per variant.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutput {
    /// Per-query label probability maps (missing labels are zero).
    Probabilities(Vec<BTreeMap<u8, f64>>),
    /// Per-query parsed labels; None marks a per-query parse failure.
    Labels(Vec<Option<u8>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub output: BackendOutput,
    /// Malformations observed while producing this reply (remote only).
    pub parse_failures: Vec<ParseFailureKind>,
}

/// One variant's worth of work for a backend. Local predictors read the
/// encoded task; remote predictors read the prompt text.
pub struct PredictRequest<'a> {
    pub task: &'a TaskInstance,
    pub encoded: &'a EncodedTask,
    pub prompt: &'a EncodedPrompt,
    pub want_probabilities: bool,
}

/// A predictor. `predict_batch` receives all variants of one chunk at
/// once so implementations may process them concurrently.
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<BackendReply>>;
}

fn predictions_to_maps(preds: &[Prediction]) -> Vec<BTreeMap<u8, f64>> {
    preds
        .iter()
        .map(|p| {
            p.probabilities
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(l, &v)| (l as u8, v))
                .collect()
        })
        .collect()
}

/// Demonstration order that depends only on the demo multiset: rows
/// sorted by (cells, label). Any demonstration permutation maps to the
/// same canonical order.
pub fn canonical_demo_order(encoded: &EncodedTask) -> Vec<usize> {
    let mut order: Vec<usize> = (0..encoded.demo_rows.len()).collect();
    order.sort_by(|&a, &b| {
        encoded.demo_rows[a]
            .cmp(&encoded.demo_rows[b])
            .then(encoded.demo_labels[a].cmp(&encoded.demo_labels[b]))
    });
    order
}

/// The random-forest teacher as an evaluation backend.
pub struct RfTeacherBackend {
    pub params: RandomForestParams,
}

impl Default for RfTeacherBackend {
    fn default() -> Self {
        RfTeacherBackend {
            params: RandomForestParams::teacher_default(),
        }
    }
}

impl RfTeacherBackend {
    /// Fit the teacher on the canonicalized encoded demonstrations.
    pub fn fit_model(&self, encoded: &EncodedTask, k: usize) -> Result<RandomForestModel> {
        let order = canonical_demo_order(encoded);
        let demo = encoded.demo_matrix().gather_rows(&order);
        let labels: Vec<u8> = order.iter().map(|&i| encoded.demo_labels[i]).collect();
        fit_random_forest(&demo, &labels, k, &self.params)
    }
}

impl Backend for RfTeacherBackend {
    fn name(&self) -> &str {
        "rf-teacher"
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<BackendReply>> {
        requests
            .iter()
            .map(|req| {
                let model = self.fit_model(req.encoded, req.task.k)?;
                let preds = rf_predict(&model, &req.encoded.query_matrix())?;
                Ok(BackendReply {
                    output: BackendOutput::Probabilities(predictions_to_maps(&preds)),
                    parse_failures: Vec::new(),
                })
            })
            .collect()
    }
}

/// Instance-based kNN baseline backend.
#[derive(Default)]
pub struct KnnBackend {
    pub params: KnnParams,
}

impl Backend for KnnBackend {
    fn name(&self) -> &str {
        "knn"
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<BackendReply>> {
        requests
            .iter()
            .map(|req| {
                let order = canonical_demo_order(req.encoded);
                let demo = req.encoded.demo_matrix().gather_rows(&order);
                let labels: Vec<u8> =
                    order.iter().map(|&i| req.encoded.demo_labels[i]).collect();
                let preds = knn_predict(
                    &demo,
                    &labels,
                    &req.encoded.query_matrix(),
                    req.task.k,
                    &self.params,
                )?;
                Ok(BackendReply {
                    output: BackendOutput::Probabilities(predictions_to_maps(&preds)),
                    parse_failures: Vec::new(),
                })
            })
            .collect()
    }
}

/// Test backend that echoes the ground truth.
pub struct OracleBackend;

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<BackendReply>> {
        requests
            .iter()
            .map(|req| {
                Ok(BackendReply {
                    output: BackendOutput::Labels(
                        req.task.query_y.iter().map(|&l| Some(l)).collect(),
                    ),
                    parse_failures: Vec::new(),
                })
            })
            .collect()
    }
}

/// Test backend that always answers one label.
pub struct ConstantBackend(pub u8);

impl Backend for ConstantBackend {
    fn name(&self) -> &str {
        "constant"
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<BackendReply>> {
        requests
            .iter()
            .map(|req| {
                Ok(BackendReply {
                    output: BackendOutput::Labels(alloc::vec![Some(self.0); req.task.n()]),
                    parse_failures: Vec::new(),
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Datasets and chunk planning
// ---------------------------------------------------------------------------

/// A labeled table with a fixed train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub table: TaskTable,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Shuffle rows and split them train/test (default fraction 0.8).
pub fn split_dataset(table: TaskTable, train_fraction: f64, seed: u64) -> Result<Dataset> {
    let n = table.x.rows();
    if n < 2 {
        return Err(Error::Sizing("dataset needs at least 2 rows".into()));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Validation("train_fraction must be in (0,1)".into()));
    }
    let mut rng = Rng::from_seed(stream_seed(seed, 0x5917));
    let order = rng.permutation(n);
    let cut = ((n as f64) * train_fraction) as usize;
    let cut = cut.clamp(1, n - 1);
    Ok(Dataset {
        train_idx: order[..cut].to_vec(),
        test_idx: order[cut..].to_vec(),
        table,
    })
}

/// One chunk: which test rows it scores and which training rows serve as
/// its demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    pub chunk_index: usize,
    pub query_rows: Vec<usize>,
    pub demo_rows: Vec<usize>,
}

/// Partition the test rows into chunks of n (final partial chunk kept)
/// and draw M fresh demonstrations per chunk. Partitions depend only on
/// the dataset and seed; demo draws also depend on M.
pub fn plan_chunks(ds: &Dataset, m: usize, n: usize, seed: u64) -> Result<Vec<ChunkPlan>> {
    if m == 0 || n == 0 {
        return Err(Error::Validation("m and n must be positive".into()));
    }
    if ds.train_idx.len() < m {
        return Err(Error::Sizing(alloc::format!(
            "train split has {} rows, needs {m} demonstrations",
            ds.train_idx.len()
        )));
    }
    if ds.test_idx.is_empty() {
        return Err(Error::Sizing("test split is empty".into()));
    }
    let mut plans = Vec::new();
    for (chunk_index, chunk) in ds.test_idx.chunks(n).enumerate() {
        let demo_seed = stream_seed(
            stream_seed(seed, SALT_CHUNK_DEMOS ^ chunk_index as u64),
            m as u64,
        );
        let mut rng = Rng::from_seed(demo_seed);
        let picks = rng.choose_distinct(ds.train_idx.len(), m);
        plans.push(ChunkPlan {
            chunk_index,
            query_rows: chunk.to_vec(),
            demo_rows: picks.iter().map(|&i| ds.train_idx[i]).collect(),
        });
    }
    Ok(plans)
}

/// Materialize one chunk as a task instance.
pub fn chunk_task(ds: &Dataset, plan: &ChunkPlan, seed: u64) -> TaskInstance {
    TaskInstance {
        schema: ds.table.schema.clone(),
        k: ds.table.k,
        d: ds.table.d,
        demo_x: ds.table.x.gather_rows(&plan.demo_rows),
        demo_y: plan.demo_rows.iter().map(|&i| ds.table.y[i]).collect(),
        query_x: ds.table.x.gather_rows(&plan.query_rows),
        query_y: plan.query_rows.iter().map(|&i| ds.table.y[i]).collect(),
        seed,
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Queries per chunk.
    pub n: usize,
    /// Prompt variants per chunk.
    pub v: usize,
    pub seed: u64,
    pub header: PromptHeader,
    /// Profiles carried on built prompts (cost accounting only).
    pub profiles: Vec<TokenProfile>,
    pub want_probabilities: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n: 50,
            v: crate::consistency::DEFAULT_VARIANTS,
            seed: 0,
            header: PromptHeader::default(),
            profiles: Vec::new(),
            want_probabilities: true,
        }
    }
}

/// Outcome of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkOutcome {
    pub chunk_index: usize,
    pub correct: usize,
    pub total: usize,
    pub unresolved: usize,
    /// Chosen label per query, aligned with the chunk's query order.
    pub predictions: Vec<Option<u8>>,
}

/// One shot count's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSlice {
    pub m: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub chunks_run: usize,
    pub chunks_failed: usize,
    pub unresolved: usize,
    pub parse_failures: BTreeMap<String, u64>,
    pub chunks: Vec<ChunkOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: String,
    pub n: usize,
    pub v: usize,
    pub seed: u64,
    pub slices: Vec<EvalSlice>,
}

/// Evaluate one shot count over every chunk of the dataset.
pub fn chunk_eval(
    ds: &Dataset,
    m: usize,
    opts: &EvalOptions,
    backend: &dyn Backend,
) -> Result<EvalSlice> {
    let plans = plan_chunks(ds, m, opts.n, opts.seed)?;
    let mut slice = EvalSlice {
        m,
        accuracy: 0.0,
        correct: 0,
        total: 0,
        chunks_run: 0,
        chunks_failed: 0,
        unresolved: 0,
        parse_failures: BTreeMap::new(),
        chunks: Vec::new(),
    };
    for plan in &plans {
        let task = chunk_task(ds, plan, opts.seed);
        let mut variant_rng = Rng::from_seed(stream_seed(
            stream_seed(opts.seed, SALT_VARIANTS ^ plan.chunk_index as u64),
            m as u64,
        ));
        let variants = make_variants(&task, opts.v, &mut variant_rng);
        let encoded: Vec<EncodedTask> = variants
            .iter()
            .map(encode_task)
            .collect::<Result<_>>()?;
        let prompts: Vec<EncodedPrompt> = variants
            .iter()
            .zip(&encoded)
            .map(|(t, e)| build_prompt_encoded(t, e, &opts.header, &opts.profiles))
            .collect::<Result<_>>()?;
        let requests: Vec<PredictRequest<'_>> = variants
            .iter()
            .zip(&encoded)
            .zip(&prompts)
            .map(|((t, e), p)| PredictRequest {
                task: t,
                encoded: e,
                prompt: p,
                want_probabilities: opts.want_probabilities,
            })
            .collect();
        let replies = backend.predict_batch(&requests);

        let mut probability_variants: Vec<VariantPrediction> = Vec::new();
        let mut label_variants: Vec<Vec<Option<u8>>> = Vec::new();
        let mut failed = false;
        for (vi, reply) in replies.into_iter().enumerate() {
            match reply {
                Err(_) => {
                    failed = true;
                    break;
                }
                Ok(r) => {
                    for kind in &r.parse_failures {
                        *slice
                            .parse_failures
                            .entry(kind.as_str().into())
                            .or_insert(0) += 1;
                    }
                    match r.output {
                        BackendOutput::Probabilities(maps) => {
                            probability_variants.push(VariantPrediction {
                                variant: vi,
                                shuffle_seed: opts.seed,
                                per_query: maps,
                            })
                        }
                        BackendOutput::Labels(labels) => label_variants.push(labels),
                    }
                }
            }
        }
        if failed {
            // Excluded from accuracy but never silently dropped.
            slice.chunks_failed += 1;
            continue;
        }
        // A backend answers on one path or the other per chunk.
        let agg = if !probability_variants.is_empty() && label_variants.is_empty() {
            aggregate(&probability_variants)?
        } else if probability_variants.is_empty() && !label_variants.is_empty() {
            hard_vote_fallback(&label_variants)?
        } else {
            return Err(Error::Protocol(
                "backend mixed probability and label replies within a chunk".into(),
            ));
        };

        let mut outcome = ChunkOutcome {
            chunk_index: plan.chunk_index,
            correct: 0,
            total: task.n(),
            unresolved: 0,
            predictions: Vec::with_capacity(task.n()),
        };
        for (q, gt) in task.query_y.iter().enumerate() {
            let chosen = agg.queries[q].label;
            match chosen {
                Some(l) if l == *gt => outcome.correct += 1,
                Some(_) => {}
                None => outcome.unresolved += 1,
            }
            outcome.predictions.push(chosen);
        }
        slice.correct += outcome.correct;
        slice.total += outcome.total;
        slice.unresolved += outcome.unresolved;
        slice.chunks_run += 1;
        slice.chunks.push(outcome);
    }
    if slice.total > 0 {
        slice.accuracy = slice.correct as f64 / slice.total as f64;
    }
    Ok(slice)
}

/// Run chunk_eval for each shot count, sharing chunk partitions.
pub fn shot_sweep(
    ds: &Dataset,
    shots: &[usize],
    opts: &EvalOptions,
    backend: &dyn Backend,
) -> Result<EvalReport> {
    if shots.is_empty() {
        return Err(Error::Validation("shot list is empty".into()));
    }
    let mut slices = Vec::with_capacity(shots.len());
    for &m in shots {
        slices.push(chunk_eval(ds, m, opts, backend)?);
    }
    Ok(EvalReport {
        backend: backend.name().into(),
        n: opts.n,
        v: opts.v,
        seed: opts.seed,
        slices,
    })
}

/// Convenience: boxed backend construction by kind name, for CLI use.
pub fn local_backend(kind: &str) -> Option<Box<dyn Backend>> {
    match kind {
        "rf" | "rf-teacher" => Some(Box::new(RfTeacherBackend::default())),
        "knn" => Some(Box::new(KnnBackend::default())),
        "oracle" => Some(Box::new(OracleBackend)),
        _ => None,
    }
}
