//! End-to-end task construction: sample an SCM, propagate rows, type the
//! features, bin the labels, split demonstrations/queries, truncate to
//! the token budget, gate through the teacher guard, optionally apply
//! the warm-up consensus filter, and render the prompt.
//!
//! Every task id maps to its own RNG stream derived from the master
//! seed, so generation parallelizes across ids with bit-identical output
//! regardless of scheduling.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::codec::{build_prompt, EncodedPrompt, TokenProfile};
use crate::config::CorpusConfig;
use crate::error::{Error, Result};
use crate::guard::{consensus_filter, evaluate_guard, GuardReport};
use crate::harness::RfTeacherBackend;
use crate::rng::{stream_seed, Rng};
use crate::scm::{materialize, propagate, sample_structure};
use crate::task::{assemble_task, bin_labels, truncate_to_budget, typed_features, TaskInstance, TaskTable};
use crate::trees::rf_predict;

const SALT_SCM: u64 = 0x11AA;
const SALT_TASK: u64 = 0x22BB;
const SALT_PROP: u64 = 0x33CC;
const SALT_CONSENSUS: u64 = 0x44DD;

/// The cheap-to-sample shape of a task: used for policy-level coverage
/// audits without running the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskShape {
    pub d: usize,
    pub k: usize,
    pub m_raw: usize,
}

fn sample_m(config: &CorpusConfig, rng: &mut Rng) -> usize {
    if config.m_min == config.m_max {
        return config.m_min;
    }
    // Log-uniform over [m_min, m_max]: spreads tasks across shot-count
    // decades instead of piling mass at large M.
    let lo = libm::log2(config.m_min as f64);
    let hi = libm::log2(config.m_max as f64);
    let m = libm::round(libm::exp2(rng.uniform(lo, hi))) as usize;
    m.clamp(config.m_min, config.m_max)
}

fn shape_draws(config: &CorpusConfig, rng: &mut Rng) -> (usize, usize) {
    let m_raw = sample_m(config, rng);
    let k = rng.range_inclusive(config.k_min as u64, config.k_max as u64) as usize;
    (m_raw, k)
}

pub fn task_seed(config: &CorpusConfig, task_id: u64) -> u64 {
    stream_seed(config.master_seed, task_id)
}

/// Sample only (d, K, M) for a task id, exactly as `build_task` would.
pub fn task_shape(config: &CorpusConfig, task_id: u64) -> Result<TaskShape> {
    let seed = task_seed(config, task_id);
    let structure = sample_structure(config, stream_seed(seed, SALT_SCM))?;
    let mut rng = Rng::from_seed(stream_seed(seed, SALT_TASK));
    let (m_raw, k) = shape_draws(config, &mut rng);
    Ok(TaskShape {
        d: structure.d,
        k,
        m_raw,
    })
}

/// Fit the teacher forest on a task's encoded demonstrations and predict
/// its queries. Shared by the pipeline and by audits that need to verify
/// consensus output against the same teacher.
pub fn fit_teacher(task: &TaskInstance) -> Result<(crate::trees::RandomForestModel, Vec<u8>)> {
    let backend = RfTeacherBackend::default();
    let encoded = crate::codec::encode_task(task)?;
    let model = backend.fit_model(&encoded, task.k)?;
    let preds = rf_predict(&model, &encoded.query_matrix())?;
    Ok((model, preds.into_iter().map(|p| p.label).collect()))
}

/// A fully built, admitted task.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltTask {
    pub task_id: u64,
    pub seed: u64,
    pub m_raw: usize,
    /// Final task: post-truncation and, in warm-up mode, post-consensus.
    pub task: TaskInstance,
    /// Queries as they stood when the guard ran (pre-consensus), with
    /// the teacher's predictions on them.
    pub pre_consensus: Option<TaskInstance>,
    pub teacher_preds: Vec<u8>,
    pub guard: GuardReport,
    pub prompt: EncodedPrompt,
}

/// Why a task id produced no admitted record.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutcome {
    Admitted(Box<BuiltTask>),
    /// Guard evaluated and failed.
    Rejected {
        task_id: u64,
        seed: u64,
        d: usize,
        k: usize,
        m: usize,
        guard: GuardReport,
    },
    /// Never reached the guard (degenerate target, budget too small,
    /// consensus left nothing).
    Degenerate {
        task_id: u64,
        seed: u64,
        reason: String,
    },
}

fn cost_profiles(config: &CorpusConfig) -> Vec<TokenProfile> {
    let mut profiles = alloc::vec![TokenProfile::merged_3digit(), TokenProfile::digit_level()];
    if !profiles.iter().any(|p| p.name == config.budget_profile.name) {
        profiles.insert(0, config.budget_profile.clone());
    }
    profiles
}

/// Run the full pipeline for one task id.
pub fn build_task(config: &CorpusConfig, task_id: u64) -> Result<TaskOutcome> {
    config.validate()?;
    let seed = task_seed(config, task_id);
    let degenerate = |reason: String| {
        Ok(TaskOutcome::Degenerate {
            task_id,
            seed,
            reason,
        })
    };

    let structure = sample_structure(config, stream_seed(seed, SALT_SCM))?;
    let scm = materialize(&structure, config)?;
    let mut rng = Rng::from_seed(stream_seed(seed, SALT_TASK));
    let (m_raw, k) = shape_draws(config, &mut rng);
    let n = config.n_queries;

    let raw = propagate(&scm, m_raw + n, stream_seed(seed, SALT_PROP))?;
    let (x, schema) = typed_features(&raw, config, &mut rng);
    let y = match bin_labels(&raw.target, k, &mut rng) {
        Ok(y) => y,
        Err(Error::Degenerate(msg)) => return degenerate(msg),
        Err(e) => return Err(e),
    };
    let table = TaskTable {
        schema,
        x,
        y,
        k,
        d: scm.d,
    };
    let mut task = assemble_task(&table, m_raw, n, &mut rng)?;
    task.seed = seed;

    let task = match truncate_to_budget(
        task,
        config.token_budget,
        &config.budget_profile,
        &config.header,
    ) {
        Ok(t) => t,
        Err(Error::Budget(msg)) => return degenerate(msg),
        Err(e) => return Err(e),
    };

    let (_, teacher_preds) = fit_teacher(&task)?;
    let guard = evaluate_guard(&task, &teacher_preds, &config.guard)?;
    if !guard.pass {
        return Ok(TaskOutcome::Rejected {
            task_id,
            seed,
            d: task.d,
            k: task.k,
            m: task.m(),
            guard,
        });
    }

    let (final_task, pre_consensus) = if config.guard.consensus {
        let mut consensus_rng = Rng::from_seed(stream_seed(seed, SALT_CONSENSUS));
        match consensus_filter(&task, &teacher_preds, &config.guard, &mut consensus_rng) {
            Ok(filtered) => (filtered, Some(task)),
            Err(Error::Degenerate(msg)) => return degenerate(msg),
            Err(e) => return Err(e),
        }
    } else {
        (task, None)
    };

    let prompt = build_prompt(&final_task, &config.header, &cost_profiles(config))?;
    Ok(TaskOutcome::Admitted(Box::new(BuiltTask {
        task_id,
        seed,
        m_raw,
        task: final_task,
        pre_consensus,
        teacher_preds,
        guard,
        prompt,
    })))
}

/// Build one synthetic dataset (no guard) for evaluation runs: SCM
/// propagation, feature typing, and label binning over `rows` samples.
pub fn synthesize_dataset(config: &CorpusConfig, rows: usize, seed: u64) -> Result<TaskTable> {
    let structure = sample_structure(config, stream_seed(seed, SALT_SCM))?;
    let scm = materialize(&structure, config)?;
    let mut rng = Rng::from_seed(stream_seed(seed, SALT_TASK));
    let (_, k) = shape_draws(config, &mut rng);
    let raw = propagate(&scm, rows, stream_seed(seed, SALT_PROP))?;
    let (x, schema) = typed_features(&raw, config, &mut rng);
    let y = bin_labels(&raw.target, k, &mut rng)?;
    Ok(TaskTable {
        schema,
        x,
        y,
        k,
        d: scm.d,
    })
}
