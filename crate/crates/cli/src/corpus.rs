//! Corpus records, JSONL persistence, and sharded generation.
//!
//! A corpus file holds one admitted record per line; a parallel audit
//! file keeps the guard reports of rejected tasks so admission rates can
//! be recomputed after the fact. Generation shards task ids across
//! worker threads; records are written in task-id order, so the output
//! bytes depend only on the configuration and master seed, never on
//! scheduling.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use manyshot_core::codec::PromptCost;
use manyshot_core::guard::GuardReport;
use manyshot_core::pipeline::{build_task, BuiltTask, TaskOutcome};
use manyshot_core::task::{ColumnKind, TaskInstance};
use manyshot_core::CorpusConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSummary {
    pub numeric: usize,
    pub categorical: usize,
    /// Category count per categorical column, in column order.
    pub category_counts: Vec<usize>,
}

impl SchemaSummary {
    fn of(task: &TaskInstance) -> Self {
        let mut numeric = 0;
        let mut category_counts = Vec::new();
        for col in &task.schema.columns {
            match col {
                ColumnKind::Numeric => numeric += 1,
                ColumnKind::Categorical { categories, .. } => category_counts.push(*categories),
            }
        }
        SchemaSummary {
            numeric,
            categorical: category_counts.len(),
            category_counts,
        }
    }
}

/// One admitted task, fully materialized: data, guard statistics, the
/// rendered prompt and target, and per-profile token costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub task_id: u64,
    pub seed: u64,
    pub d: usize,
    pub k: usize,
    /// Demonstration count before and after budget truncation.
    pub m_raw: usize,
    pub m: usize,
    pub n: usize,
    pub schema: SchemaSummary,
    pub guard: GuardReport,
    pub demos: Vec<Vec<f64>>,
    pub demo_labels: Vec<u8>,
    pub queries: Vec<Vec<f64>>,
    pub query_labels: Vec<u8>,
    pub prompt: String,
    pub target: String,
    pub costs: Vec<PromptCost>,
}

impl CorpusRecord {
    pub fn from_built(built: &BuiltTask) -> Self {
        let task = &built.task;
        CorpusRecord {
            task_id: built.task_id,
            seed: built.seed,
            d: task.d,
            k: task.k,
            m_raw: built.m_raw,
            m: task.m(),
            n: task.n(),
            schema: SchemaSummary::of(task),
            guard: built.guard.clone(),
            demos: task.demo_x.iter_rows().map(|r| r.to_vec()).collect(),
            demo_labels: task.demo_y.clone(),
            queries: task.query_x.iter_rows().map(|r| r.to_vec()).collect(),
            query_labels: task.query_y.clone(),
            prompt: built.prompt.text(),
            target: built.prompt.target.clone(),
            costs: built.prompt.costs.clone(),
        }
    }
}

/// Audit record for a task id that produced no corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub task_id: u64,
    pub seed: u64,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard: Option<GuardReport>,
}

pub fn read_corpus(path: &std::path::Path) -> Result<Vec<CorpusRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(&line).with_context(|| format!("corpus line {}", i + 1))?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct GenerateSummary {
    pub processed: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub degenerate: u64,
    pub admission_rate: f64,
    pub d_histogram: BTreeMap<String, u64>,
    pub k_histogram: BTreeMap<String, u64>,
    pub m_histogram: BTreeMap<String, u64>,
}

pub fn d_bin_label(d: usize) -> String {
    let lo = [5, 15, 24, 33, 42];
    let hi = [14, 23, 32, 41, 50];
    let i = ((d.saturating_sub(5)) * 5 / 46).min(4);
    format!("d{:02}-{:02}", lo[i], hi[i])
}

pub fn m_bin_label(m: usize) -> String {
    // The policy floor is 8 shots; truncation can push below it, so the
    // lowest bin absorbs everything up to 32.
    match m {
        0..=32 => "m0001-0032".into(),
        33..=128 => "m0033-0128".into(),
        129..=512 => "m0129-0512".into(),
        _ => "m0513-1024".into(),
    }
}

fn k_bin_label(k: usize) -> String {
    match k {
        0..=4 => "k02-04".into(),
        5..=7 => "k05-07".into(),
        _ => "k08-10".into(),
    }
}

enum WorkerMsg {
    Admitted(Box<CorpusRecord>),
    Rejected(Box<RejectedRecord>),
    Error(String),
}

fn outcome_to_msg(outcome: TaskOutcome) -> WorkerMsg {
    match outcome {
        TaskOutcome::Admitted(built) => WorkerMsg::Admitted(Box::new(CorpusRecord::from_built(&built))),
        TaskOutcome::Rejected {
            task_id,
            seed,
            d,
            k,
            m,
            guard,
        } => WorkerMsg::Rejected(Box::new(RejectedRecord {
            task_id,
            seed,
            reason: "guard".into(),
            d: Some(d),
            k: Some(k),
            m: Some(m),
            guard: Some(guard),
        })),
        TaskOutcome::Degenerate {
            task_id,
            seed,
            reason,
        } => WorkerMsg::Rejected(Box::new(RejectedRecord {
            task_id,
            seed,
            reason,
            d: None,
            k: None,
            m: None,
            guard: None,
        })),
    }
}

/// Generate admitted records until `count` are written, streaming JSONL
/// in task-id order. Returns the run summary.
pub fn generate(
    config: &CorpusConfig,
    count: u64,
    workers: usize,
    out: &mut dyn Write,
    mut rejected_out: Option<&mut dyn Write>,
) -> Result<GenerateSummary> {
    let workers = workers.max(1);
    let next_id = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(u64, WorkerMsg)>();

    let mut summary = GenerateSummary::default();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let next_id = &next_id;
            let stop = &stop;
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let id = next_id.fetch_add(1, Ordering::Relaxed);
                    let msg = match build_task(config, id) {
                        Ok(outcome) => outcome_to_msg(outcome),
                        Err(e) => WorkerMsg::Error(format!("task {id}: {e}")),
                    };
                    if tx.send((id, msg)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        // Reorder buffer: admit strictly in task-id order so output bytes
        // are independent of worker scheduling.
        let mut pending: BTreeMap<u64, WorkerMsg> = BTreeMap::new();
        let mut write_at = 0u64;
        'collect: while summary.admitted < count {
            let (id, msg) = match rx.recv() {
                Ok(pair) => pair,
                Err(_) => break 'collect,
            };
            pending.insert(id, msg);
            while let Some(msg) = pending.remove(&write_at) {
                write_at += 1;
                summary.processed += 1;
                match msg {
                    WorkerMsg::Error(e) => {
                        stop.store(true, Ordering::Relaxed);
                        bail!("{e}");
                    }
                    WorkerMsg::Admitted(record) => {
                        summary.admitted += 1;
                        *summary
                            .d_histogram
                            .entry(d_bin_label(record.d))
                            .or_default() += 1;
                        *summary
                            .k_histogram
                            .entry(k_bin_label(record.k))
                            .or_default() += 1;
                        *summary
                            .m_histogram
                            .entry(m_bin_label(record.m))
                            .or_default() += 1;
                        serde_json::to_writer(&mut *out, &record)?;
                        out.write_all(b"\n")?;
                        if summary.admitted >= count {
                            break;
                        }
                    }
                    WorkerMsg::Rejected(record) => {
                        if record.guard.is_some() {
                            summary.rejected += 1;
                        } else {
                            summary.degenerate += 1;
                        }
                        if let Some(w) = rejected_out.as_deref_mut() {
                            serde_json::to_writer(&mut *w, &record)?;
                            w.write_all(b"\n")?;
                        }
                    }
                }
            }
        }
        stop.store(true, Ordering::Relaxed);
        // Drain remaining messages so workers can exit send().
        while rx.try_recv().is_ok() {}
        Ok(())
    })?;

    if summary.admitted < count {
        bail!(
            "generation stalled: {} of {count} tasks admitted",
            summary.admitted
        );
    }
    summary.admission_rate = summary.admitted as f64 / summary.processed as f64;
    out.flush()?;
    Ok(summary)
}
