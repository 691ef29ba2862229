//! Turn raw SCM samples into typed classification tasks: categorical
//! feature typing via quantile binning, K-way label formation from the
//! scalar target, demonstration/query splitting, and token-budget
//! truncation.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::codec::{build_prompt, token_cost, PromptHeader, TokenProfile};
use crate::config::CorpusConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::scm::RawMatrix;

/// Column type. Categorical columns carry their bin count and the id
/// permutation applied to destroy ordinal hints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical { categories: usize, id_map: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub columns: Vec<ColumnKind>,
}

impl ColumnSchema {
    pub fn all_numeric(d: usize) -> Self {
        ColumnSchema {
            columns: alloc::vec![ColumnKind::Numeric; d],
        }
    }

    pub fn categorical_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| matches!(c, ColumnKind::Categorical { .. }))
            .count()
    }
}

/// A typed, labeled table before the demonstration/query split.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTable {
    pub schema: ColumnSchema,
    pub x: Matrix,
    pub y: Vec<u8>,
    pub k: usize,
    pub d: usize,
}

/// One serializable task: M labeled demonstrations and N queries whose
/// ids are their row positions (0-indexed). Ground-truth query labels
/// are carried for scoring but never enter the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub schema: ColumnSchema,
    pub k: usize,
    pub d: usize,
    pub demo_x: Matrix,
    pub demo_y: Vec<u8>,
    pub query_x: Matrix,
    pub query_y: Vec<u8>,
    pub seed: u64,
}

impl TaskInstance {
    pub fn m(&self) -> usize {
        self.demo_x.rows()
    }

    pub fn n(&self) -> usize {
        self.query_x.rows()
    }

    pub fn query_ids(&self) -> Vec<u32> {
        (0..self.n() as u32).collect()
    }
}

/// Quantile-bin one column into `bins` equal-mass categories. Bin edges
/// are drawn from the empirical values, so duplicates can leave some
/// categories empty; a zero-variance column collapses to one category.
fn quantile_bin(values: &[f64], bins: usize) -> (Vec<u16>, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return (alloc::vec![0u16; n], 1);
    }
    let mut edges = Vec::with_capacity(bins - 1);
    for j in 1..bins {
        edges.push(sorted[j * n / bins]);
    }
    let assign = |v: f64| -> u16 { edges.iter().filter(|&&e| e <= v).count() as u16 };
    (values.iter().map(|&v| assign(v)).collect(), bins)
}

/// Make a sampled fraction of columns categorical. The fraction is
/// uniform over [0, categorical_fraction_max]; each categorical column
/// gets a bin count from the configured range and its ids shuffled with
/// probability `id_shuffle_prob`.
pub fn typed_features(
    raw: &RawMatrix,
    config: &CorpusConfig,
    rng: &mut Rng,
) -> (Matrix, ColumnSchema) {
    let d = raw.features.cols();
    let cat_fraction = rng.uniform(0.0, config.categorical_fraction_max);
    let cat_count = libm::floor(cat_fraction * d as f64) as usize;
    let cat_cols = rng.choose_distinct(d, cat_count);

    let mut out = raw.features.clone();
    let mut columns = alloc::vec![ColumnKind::Numeric; d];
    for &j in &cat_cols {
        let bins =
            rng.range_inclusive(config.cat_bins_min as u64, config.cat_bins_max as u64) as usize;
        let (assigned, categories) = quantile_bin(&raw.features.column(j), bins);
        let id_map: Vec<u16> = if rng.bernoulli(config.id_shuffle_prob) {
            let mut ids: Vec<u16> = (0..categories as u16).collect();
            rng.shuffle(&mut ids);
            ids
        } else {
            (0..categories as u16).collect()
        };
        for (i, &bin) in assigned.iter().enumerate() {
            out.set(i, j, id_map[bin as usize] as f64);
        }
        columns[j] = ColumnKind::Categorical {
            categories,
            id_map,
        };
    }
    (out, ColumnSchema { columns })
}

/// Bin the scalar target into K classes using ordered bounds drawn from
/// its empirical values, then permute the class ids.
pub fn bin_labels(y_star: &[f64], k: usize, rng: &mut Rng) -> Result<Vec<u8>> {
    bin_labels_with_permutation(y_star, k, rng, None)
}

/// Test hook: an explicit permutation overrides the random one (identity
/// keeps labels monotone in y*).
pub fn bin_labels_with_permutation(
    y_star: &[f64],
    k: usize,
    rng: &mut Rng,
    permutation: Option<&[u8]>,
) -> Result<Vec<u8>> {
    if !(2..=255).contains(&k) {
        return Err(Error::Validation(alloc::format!("k = {k} out of range")));
    }
    let mut distinct = y_star.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Degenerate(alloc::format!(
            "target has {} distinct values, needs at least {k}",
            distinct.len()
        )));
    }

    // Draw K-1 distinct bound values from the empirical distribution;
    // fall back to evenly spaced distinct values if rejection stalls.
    let mut bounds: Vec<f64> = Vec::with_capacity(k - 1);
    let mut attempts = 0;
    while bounds.len() < k - 1 && attempts < 64 * k {
        attempts += 1;
        let v = y_star[rng.below(y_star.len() as u64) as usize];
        if !bounds.contains(&v) {
            bounds.push(v);
        }
    }
    if bounds.len() < k - 1 {
        bounds.clear();
        for j in 1..k {
            bounds.push(distinct[j * distinct.len() / k]);
        }
        bounds.dedup();
        if bounds.len() < k - 1 {
            return Err(Error::Degenerate(
                "could not place distinct class bounds".into(),
            ));
        }
    }
    bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let perm: Vec<u8> = match permutation {
        Some(p) => {
            if p.len() != k {
                return Err(Error::Validation("permutation length != k".into()));
            }
            p.to_vec()
        }
        None => {
            let mut ids: Vec<u8> = (0..k as u8).collect();
            rng.shuffle(&mut ids);
            ids
        }
    };

    Ok(apply_bounds(y_star, &bounds, &perm))
}

/// Label = permuted index of the half-open interval [τ_{k-1}, τ_k) the
/// value falls in, with -inf and +inf sentinels at the ends.
pub fn apply_bounds(y_star: &[f64], bounds: &[f64], perm: &[u8]) -> Vec<u8> {
    y_star
        .iter()
        .map(|&v| {
            let bin = bounds.iter().filter(|&&b| b <= v).count();
            perm[bin]
        })
        .collect()
}

/// Split a table into M demonstrations and N queries. Rows are drawn
/// without replacement; query ids are their positions after the
/// within-sequence shuffle.
pub fn assemble_task(table: &TaskTable, m: usize, n: usize, rng: &mut Rng) -> Result<TaskInstance> {
    if m == 0 || n == 0 {
        return Err(Error::Sizing("m and n must be positive".into()));
    }
    if table.x.rows() < m + n {
        return Err(Error::Sizing(alloc::format!(
            "table has {} rows, needs {}",
            table.x.rows(),
            m + n
        )));
    }
    let order = rng.choose_distinct(table.x.rows(), m + n);
    let (query_rows, demo_rows) = order.split_at(n);
    Ok(TaskInstance {
        schema: table.schema.clone(),
        k: table.k,
        d: table.d,
        demo_x: table.x.gather_rows(demo_rows),
        demo_y: demo_rows.iter().map(|&i| table.y[i]).collect(),
        query_x: table.x.gather_rows(query_rows),
        query_y: query_rows.iter().map(|&i| table.y[i]).collect(),
        seed: 0,
    })
}

/// Drop trailing demonstrations until the prompt fits the token budget.
/// Queries are never dropped; at least one demonstration must fit.
pub fn truncate_to_budget(
    task: TaskInstance,
    budget: u64,
    profile: &TokenProfile,
    header: &PromptHeader,
) -> Result<TaskInstance> {
    let profiles = [profile.clone()];
    let cost_of = |t: &TaskInstance| -> Result<u64> {
        let prompt = build_prompt(t, header, &[])?;
        Ok(token_cost(&prompt, &profiles[0]).total)
    };

    let full_prompt = build_prompt(&task, header, &[])?;
    let full_cost = token_cost(&full_prompt, profile);
    if full_cost.total <= budget {
        return Ok(task);
    }

    // Invert the cost model with per-line prefix sums, then verify: the
    // truncated demo set refits its normalization statistics, which can
    // shift digit counts under per-digit profiles.
    let fixed = full_cost.header_tokens + full_cost.query_tokens;
    let mut prefix = 0u64;
    let mut fit_m = 0usize;
    for (i, line) in full_prompt.demo_block.lines().enumerate() {
        prefix += crate::codec::count_text(profile, line);
        if fixed + prefix <= budget {
            fit_m = i + 1;
        } else {
            break;
        }
    }
    if fit_m == 0 {
        return Err(Error::Budget(alloc::format!(
            "budget {budget} cannot fit the header, queries, and one demonstration"
        )));
    }

    let mut truncated = keep_demo_prefix(&task, fit_m);
    while cost_of(&truncated)? > budget {
        if truncated.m() == 1 {
            return Err(Error::Budget(alloc::format!(
                "budget {budget} cannot fit the header, queries, and one demonstration"
            )));
        }
        truncated = keep_demo_prefix(&truncated, truncated.m() - 1);
    }
    Ok(truncated)
}

fn keep_demo_prefix(task: &TaskInstance, m: usize) -> TaskInstance {
    let keep: Vec<usize> = (0..m).collect();
    TaskInstance {
        schema: task.schema.clone(),
        k: task.k,
        d: task.d,
        demo_x: task.demo_x.gather_rows(&keep),
        demo_y: task.demo_y[..m].to_vec(),
        query_x: task.query_x.clone(),
        query_y: task.query_y.clone(),
        seed: task.seed,
    }
}
