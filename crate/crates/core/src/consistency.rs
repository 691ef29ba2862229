//! Order-robust, confidence-aware self-consistency: build V
//! demonstration-shuffled prompt variants and sum per-label
//! probabilities across them, `p~(y_j) = sum_i p_i(y_j)`, choosing the
//! argmax label (lowest id on exact ties). Default V is 5.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::TaskInstance;

pub const DEFAULT_VARIANTS: usize = 5;

/// One backend pass over one prompt variant: a per-query map from label
/// to probability. Labels absent from a map count as probability zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPrediction {
    pub variant: usize,
    pub shuffle_seed: u64,
    pub per_query: Vec<BTreeMap<u8, f64>>,
}

/// Aggregated scores and the chosen label per query. `label` is None
/// only for queries no variant produced a usable prediction for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAggregate {
    pub scores: BTreeMap<u8, f64>,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedPrediction {
    pub queries: Vec<QueryAggregate>,
}

/// Build V variants of a task. Variant 0 is the original; the others
/// permute the demonstration order. The query block (rows, order, and
/// therefore ids) is identical across variants.
pub fn make_variants(task: &TaskInstance, v: usize, rng: &mut Rng) -> Vec<TaskInstance> {
    make_variants_opts(task, v, false, rng)
}

/// Variant builder with the optional feature-order shuffle. Feature
/// shuffling permutes columns (and the schema with them) as an extra
/// diversity source for position-sensitive backends; it is off by
/// default and demonstration shuffling is the documented main path.
pub fn make_variants_opts(
    task: &TaskInstance,
    v: usize,
    shuffle_features: bool,
    rng: &mut Rng,
) -> Vec<TaskInstance> {
    let mut variants = Vec::with_capacity(v);
    variants.push(task.clone());
    for _ in 1..v {
        let perm = rng.permutation(task.m());
        let mut variant = TaskInstance {
            schema: task.schema.clone(),
            k: task.k,
            d: task.d,
            demo_x: task.demo_x.gather_rows(&perm),
            demo_y: perm.iter().map(|&i| task.demo_y[i]).collect(),
            query_x: task.query_x.clone(),
            query_y: task.query_y.clone(),
            seed: task.seed,
        };
        if shuffle_features {
            let cols = rng.permutation(task.d);
            variant = permute_columns(&variant, &cols);
        }
        variants.push(variant);
    }
    variants
}

fn permute_columns(task: &TaskInstance, cols: &[usize]) -> TaskInstance {
    let gather = |m: &crate::matrix::Matrix| {
        let rows: Vec<Vec<f64>> = m
            .iter_rows()
            .map(|r| cols.iter().map(|&j| r[j]).collect())
            .collect();
        crate::matrix::Matrix::from_rows(&rows)
    };
    TaskInstance {
        schema: crate::task::ColumnSchema {
            columns: cols.iter().map(|&j| task.schema.columns[j].clone()).collect(),
        },
        k: task.k,
        d: task.d,
        demo_x: gather(&task.demo_x),
        demo_y: task.demo_y.clone(),
        query_x: gather(&task.query_x),
        query_y: task.query_y.clone(),
        seed: task.seed,
    }
}

fn argmax_scores(scores: &BTreeMap<u8, f64>) -> Option<u8> {
    let mut best: Option<(u8, f64)> = None;
    for (&label, &score) in scores {
        match best {
            None => best = Some((label, score)),
            // Strictly greater keeps the lowest label id on exact ties,
            // since iteration is in ascending label order.
            Some((_, s)) if score > s => best = Some((label, score)),
            _ => {}
        }
    }
    best.map(|(l, _)| l)
}

/// Sum per-label probabilities across variants and take the argmax.
pub fn aggregate(preds: &[VariantPrediction]) -> Result<AggregatedPrediction> {
    let n = preds
        .first()
        .ok_or_else(|| Error::Protocol("aggregate needs at least one variant".into()))?
        .per_query
        .len();
    if preds.iter().any(|p| p.per_query.len() != n) {
        return Err(Error::Protocol(
            "variants disagree on query coverage".into(),
        ));
    }
    let mut queries = Vec::with_capacity(n);
    for q in 0..n {
        let mut scores: BTreeMap<u8, f64> = BTreeMap::new();
        for pred in preds {
            for (&label, &p) in &pred.per_query[q] {
                *scores.entry(label).or_insert(0.0) += p;
            }
        }
        let label = argmax_scores(&scores);
        queries.push(QueryAggregate { scores, label });
    }
    Ok(AggregatedPrediction { queries })
}

/// Unit-weight fallback for backends that expose labels only: each
/// successfully parsed variant contributes probability one on its label.
/// Queries with no successful parse anywhere are left unresolved (scored
/// as incorrect downstream).
pub fn hard_vote_fallback(parsed: &[Vec<Option<u8>>]) -> Result<AggregatedPrediction> {
    let n = parsed
        .first()
        .ok_or_else(|| Error::Protocol("vote needs at least one variant".into()))?
        .len();
    if parsed.iter().any(|p| p.len() != n) {
        return Err(Error::Protocol(
            "variants disagree on query coverage".into(),
        ));
    }
    let mut queries = Vec::with_capacity(n);
    for q in 0..n {
        let mut scores: BTreeMap<u8, f64> = BTreeMap::new();
        for variant in parsed {
            if let Some(label) = variant[q] {
                *scores.entry(label).or_insert(0.0) += 1.0;
            }
        }
        let label = argmax_scores(&scores);
        queries.push(QueryAggregate { scores, label });
    }
    Ok(AggregatedPrediction { queries })
}
