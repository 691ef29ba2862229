//! Task-level admission guard and the warm-up consensus filter.
//!
//! A task is admitted only when the random-forest teacher demonstrably
//! beats chance on its queries. The chance baseline is the larger of
//! prior-sampling accuracy and always-majority accuracy,
//! `p0 = max(sum p_k^2, max_k p_k)`, with class priors read from the
//! query ground-truth labels; the teacher must then clear an exact
//! one-sided binomial tail test plus agreement, balanced-accuracy,
//! macro-F1-dominance, and non-collapse criteria.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::GuardConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::TaskInstance;

/// Chance baseline: max of prior-sampling accuracy and majority-class
/// accuracy. `priors` must sum to one.
pub fn chance_baseline(priors: &[f64]) -> Result<f64> {
    let total: f64 = priors.iter().sum();
    if (total - 1.0).abs() > 1e-9 || priors.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Validation(alloc::format!(
            "priors must be a distribution, sum = {total}"
        )));
    }
    let sampling: f64 = priors.iter().map(|p| p * p).sum();
    let majority = priors.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(sampling.max(majority))
}

/// Exact one-sided binomial tail `Pr[X >= correct]`, `X ~ Bin(n, p0)`,
/// summed term by term in log space. No Gaussian approximation.
pub fn binomial_tail(n: usize, p0: f64, correct: usize) -> Result<f64> {
    if correct > n {
        return Err(Error::Validation(alloc::format!(
            "correct ({correct}) exceeds n ({n})"
        )));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Validation(alloc::format!("p0 = {p0} out of range")));
    }
    if correct == 0 {
        return Ok(1.0);
    }
    if p0 == 0.0 {
        return Ok(0.0); // correct >= 1 is impossible
    }
    if p0 == 1.0 {
        return Ok(1.0);
    }
    let ln_p = libm::log(p0);
    let ln_q = libm::log1p(-p0);
    let ln_fact = |x: usize| libm::lgamma((x + 1) as f64);
    let ln_n_fact = ln_fact(n);
    let mut total = 0.0f64;
    for k in correct..=n {
        let ln_term = ln_n_fact - ln_fact(k) - ln_fact(n - k)
            + k as f64 * ln_p
            + (n - k) as f64 * ln_q;
        total += libm::exp(ln_term);
    }
    Ok(total.min(1.0))
}

/// Cohen's kappa with marginal-product chance agreement; defined as 0
/// when chance agreement is 1.
pub fn cohens_kappa(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Validation("kappa needs equal non-empty inputs".into()));
    }
    let n = y_true.len() as f64;
    let k = y_true
        .iter()
        .chain(y_pred)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap();
    let mut true_marginal = alloc::vec![0.0f64; k];
    let mut pred_marginal = alloc::vec![0.0f64; k];
    let mut agree = 0.0f64;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        true_marginal[t as usize] += 1.0;
        pred_marginal[p as usize] += 1.0;
        if t == p {
            agree += 1.0;
        }
    }
    let p_o = agree / n;
    let p_e: f64 = true_marginal
        .iter()
        .zip(&pred_marginal)
        .map(|(t, p)| (t / n) * (p / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Mean per-class recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[u8], y_pred: &[u8], k: usize) -> Result<f64> {
    validate_labels(y_true, y_pred, k)?;
    let mut support = alloc::vec![0usize; k];
    let mut hits = alloc::vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t as usize] += 1;
        if t == p {
            hits[t as usize] += 1;
        }
    }
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        if support[c] > 0 {
            recall_sum += hits[c] as f64 / support[c] as f64;
            present += 1;
        }
    }
    Ok(recall_sum / present as f64)
}

/// Unweighted mean of per-class F1 over all K classes; classes with no
/// support and no predictions contribute zero and stay in the mean.
pub fn macro_f1(y_true: &[u8], y_pred: &[u8], k: usize) -> Result<f64> {
    validate_labels(y_true, y_pred, k)?;
    let mut tp = alloc::vec![0usize; k];
    let mut fp = alloc::vec![0usize; k];
    let mut fne = alloc::vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fne[t as usize] += 1;
        }
    }
    let mut sum = 0.0;
    for c in 0..k {
        let denom = 2 * tp[c] + fp[c] + fne[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(sum / k as f64)
}

fn validate_labels(y_true: &[u8], y_pred: &[u8], k: usize) -> Result<()> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Validation("metric needs equal non-empty inputs".into()));
    }
    if y_true.iter().chain(y_pred).any(|&l| l as usize >= k) {
        return Err(Error::Validation(alloc::format!("label outside 0..{k}")));
    }
    Ok(())
}

/// Everything the guard computes for one task, plus per-criterion
/// verdicts. `pass` is the conjunction of all criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub p0: f64,
    pub n_correct: usize,
    pub p_value: f64,
    pub kappa: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub majority_macro_f1: f64,
    pub predicted_class_count: usize,
    pub dominant_fraction: f64,
    pub beats_chance: bool,
    pub kappa_ok: bool,
    pub bacc_ok: bool,
    pub f1_ok: bool,
    pub class_spread_ok: bool,
    pub dominance_ok: bool,
    pub pass: bool,
}

/// Run the full criterion battery on the teacher's query predictions.
/// Class priors for the chance baseline come from the query ground
/// truth; the majority baseline imitates the demonstration-majority
/// class, the classifier a collapsed model would reproduce.
pub fn evaluate_guard(
    task: &TaskInstance,
    rf_preds: &[u8],
    cfg: &GuardConfig,
) -> Result<GuardReport> {
    let n = task.n();
    if n != cfg.required_n {
        return Err(Error::Protocol(alloc::format!(
            "guard requires exactly {} queries, task has {n}",
            cfg.required_n
        )));
    }
    if task.k < cfg.min_k {
        return Err(Error::Protocol(alloc::format!(
            "guard requires at least {} classes, task has {}",
            cfg.min_k,
            task.k
        )));
    }
    if rf_preds.len() != n {
        return Err(Error::Protocol(alloc::format!(
            "teacher produced {} predictions for {n} queries",
            rf_preds.len()
        )));
    }
    let k = task.k;
    let y_true = &task.query_y;

    let mut counts = alloc::vec![0usize; k];
    for &t in y_true {
        counts[t as usize] += 1;
    }
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let p0 = chance_baseline(&priors)?;

    let n_correct = y_true
        .iter()
        .zip(rf_preds)
        .filter(|(t, p)| t == p)
        .count();
    let p_value = binomial_tail(n, p0, n_correct)?;
    let kappa = cohens_kappa(y_true, rf_preds)?;
    let bacc = balanced_accuracy(y_true, rf_preds, k)?;
    let f1 = macro_f1(y_true, rf_preds, k)?;

    let mut demo_counts = alloc::vec![0usize; k];
    for &l in &task.demo_y {
        demo_counts[l as usize] += 1;
    }
    let demo_majority = argmax_count(&demo_counts) as u8;
    let majority_preds = alloc::vec![demo_majority; n];
    let majority_f1 = macro_f1(y_true, &majority_preds, k)?;

    let mut pred_counts = alloc::vec![0usize; k];
    for &p in rf_preds {
        pred_counts[p as usize] += 1;
    }
    let predicted_class_count = pred_counts.iter().filter(|&&c| c > 0).count();
    let dominant_fraction = *pred_counts.iter().max().unwrap() as f64 / n as f64;

    let beats_chance = p_value < cfg.alpha;
    let kappa_ok = kappa > cfg.kappa_min;
    let bacc_ok = bacc > 1.0 / k as f64 + cfg.delta_bacc;
    let f1_ok = f1 >= majority_f1 + cfg.delta_f1;
    let class_spread_ok = predicted_class_count >= 2;
    let dominance_ok = dominant_fraction <= cfg.tau_dom;
    let pass = beats_chance && kappa_ok && bacc_ok && f1_ok && class_spread_ok && dominance_ok;

    Ok(GuardReport {
        p0,
        n_correct,
        p_value,
        kappa,
        balanced_accuracy: bacc,
        macro_f1: f1,
        majority_macro_f1: majority_f1,
        predicted_class_count,
        dominant_fraction,
        beats_chance,
        kappa_ok,
        bacc_ok,
        f1_ok,
        class_spread_ok,
        dominance_ok,
        pass,
    })
}

fn argmax_count(counts: &[usize]) -> usize {
    let mut best = 0usize;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Largest-remainder apportionment of `total` seats over the classes in
/// `eligible`, weighted by demonstration counts (uniform when all the
/// eligible classes have zero demonstrations). Remainder ties go to the
/// lower class id.
pub fn consensus_quotas(demo_counts: &[usize], eligible: &[usize], total: usize) -> Vec<usize> {
    let weight_sum: usize = eligible.iter().map(|&c| demo_counts[c]).sum();
    let weights: Vec<f64> = if weight_sum == 0 {
        alloc::vec![1.0 / eligible.len() as f64; eligible.len()]
    } else {
        eligible
            .iter()
            .map(|&c| demo_counts[c] as f64 / weight_sum as f64)
            .collect()
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|&e| libm::floor(e) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - libm::floor(exact[a]);
        let rb = exact[b] - libm::floor(exact[b]);
        rb.partial_cmp(&ra).unwrap().then(eligible[a].cmp(&eligible[b]))
    });
    for i in 0..total - assigned {
        quotas[order[i % order.len()]] += 1;
    }
    quotas
}

/// Warm-up consensus filter: keep only queries the teacher got right,
/// then resample within each retained class (with replacement) to
/// restore `n_conse` queries whose class counts follow the demonstration
/// proportions. Demonstrations and labels are never altered.
pub fn consensus_filter(
    task: &TaskInstance,
    rf_preds: &[u8],
    cfg: &GuardConfig,
    rng: &mut Rng,
) -> Result<TaskInstance> {
    if !cfg.consensus {
        return Err(Error::Protocol("consensus filter is disabled".into()));
    }
    if rf_preds.len() != task.n() {
        return Err(Error::Protocol("one teacher prediction per query required".into()));
    }
    let k = task.k;
    let mut retained_by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
    for (i, (&t, &p)) in task.query_y.iter().zip(rf_preds).enumerate() {
        if t == p {
            retained_by_class[t as usize].push(i);
        }
    }
    let eligible: Vec<usize> = (0..k).filter(|&c| !retained_by_class[c].is_empty()).collect();
    if eligible.is_empty() {
        return Err(Error::Degenerate(
            "no query survives the consensus filter".into(),
        ));
    }

    let mut demo_counts = alloc::vec![0usize; k];
    for &l in &task.demo_y {
        demo_counts[l as usize] += 1;
    }
    let quotas = consensus_quotas(&demo_counts, &eligible, cfg.n_conse);

    let mut selected: Vec<usize> = Vec::with_capacity(cfg.n_conse);
    for (slot, &class) in eligible.iter().enumerate() {
        let pool = &retained_by_class[class];
        for _ in 0..quotas[slot] {
            selected.push(pool[rng.below(pool.len() as u64) as usize]);
        }
    }
    rng.shuffle(&mut selected);

    Ok(TaskInstance {
        schema: task.schema.clone(),
        k,
        d: task.d,
        demo_x: task.demo_x.clone(),
        demo_y: task.demo_y.clone(),
        query_x: task.query_x.gather_rows(&selected),
        query_y: selected.iter().map(|&i| task.query_y[i]).collect(),
        seed: task.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::task::ColumnSchema;

    #[test]
    fn chance_baseline_cases() {
        assert_eq!(chance_baseline(&[0.5, 0.5]).unwrap(), 0.5);
        let uniform10 = alloc::vec![0.1; 10];
        assert!((chance_baseline(&uniform10).unwrap() - 0.1).abs() < 1e-12);
        // sum of squares 0.58 < max 0.7
        assert!((chance_baseline(&[0.7, 0.3]).unwrap() - 0.7).abs() < 1e-12);
        assert!(chance_baseline(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn binomial_tail_boundaries() {
        assert_eq!(binomial_tail(50, 0.5, 0).unwrap(), 1.0);
        let all_correct = binomial_tail(50, 0.5, 50).unwrap();
        let expected = libm::pow(0.5, 50.0);
        assert!((all_correct - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn binomial_tail_matches_direct_summation() {
        // Exact Pascal-triangle oracle; C(50,25) fits in f64 exactly.
        let n = 50usize;
        let p: f64 = 0.5;
        let mut c = alloc::vec![1.0f64];
        for _ in 0..n {
            let mut next = alloc::vec![1.0f64];
            for w in c.windows(2) {
                next.push(w[0] + w[1]);
            }
            next.push(1.0);
            c = next;
        }
        let correct = 32;
        let oracle: f64 = (correct..=n)
            .map(|k| c[k] * libm::pow(p, k as f64) * libm::pow(1.0 - p, (n - k) as f64))
            .sum();
        let ours = binomial_tail(n, p, correct).unwrap();
        assert!((ours - oracle).abs() / oracle < 1e-12, "{ours} vs {oracle}");
    }

    #[test]
    fn kappa_values() {
        let y = alloc::vec![0u8, 0, 1, 1];
        assert_eq!(cohens_kappa(&y, &y).unwrap(), 1.0);
        // Constant prediction of the majority class: p_o == p_e.
        let y_true = alloc::vec![0u8, 0, 0, 1];
        let y_pred = alloc::vec![0u8, 0, 0, 0];
        assert!(cohens_kappa(&y_true, &y_pred).unwrap().abs() < 1e-12);
        // Confusion matrix [[3,1],[1,3]]: p_o = 0.75, p_e = 0.5.
        let t = alloc::vec![0u8, 0, 0, 0, 1, 1, 1, 1];
        let p = alloc::vec![0u8, 0, 0, 1, 0, 1, 1, 1];
        assert!((cohens_kappa(&t, &p).unwrap() - 0.5).abs() < 1e-12);
        assert!(cohens_kappa(&t, &p[..4]).is_err());
    }

    #[test]
    fn balanced_accuracy_values() {
        let y = alloc::vec![0u8, 1, 0, 1];
        assert_eq!(balanced_accuracy(&y, &y, 2).unwrap(), 1.0);
        let majority = alloc::vec![0u8, 0, 0, 0];
        assert_eq!(balanced_accuracy(&y, &majority, 2).unwrap(), 0.5);
        // Recalls 1.0, 0.5, 0.0 -> mean 0.5.
        let t = alloc::vec![0u8, 0, 1, 1, 2, 2];
        let p = alloc::vec![0u8, 0, 1, 0, 0, 1];
        assert!((balanced_accuracy(&t, &p, 3).unwrap() - 0.5).abs() < 1e-12);
        assert!(balanced_accuracy(&[], &[], 2).is_err());
    }

    #[test]
    fn macro_f1_values() {
        let y = alloc::vec![0u8, 1, 0, 1];
        assert_eq!(macro_f1(&y, &y, 2).unwrap(), 1.0);
        // Always-majority with priors (0.8, 0.2).
        let t = alloc::vec![0u8, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let p = alloc::vec![0u8; 10];
        let expected = (2.0 * 0.8 / 1.8) / 2.0;
        assert!((macro_f1(&t, &p, 2).unwrap() - expected).abs() < 1e-12);
        // Disjoint predictions and truths.
        let t2 = alloc::vec![0u8, 0, 0];
        let p2 = alloc::vec![1u8, 1, 1];
        assert_eq!(macro_f1(&t2, &p2, 2).unwrap(), 0.0);
    }

    fn guard_task(demo_y: Vec<u8>, query_y: Vec<u8>, k: usize) -> TaskInstance {
        let m = demo_y.len();
        let n = query_y.len();
        TaskInstance {
            schema: ColumnSchema::all_numeric(2),
            k,
            d: 2,
            demo_x: Matrix::zeros(m, 2),
            demo_y,
            query_x: Matrix::zeros(n, 2),
            query_y,
            seed: 0,
        }
    }

    fn balanced_binary_queries() -> Vec<u8> {
        (0..50).map(|i| (i % 2) as u8).collect()
    }

    #[test]
    fn perfect_teacher_passes() {
        let task = guard_task(
            (0..20).map(|i| (i % 2) as u8).collect(),
            balanced_binary_queries(),
            2,
        );
        let preds = task.query_y.clone();
        let report = evaluate_guard(&task, &preds, &GuardConfig::default()).unwrap();
        assert!(report.pass);
        assert_eq!(report.n_correct, 50);
        assert!(report.beats_chance && report.kappa_ok && report.bacc_ok);
        assert!(report.f1_ok && report.class_spread_ok && report.dominance_ok);
    }

    #[test]
    fn collapsed_teacher_fails_non_collapse() {
        let task = guard_task(
            (0..20).map(|i| (i % 2) as u8).collect(),
            balanced_binary_queries(),
            2,
        );
        let preds = alloc::vec![1u8; 50];
        let report = evaluate_guard(&task, &preds, &GuardConfig::default()).unwrap();
        assert!(!report.pass);
        assert!(!report.class_spread_ok);
        assert_eq!(report.predicted_class_count, 1);
        assert!(!report.dominance_ok);
    }

    #[test]
    fn chance_level_teacher_fails_tail_test() {
        // Priors (0.6, 0.4): p0 = 0.6. A predictor that is right on
        // exactly 30 of 50 sits at chance; the tail p-value is far above
        // alpha = 0.2.
        let query_y: Vec<u8> = (0..50).map(|i| if i < 30 { 0 } else { 1 }).collect();
        let task = guard_task((0..20).map(|i| (i % 2) as u8).collect(), query_y, 2);
        // Correct on all 18 of the first 30 zeros ... build 30 correct total:
        // right on 25 zeros and 5 ones, wrong elsewhere.
        let preds: Vec<u8> = (0..50)
            .map(|i| match i {
                0..=24 => 0,  // correct zeros
                25..=34 => 1, // wrong on 25..30 (true 0), correct on 30..35
                _ => 0,       // wrong (true 1)
            })
            .collect();
        let report = evaluate_guard(&task, &preds, &GuardConfig::default()).unwrap();
        assert_eq!(report.n_correct, 30);
        assert!(report.p_value >= 0.2, "p_value = {}", report.p_value);
        assert!(!report.beats_chance);
        assert!(!report.pass);
    }

    #[test]
    fn wrong_query_count_is_protocol_error() {
        let task = guard_task(alloc::vec![0, 1], alloc::vec![0, 1, 0], 2);
        let preds = alloc::vec![0u8, 1, 0];
        assert!(matches!(
            evaluate_guard(&task, &preds, &GuardConfig::default()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn guard_is_permutation_invariant() {
        let mut rng = Rng::from_seed(77);
        let query_y: Vec<u8> = (0..50).map(|_| rng.below(3) as u8).collect();
        let preds: Vec<u8> = query_y
            .iter()
            .map(|&t| if rng.bernoulli(0.7) { t } else { rng.below(3) as u8 })
            .collect();
        let task = guard_task((0..30).map(|i| (i % 3) as u8).collect(), query_y.clone(), 3);
        let before = evaluate_guard(&task, &preds, &GuardConfig::default()).unwrap();

        let perm = rng.permutation(50);
        let task_shuffled = guard_task(
            (0..30).map(|i| (i % 3) as u8).collect(),
            perm.iter().map(|&i| query_y[i]).collect(),
            3,
        );
        let preds_shuffled: Vec<u8> = perm.iter().map(|&i| preds[i]).collect();
        let after = evaluate_guard(&task_shuffled, &preds_shuffled, &GuardConfig::default()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn raising_alpha_never_unadmits() {
        let task = guard_task(
            (0..20).map(|i| (i % 2) as u8).collect(),
            balanced_binary_queries(),
            2,
        );
        let preds: Vec<u8> = task
            .query_y
            .iter()
            .enumerate()
            .map(|(i, &t)| if i % 5 == 0 { 1 - t } else { t })
            .collect();
        let mut cfg = GuardConfig::default();
        for alpha in [0.05, 0.1, 0.2, 0.5, 0.9] {
            cfg.alpha = alpha;
            let low = evaluate_guard(&task, &preds, &cfg).unwrap();
            cfg.alpha = alpha + 0.05;
            let high = evaluate_guard(&task, &preds, &cfg).unwrap();
            if low.pass {
                assert!(high.pass);
            }
        }
    }

    #[test]
    fn consensus_balanced_case_splits_evenly() {
        let task = guard_task(
            (0..40).map(|i| (i % 2) as u8).collect(),
            balanced_binary_queries(),
            2,
        );
        let preds = task.query_y.clone(); // all correct
        let cfg = GuardConfig {
            consensus: true,
            ..GuardConfig::default()
        };
        let mut rng = Rng::from_seed(5);
        let filtered = consensus_filter(&task, &preds, &cfg, &mut rng).unwrap();
        assert_eq!(filtered.n(), 20);
        let ones = filtered.query_y.iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 10);
        assert_eq!(filtered.demo_x, task.demo_x);
        assert_eq!(filtered.demo_y, task.demo_y);
    }

    #[test]
    fn consensus_redistributes_empty_class_quota() {
        // Class 1 has zero correct queries; its quota must flow to the
        // remaining classes and the counts still sum to n_conse.
        let query_y: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let preds: Vec<u8> = query_y.iter().map(|&t| if t == 1 { 0 } else { t }).collect();
        let task = guard_task((0..40).map(|i| (i % 2) as u8).collect(), query_y, 2);
        let cfg = GuardConfig {
            consensus: true,
            ..GuardConfig::default()
        };
        let mut rng = Rng::from_seed(6);
        let filtered = consensus_filter(&task, &preds, &cfg, &mut rng).unwrap();
        assert_eq!(filtered.n(), 20);
        assert!(filtered.query_y.iter().all(|&l| l == 0));
    }

    #[test]
    fn consensus_with_n_conse_equal_n_is_identity_up_to_resampling() {
        let task = guard_task(
            (0..40).map(|i| (i % 2) as u8).collect(),
            balanced_binary_queries(),
            2,
        );
        let preds = task.query_y.clone();
        let cfg = GuardConfig {
            consensus: true,
            n_conse: 50,
            ..GuardConfig::default()
        };
        let mut rng = Rng::from_seed(8);
        let filtered = consensus_filter(&task, &preds, &cfg, &mut rng).unwrap();
        assert_eq!(filtered.n(), 50);
        // Same class proportions as the original balanced query set.
        let ones = filtered.query_y.iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 25);
        assert_eq!(filtered.demo_x, task.demo_x);
    }

    #[test]
    fn consensus_with_no_survivors_rejects() {
        let query_y = balanced_binary_queries();
        let preds: Vec<u8> = query_y.iter().map(|&t| 1 - t).collect();
        let task = guard_task((0..10).map(|i| (i % 2) as u8).collect(), query_y, 2);
        let cfg = GuardConfig {
            consensus: true,
            ..GuardConfig::default()
        };
        let mut rng = Rng::from_seed(7);
        assert!(matches!(
            consensus_filter(&task, &preds, &cfg, &mut rng),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn quotas_use_largest_remainder() {
        // Demo proportions 0.55 / 0.45 over 20 seats: exact 11 / 9.
        let quotas = consensus_quotas(&[11, 9], &[0, 1], 20);
        assert_eq!(quotas, alloc::vec![11, 9]);
        // 2/3 vs 1/3 over 20: exact 13.33 / 6.67 -> 13 / 7.
        let quotas = consensus_quotas(&[2, 1], &[0, 1], 20);
        assert_eq!(quotas, alloc::vec![13, 7]);
        // No demonstrations seen: uniform.
        let quotas = consensus_quotas(&[0, 0], &[0, 1], 20);
        assert_eq!(quotas, alloc::vec![10, 10]);
    }
}
