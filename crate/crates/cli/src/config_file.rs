//! Plain-text key/value configuration files.
//!
//! Format: one `key = value` pair per line, `#` comments, blank lines
//! ignored. Keys mirror the corpus configuration fields; guard
//! thresholds live under `guard.`, header templates under `header.`,
//! and custom token profiles under `profile.<name>.<field>` with
//! `budget_profile = <name>` selecting one.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use manyshot_core::codec::{DigitRule, TokenProfile};
use manyshot_core::config::ActivationName;
use manyshot_core::CorpusConfig;

pub fn load_config(path: &Path) -> Result<CorpusConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<CorpusConfig> {
    let mut cfg = CorpusConfig::default();
    let mut profile_fields: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut budget_profile_name: Option<String> = None;

    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected 'key = value'", line_no + 1))?;
        let key = key.trim();
        let value = value.trim();
        let fail = |what: &str| anyhow!("line {}: invalid {what} '{value}'", line_no + 1);

        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| fail($what))?
            };
        }

        if let Some(rest) = key.strip_prefix("profile.") {
            let (name, field) = rest
                .split_once('.')
                .ok_or_else(|| anyhow!("line {}: expected profile.<name>.<field>", line_no + 1))?;
            profile_fields
                .entry(name.to_string())
                .or_default()
                .insert(field.to_string(), value.to_string());
            continue;
        }

        match key {
            "layers_min" => cfg.layers_min = num!("layers_min"),
            "layers_max" => cfg.layers_max = num!("layers_max"),
            "width_min" => cfg.width_min = num!("width_min"),
            "width_max" => cfg.width_max = num!("width_max"),
            "tree_fraction" => cfg.tree_fraction = num!("tree_fraction"),
            "activations" => {
                cfg.activations = value
                    .split(',')
                    .map(|s| s.trim().parse::<ActivationName>().map_err(|e| anyhow!("{e}")))
                    .collect::<Result<Vec<_>>>()?;
            }
            "exp_input_clamp" => cfg.exp_input_clamp = num!("exp_input_clamp"),
            "value_clamp" => cfg.value_clamp = num!("value_clamp"),
            "noise_scale_min" => cfg.noise_scale_min = num!("noise_scale_min"),
            "noise_scale_max" => cfg.noise_scale_max = num!("noise_scale_max"),
            "fourier_components" => cfg.fourier_components = num!("fourier_components"),
            "fourier_lengthscale_min" => cfg.fourier_lengthscale_min = num!("fourier_lengthscale_min"),
            "fourier_lengthscale_max" => cfg.fourier_lengthscale_max = num!("fourier_lengthscale_max"),
            "fit_rows" => cfg.fit_rows = num!("fit_rows"),
            "d_min" => cfg.d_min = num!("d_min"),
            "d_max" => cfg.d_max = num!("d_max"),
            "k_min" => cfg.k_min = num!("k_min"),
            "k_max" => cfg.k_max = num!("k_max"),
            "m_min" => cfg.m_min = num!("m_min"),
            "m_max" => cfg.m_max = num!("m_max"),
            "n_queries" => cfg.n_queries = num!("n_queries"),
            "categorical_fraction_max" => cfg.categorical_fraction_max = num!("categorical_fraction_max"),
            "cat_bins_min" => cfg.cat_bins_min = num!("cat_bins_min"),
            "cat_bins_max" => cfg.cat_bins_max = num!("cat_bins_max"),
            "id_shuffle_prob" => cfg.id_shuffle_prob = num!("id_shuffle_prob"),
            "token_budget" => cfg.token_budget = num!("token_budget"),
            "budget_profile" => budget_profile_name = Some(value.to_string()),
            "master_seed" => cfg.master_seed = num!("master_seed"),
            "guard.alpha" => cfg.guard.alpha = num!("guard.alpha"),
            "guard.kappa_min" => cfg.guard.kappa_min = num!("guard.kappa_min"),
            "guard.delta_bacc" => cfg.guard.delta_bacc = num!("guard.delta_bacc"),
            "guard.delta_f1" => cfg.guard.delta_f1 = num!("guard.delta_f1"),
            "guard.tau_dom" => cfg.guard.tau_dom = num!("guard.tau_dom"),
            "guard.required_n" => cfg.guard.required_n = num!("guard.required_n"),
            "guard.min_k" => cfg.guard.min_k = num!("guard.min_k"),
            "guard.n_conse" => cfg.guard.n_conse = num!("guard.n_conse"),
            "guard.consensus" => cfg.guard.consensus = num!("guard.consensus"),
            "header.template" => cfg.header.template = value.to_string(),
            "header.instruction" => cfg.header.instruction = value.to_string(),
            "header.include_column_ids" => {
                cfg.header.include_column_ids = num!("header.include_column_ids")
            }
            other => bail!("line {}: unknown key '{other}'", line_no + 1),
        }
    }

    if let Some(name) = budget_profile_name {
        cfg.budget_profile = resolve_profile(&name, &profile_fields)?;
    }
    cfg.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(cfg)
}

fn resolve_profile(
    name: &str,
    custom: &BTreeMap<String, BTreeMap<String, String>>,
) -> Result<TokenProfile> {
    if let Some(fields) = custom.get(name) {
        return profile_from_fields(name, fields);
    }
    TokenProfile::builtin(name)
        .ok_or_else(|| anyhow!("unknown token profile '{name}' (no profile.{name}.* entries)"))
}

fn profile_from_fields(name: &str, fields: &BTreeMap<String, String>) -> Result<TokenProfile> {
    let get = |field: &str| -> Result<f64> {
        fields
            .get(field)
            .ok_or_else(|| anyhow!("profile.{name}.{field} missing"))?
            .parse()
            .map_err(|_| anyhow!("profile.{name}.{field} is not a number"))
    };
    let digit_rule = match fields
        .get("digit_rule")
        .map(String::as_str)
        .unwrap_or("merged-3digit")
    {
        "merged-3digit" => DigitRule::MergedThreeDigit,
        "per-digit" | "digit-level" => DigitRule::PerDigit,
        other => bail!("profile.{name}.digit_rule: unknown rule '{other}'"),
    };
    Ok(TokenProfile {
        name: name.to_string(),
        digit_rule,
        nl_decimal_cell: get("nl_decimal_cell")?,
        tab_decimal_cell: get("tab_decimal_cell")?,
        decimal_no_delim: get("decimal_no_delim")?,
        integer_no_delim: get("integer_no_delim")?,
        decimal_with_delim: get("decimal_with_delim")?,
        integer_with_delim: get("integer_with_delim")?,
    })
}
