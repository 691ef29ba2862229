//! Token-efficient prompt encoding, JSON targets, response parsing, and
//! token-cost accounting.
//!
//! Prompt text format (version 1):
//!
//! ```text
//! <header block>                      task statement, no feature names
//! <blank line>
//! v1,v2,...,vd | label               one line per demonstration
//! <blank line>
//! id,v1,v2,...,vd                    one line per query, ids 0-indexed
//! <blank line>
//! <instruction line>                 requests the JSON array
//! ```
//!
//! Numeric cells are z-scored against the demonstration rows only, then
//! mapped to integers via `clip(round(120*z + 500), 0, 999)`. Categorical
//! cells render as their (already small) category ids without the
//! [0,999] mapping. The target is a single JSON array
//! `[{"id":0,"label":L},...]` with ids ascending.
//!
//! Token costs are counted under an arithmetic tokenizer model, not a
//! real tokenizer: a run of letters is one token, a run of digits costs
//! one token per three digits (merged-3digit profile) or one per digit
//! (digit-level profile), any other printable character is one token,
//! and whitespace is absorbed. This reproduces the per-number counts the
//! compression table is built from ("0.1234," is 5 tokens merged, 7
//! digit-level).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::task::{ColumnKind, TaskInstance};

// ---------------------------------------------------------------------------
// Token profiles and the counting model
// ---------------------------------------------------------------------------

/// How a tokenizer family fragments digit runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigitRule {
    /// Consecutive digits merge up to three per token (GPT cl100k_base,
    /// LLaMA-3). Any integer in [0,999] is a single token.
    MergedThreeDigit,
    /// One token per digit (Qwen, LLaMA-2).
    PerDigit,
}

/// Arithmetic cost model for one tokenizer family.
///
/// The per-cell constants describe the canonical signed 4-decimal number
/// ("±0.1234") before and after [0,999] normalization and feed the
/// compression report; live prompts are counted with [`count_text`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProfile {
    pub name: String,
    pub digit_rule: DigitRule,
    /// Cost of one feature phrased as natural language, decimal form.
    pub nl_decimal_cell: f64,
    /// Cost of one tabular cell, decimal form, delimiter included.
    pub tab_decimal_cell: f64,
    /// Expected cost of one number, decimal vs integer form.
    pub decimal_no_delim: f64,
    pub integer_no_delim: f64,
    /// Same, with a trailing one-token delimiter.
    pub decimal_with_delim: f64,
    pub integer_with_delim: f64,
}

impl TokenProfile {
    pub fn merged_3digit() -> Self {
        TokenProfile {
            name: "merged-3digit".into(),
            digit_rule: DigitRule::MergedThreeDigit,
            nl_decimal_cell: 10.0,
            tab_decimal_cell: 5.0,
            decimal_no_delim: 4.5,
            integer_no_delim: 1.0,
            decimal_with_delim: 5.5,
            integer_with_delim: 2.0,
        }
    }

    pub fn digit_level() -> Self {
        TokenProfile {
            name: "digit-level".into(),
            digit_rule: DigitRule::PerDigit,
            nl_decimal_cell: 12.0,
            tab_decimal_cell: 7.0,
            decimal_no_delim: 6.5,
            integer_no_delim: 3.0,
            decimal_with_delim: 7.5,
            integer_with_delim: 4.0,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "merged-3digit" => Some(Self::merged_3digit()),
            "digit-level" => Some(Self::digit_level()),
            _ => None,
        }
    }

    /// Tokens for a run of `digits` digits.
    pub fn digit_run_cost(&self, digits: usize) -> u64 {
        match self.digit_rule {
            DigitRule::MergedThreeDigit => digits.div_ceil(3) as u64,
            DigitRule::PerDigit => digits as u64,
        }
    }
}

/// Count tokens of arbitrary text under the profile's counting model.
pub fn count_text(profile: &TokenProfile, text: &str) -> u64 {
    let mut total = 0u64;
    let mut digits = 0usize;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_ascii_digit() {
            if in_word {
                in_word = false;
                total += 1;
            }
            digits += 1;
        } else {
            if digits > 0 {
                total += profile.digit_run_cost(digits);
                digits = 0;
            }
            if ch.is_alphabetic() {
                in_word = true;
            } else {
                if in_word {
                    total += 1;
                    in_word = false;
                }
                if !ch.is_whitespace() {
                    total += 1; // punctuation and symbols
                }
            }
        }
    }
    if digits > 0 {
        total += profile.digit_run_cost(digits);
    }
    if in_word {
        total += 1;
    }
    total
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Demonstration-fitted normalization statistics for one numeric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedColumn {
    pub mean: f64,
    pub std: f64,
    /// Constant columns map every value to 500.
    pub constant: bool,
}

/// Population mean and standard deviation of a demonstration column.
pub fn zscore_fit(demo_values: &[f64]) -> Result<NormalizedColumn> {
    if demo_values.is_empty() {
        return Err(Error::Validation("cannot fit an empty column".into()));
    }
    let n = demo_values.len() as f64;
    let mean = demo_values.iter().sum::<f64>() / n;
    let var = demo_values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    Ok(NormalizedColumn {
        mean,
        std,
        constant: std == 0.0,
    })
}

/// Map a z-score to [0,999]: `clip(round(120z + 500), 0, 999)` with
/// `round(x) = floor(x + 0.5)`. Monotone non-decreasing in z; z = 0
/// maps to 500.
pub fn to_int999(z: f64) -> u16 {
    let rounded = libm::floor(120.0 * z + 500.0 + 0.5);
    rounded.clamp(0.0, 999.0) as u16
}

impl NormalizedColumn {
    pub fn encode(&self, value: f64) -> u16 {
        if self.constant {
            500
        } else {
            to_int999((value - self.mean) / self.std)
        }
    }
}

/// Per-column encoder: numeric columns carry fitted statistics,
/// categorical columns pass their ids through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnEncoder {
    Numeric(NormalizedColumn),
    Categorical,
}

/// A task rendered to integer cells, pre-text.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTask {
    pub columns: Vec<ColumnEncoder>,
    pub demo_rows: Vec<Vec<u16>>,
    pub demo_labels: Vec<u8>,
    pub query_rows: Vec<Vec<u16>>,
}

impl EncodedTask {
    /// Demo cells as an f64 matrix, for local backends that consume the
    /// same representation the prompt carries.
    pub fn demo_matrix(&self) -> Matrix {
        rows_to_matrix(&self.demo_rows)
    }

    pub fn query_matrix(&self) -> Matrix {
        rows_to_matrix(&self.query_rows)
    }
}

fn rows_to_matrix(rows: &[Vec<u16>]) -> Matrix {
    Matrix::from_rows(
        &rows
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect::<Vec<_>>(),
    )
}

/// Encode all cells of a task. Normalization statistics come from the
/// demonstration rows only; queries are mapped through the same stats.
pub fn encode_task(task: &TaskInstance) -> Result<EncodedTask> {
    let d = task.d;
    let mut columns = Vec::with_capacity(d);
    for (j, kind) in task.schema.columns.iter().enumerate() {
        match kind {
            ColumnKind::Numeric => {
                let col = task.demo_x.column(j);
                columns.push(ColumnEncoder::Numeric(zscore_fit(&col)?));
            }
            ColumnKind::Categorical { .. } => columns.push(ColumnEncoder::Categorical),
        }
    }
    let encode_row = |row: &[f64]| -> Vec<u16> {
        row.iter()
            .zip(&columns)
            .map(|(&v, enc)| match enc {
                ColumnEncoder::Numeric(stats) => stats.encode(v),
                ColumnEncoder::Categorical => v as u16,
            })
            .collect()
    };
    Ok(EncodedTask {
        demo_rows: task.demo_x.iter_rows().map(encode_row).collect(),
        demo_labels: task.demo_y.clone(),
        query_rows: task.query_x.iter_rows().map(encode_row).collect(),
        columns,
    })
}

// ---------------------------------------------------------------------------
// Prompt building
// ---------------------------------------------------------------------------

/// Header and instruction templates. `{k}`, `{kmax}` (= K-1) and `{d}`
/// are substituted at render time. Feature names are never emitted;
/// `include_column_ids` optionally prefixes the demo block with generic
/// column indices (off by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptHeader {
    pub template: String,
    pub instruction: String,
    pub include_column_ids: bool,
}

impl Default for PromptHeader {
    fn default() -> Self {
        PromptHeader {
            template: "Classify each query row into one of {k} classes (integer labels 0 to {kmax}). \
                       Each training row lists {d} comma-separated feature values, then | and its label. \
                       Each query row lists its id, then the same {d} feature values."
                .into(),
            instruction: "Reply with one JSON array only, one record per query id in ascending order: \
                          [{\"id\":0,\"label\":0},...]"
                .into(),
            include_column_ids: false,
        }
    }
}

impl PromptHeader {
    pub fn render(&self, k: usize, d: usize) -> String {
        self.template
            .replace("{kmax}", &(k - 1).to_string())
            .replace("{k}", &k.to_string())
            .replace("{d}", &d.to_string())
    }
}

/// Per-profile cost breakdown of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCost {
    pub profile: String,
    pub header_tokens: u64,
    pub demo_tokens: u64,
    pub query_tokens: u64,
    pub total: u64,
    /// Amortized cost per predicted label, total / N.
    pub per_query: f64,
}

/// A fully rendered prompt plus its JSON target and cost accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedPrompt {
    pub header: String,
    pub demo_block: String,
    pub query_block: String,
    pub instruction: String,
    pub target: String,
    pub m: usize,
    pub n: usize,
    pub costs: Vec<PromptCost>,
}

impl EncodedPrompt {
    /// Full prompt text in the version-1 layout.
    pub fn text(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.header);
        s.push_str("\n\n");
        s.push_str(&self.demo_block);
        s.push_str("\n\n");
        s.push_str(&self.query_block);
        s.push_str("\n\n");
        s.push_str(&self.instruction);
        s.push('\n');
        s
    }
}

fn render_demo_line(cells: &[u16], label: u8, out: &mut String) {
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_u64(out, *c as u64);
    }
    out.push_str(" | ");
    push_u64(out, label as u64);
}

fn render_query_line(id: usize, cells: &[u16], out: &mut String) {
    push_u64(out, id as u64);
    for c in cells {
        out.push(',');
        push_u64(out, *c as u64);
    }
}

fn push_u64(out: &mut String, v: u64) {
    // format! would allocate per cell; itoa by hand is enough here.
    let mut buf = [0u8; 20];
    let mut at = buf.len();
    let mut v = v;
    loop {
        at -= 1;
        buf[at] = b'0' + (v % 10) as u8;
        v /= 10;
        if v == 0 {
            break;
        }
    }
    out.push_str(core::str::from_utf8(&buf[at..]).unwrap());
}

/// Serialize per-query labels into the exact JSON target string, ids
/// ascending from zero.
pub fn build_target(labels: &[u8]) -> String {
    let mut s = String::from("[");
    for (id, label) in labels.iter().enumerate() {
        if id > 0 {
            s.push(',');
        }
        s.push_str("{\"id\":");
        push_u64(&mut s, id as u64);
        s.push_str(",\"label\":");
        push_u64(&mut s, *label as u64);
        s.push('}');
    }
    s.push(']');
    s
}

/// Render a task into the prompt layout and account costs under each
/// profile.
pub fn build_prompt(
    task: &TaskInstance,
    header: &PromptHeader,
    profiles: &[TokenProfile],
) -> Result<EncodedPrompt> {
    let encoded = encode_task(task)?;
    build_prompt_encoded(task, &encoded, header, profiles)
}

/// Same as [`build_prompt`] for a task that is already encoded.
pub fn build_prompt_encoded(
    task: &TaskInstance,
    encoded: &EncodedTask,
    header: &PromptHeader,
    profiles: &[TokenProfile],
) -> Result<EncodedPrompt> {
    if encoded.demo_rows.is_empty() {
        return Err(Error::Encoding("prompt needs at least one demonstration".into()));
    }
    let mut demo_block = String::new();
    if header.include_column_ids {
        for j in 0..task.d {
            if j > 0 {
                demo_block.push(',');
            }
            demo_block.push('c');
            push_u64(&mut demo_block, j as u64);
        }
        demo_block.push('\n');
    }
    for (i, row) in encoded.demo_rows.iter().enumerate() {
        if i > 0 {
            demo_block.push('\n');
        }
        render_demo_line(row, encoded.demo_labels[i], &mut demo_block);
    }
    let mut query_block = String::new();
    for (id, row) in encoded.query_rows.iter().enumerate() {
        if id > 0 {
            query_block.push('\n');
        }
        render_query_line(id, row, &mut query_block);
    }

    let mut prompt = EncodedPrompt {
        header: header.render(task.k, task.d),
        demo_block,
        query_block,
        instruction: header.instruction.clone(),
        target: build_target(&task.query_y),
        m: encoded.demo_rows.len(),
        n: encoded.query_rows.len(),
        costs: Vec::new(),
    };
    prompt.costs = profiles.iter().map(|p| token_cost(&prompt, p)).collect();
    Ok(prompt)
}

/// Count a prompt's tokens under a profile: header and instruction as
/// fixed overhead H, demo and query blocks per row.
pub fn token_cost(prompt: &EncodedPrompt, profile: &TokenProfile) -> PromptCost {
    let header_tokens =
        count_text(profile, &prompt.header) + count_text(profile, &prompt.instruction);
    let demo_tokens = count_text(profile, &prompt.demo_block);
    let query_tokens = count_text(profile, &prompt.query_block);
    let total = header_tokens + demo_tokens + query_tokens;
    PromptCost {
        profile: profile.name.clone(),
        header_tokens,
        demo_tokens,
        query_tokens,
        total,
        per_query: total as f64 / prompt.n as f64,
    }
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

/// Distinct malformation kinds, reported separately so the harness can
/// break down instruction-following failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailureKind {
    Malformed,
    DuplicateId,
    MissingId,
    UnexpectedId,
    LabelOutOfRange,
}

impl ParseFailureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParseFailureKind::Malformed => "malformed",
            ParseFailureKind::DuplicateId => "duplicate_id",
            ParseFailureKind::MissingId => "missing_id",
            ParseFailureKind::UnexpectedId => "unexpected_id",
            ParseFailureKind::LabelOutOfRange => "label_out_of_range",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub detail: String,
}

impl ParseFailure {
    fn new(kind: ParseFailureKind, detail: String) -> Self {
        ParseFailure { kind, detail }
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = match rest.find('\n') {
            Some(nl) => &rest[nl + 1..],
            None => rest,
        };
        return rest.trim_end().trim_end_matches("```").trim();
    }
    t
}

/// Validate (id, label) pairs against the expected id set. Shared by the
/// free-text parser and the structured wire path.
pub fn validate_predictions(
    pairs: &[(u32, u8)],
    expected_ids: &[u32],
    num_classes: usize,
) -> core::result::Result<BTreeMap<u32, u8>, ParseFailure> {
    let mut map = BTreeMap::new();
    let mut dups = Vec::new();
    for &(id, label) in pairs {
        if map.insert(id, label).is_some() {
            dups.push(id);
        }
    }
    if !dups.is_empty() {
        return Err(ParseFailure::new(
            ParseFailureKind::DuplicateId,
            alloc::format!("duplicated ids {dups:?}"),
        ));
    }
    let out_of_range: Vec<u8> = pairs
        .iter()
        .filter(|(_, l)| *l as usize >= num_classes)
        .map(|&(_, l)| l)
        .collect();
    if !out_of_range.is_empty() {
        return Err(ParseFailure::new(
            ParseFailureKind::LabelOutOfRange,
            alloc::format!("labels {out_of_range:?} outside 0..{num_classes}"),
        ));
    }
    let unexpected: Vec<u32> = map
        .keys()
        .filter(|id| !expected_ids.contains(id))
        .copied()
        .collect();
    if !unexpected.is_empty() {
        return Err(ParseFailure::new(
            ParseFailureKind::UnexpectedId,
            alloc::format!("unexpected ids {unexpected:?}"),
        ));
    }
    let missing: Vec<u32> = expected_ids
        .iter()
        .filter(|id| !map.contains_key(id))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(ParseFailure::new(
            ParseFailureKind::MissingId,
            alloc::format!("missing ids {missing:?}"),
        ));
    }
    Ok(map)
}

/// Parse arbitrary model output into an id -> label map covering exactly
/// `expected_ids`. Tolerates surrounding whitespace and markdown fences;
/// reports duplicates, missing ids, unexpected ids, and out-of-range
/// labels as distinct failures.
pub fn parse_response(
    text: &str,
    expected_ids: &[u32],
    num_classes: usize,
) -> core::result::Result<BTreeMap<u32, u8>, ParseFailure> {
    let stripped = strip_fences(text);
    let candidate = match serde_json::from_str::<serde_json::Value>(stripped) {
        Ok(v) => v,
        Err(_) => {
            // Fall back to the outermost bracketed slice.
            let start = stripped.find('[');
            let end = stripped.rfind(']');
            match (start, end) {
                (Some(s), Some(e)) if s < e => {
                    serde_json::from_str::<serde_json::Value>(&stripped[s..=e]).map_err(|e| {
                        ParseFailure::new(
                            ParseFailureKind::Malformed,
                            alloc::format!("not valid JSON: {e}"),
                        )
                    })?
                }
                _ => {
                    return Err(ParseFailure::new(
                        ParseFailureKind::Malformed,
                        "no JSON array found".into(),
                    ))
                }
            }
        }
    };
    let arr = candidate.as_array().ok_or_else(|| {
        ParseFailure::new(ParseFailureKind::Malformed, "top-level value is not an array".into())
    })?;
    let mut pairs = Vec::with_capacity(arr.len());
    for item in arr {
        let obj = item.as_object().ok_or_else(|| {
            ParseFailure::new(ParseFailureKind::Malformed, "array item is not an object".into())
        })?;
        let id = obj.get("id").and_then(|v| v.as_u64()).ok_or_else(|| {
            ParseFailure::new(ParseFailureKind::Malformed, "item lacks integer \"id\"".into())
        })?;
        let label = obj.get("label").and_then(|v| v.as_u64()).ok_or_else(|| {
            ParseFailure::new(ParseFailureKind::Malformed, "item lacks integer \"label\"".into())
        })?;
        if id > u32::MAX as u64 || label > u8::MAX as u64 {
            return Err(ParseFailure::new(
                ParseFailureKind::Malformed,
                "id or label out of representable range".into(),
            ));
        }
        pairs.push((id as u32, label as u8));
    }
    validate_predictions(&pairs, expected_ids, num_classes)
}

// ---------------------------------------------------------------------------
// Compression and amortization arithmetic
// ---------------------------------------------------------------------------

/// Stage-by-stage compression ratios for one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub profile: String,
    /// NL-decimal row vs tabular-decimal row.
    pub tabular: f64,
    /// Decimal vs integer number, no delimiter.
    pub normalization_no_delim: f64,
    /// Decimal vs integer number, with a one-token delimiter.
    pub normalization_with_delim: f64,
    /// Compounded: tabular x normalization-with-delimiters.
    pub overall: f64,
}

pub fn compression_report(profile: &TokenProfile) -> CompressionReport {
    let tabular = profile.nl_decimal_cell / profile.tab_decimal_cell;
    let normalization_no_delim = profile.decimal_no_delim / profile.integer_no_delim;
    let normalization_with_delim = profile.decimal_with_delim / profile.integer_with_delim;
    CompressionReport {
        profile: profile.name.clone(),
        tabular,
        normalization_no_delim,
        normalization_with_delim,
        overall: tabular * normalization_with_delim,
    }
}

/// Batch-inference amortization `C(1)/C(N) = N(M+1)/(M+N)`, independent
/// of the tokenizer.
pub fn amortization_ratio(m: u64, n: u64) -> f64 {
    debug_assert!(n >= 1);
    (n * (m + 1)) as f64 / (m + n) as f64
}

/// Round to the given number of decimals, half away from zero. Used to
/// compare computed ratios against their rounded display forms.
pub fn round_to(value: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    libm::round(value * scale) / scale
}
