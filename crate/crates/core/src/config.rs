//! Corpus generation and guard configuration.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::codec::{PromptHeader, TokenProfile};
use crate::error::{Error, Result};

/// Activation pool entry. Shape parameters are sampled per node when the
/// spec is instantiated; the pool only names the families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Tanh,
    LeakyRelu,
    Relu,
    Relu6,
    Selu,
    Silu,
    Softplus,
    HardTanh,
    Sign,
    Sine,
    Rbf,
    Exp,
    RandomFourier,
}

impl ActivationName {
    pub const ALL: [ActivationName; 13] = [
        ActivationName::Tanh,
        ActivationName::LeakyRelu,
        ActivationName::Relu,
        ActivationName::Relu6,
        ActivationName::Selu,
        ActivationName::Silu,
        ActivationName::Softplus,
        ActivationName::HardTanh,
        ActivationName::Sign,
        ActivationName::Sine,
        ActivationName::Rbf,
        ActivationName::Exp,
        ActivationName::RandomFourier,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActivationName::Tanh => "tanh",
            ActivationName::LeakyRelu => "leaky_relu",
            ActivationName::Relu => "relu",
            ActivationName::Relu6 => "relu6",
            ActivationName::Selu => "selu",
            ActivationName::Silu => "silu",
            ActivationName::Softplus => "softplus",
            ActivationName::HardTanh => "hardtanh",
            ActivationName::Sign => "sign",
            ActivationName::Sine => "sine",
            ActivationName::Rbf => "rbf",
            ActivationName::Exp => "exp",
            ActivationName::RandomFourier => "random_fourier",
        }
    }
}

impl core::str::FromStr for ActivationName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationName::ALL
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(alloc::format!("unknown activation '{s}'")))
    }
}

/// Thresholds for the task-level admission guard and the warm-up
/// consensus filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardConfig {
    /// One-sided binomial test threshold. Relaxed because the test has
    /// low power at N = 50.
    pub alpha: f64,
    /// Minimum Cohen's kappa (exclusive).
    pub kappa_min: f64,
    /// Balanced accuracy must exceed 1/K by this margin.
    pub delta_bacc: f64,
    /// Macro-F1 must reach the always-majority baseline plus this margin.
    pub delta_f1: f64,
    /// Maximum fraction of queries assigned to the dominant predicted class.
    pub tau_dom: f64,
    /// Required query count for guard evaluation.
    pub required_n: usize,
    /// Minimum class count.
    pub min_k: usize,
    /// Query count after the consensus filter.
    pub n_conse: usize,
    /// Whether the warm-up example-level consensus filter is applied.
    pub consensus: bool,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            alpha: 0.2,
            kappa_min: 0.01,
            delta_bacc: 0.03,
            delta_f1: 0.00,
            tau_dom: 0.95,
            required_n: 50,
            min_k: 2,
            n_conse: 20,
            consensus: false,
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(alloc::format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_dom) {
            return Err(Error::Config(alloc::format!(
                "tau_dom must be in [0,1], got {}",
                self.tau_dom
            )));
        }
        if self.n_conse > self.required_n {
            return Err(Error::Config(alloc::format!(
                "n_conse ({}) must not exceed required_n ({})",
                self.n_conse,
                self.required_n
            )));
        }
        if self.min_k < 2 {
            return Err(Error::Config(String::from("min_k must be at least 2")));
        }
        Ok(())
    }
}

/// Everything the corpus generator needs: SCM priors, task typing
/// priors, sampling policy bounds, the token budget, and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Total layer count range, inclusive. Layer 0 is independent noise.
    pub layers_min: usize,
    pub layers_max: usize,
    /// Per-layer width range, inclusive.
    pub width_min: usize,
    pub width_max: usize,
    /// Probability that a mechanism node is a boosted-tree regressor.
    pub tree_fraction: f64,
    /// Activation families to draw from.
    pub activations: Vec<ActivationName>,
    /// Inputs to `exp` are clamped to at most this value.
    pub exp_input_clamp: f64,
    /// Every node value is clamped to this magnitude.
    pub value_clamp: f64,
    /// Per-node noise scale is log-uniform over this range.
    pub noise_scale_min: f64,
    pub noise_scale_max: f64,
    /// Random-Fourier activation: component count and lengthscale prior.
    pub fourier_components: usize,
    pub fourier_lengthscale_min: f64,
    pub fourier_lengthscale_max: f64,
    /// Rows used to fit tree mechanisms while instantiating a spec.
    pub fit_rows: usize,
    /// Feature count range.
    pub d_min: usize,
    pub d_max: usize,
    /// Class count range.
    pub k_min: usize,
    pub k_max: usize,
    /// Demonstration count range; M is log-uniform over it.
    pub m_min: usize,
    pub m_max: usize,
    /// Queries per task.
    pub n_queries: usize,
    /// Fraction of columns made categorical is uniform over [0, this].
    pub categorical_fraction_max: f64,
    /// Bin count range for categorical columns.
    pub cat_bins_min: usize,
    pub cat_bins_max: usize,
    /// Probability of shuffling a categorical column's ids.
    pub id_shuffle_prob: f64,
    /// Prompt token budget; demonstrations are truncated to fit.
    pub token_budget: u64,
    /// Profile used for the budget check.
    pub budget_profile: TokenProfile,
    /// Header and instruction templates for prompt rendering.
    pub header: PromptHeader,
    pub master_seed: u64,
    pub guard: GuardConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            layers_min: 2,
            layers_max: 6,
            width_min: 4,
            width_max: 32,
            tree_fraction: 0.30,
            activations: ActivationName::ALL.to_vec(),
            exp_input_clamp: 20.0,
            value_clamp: 1e6,
            noise_scale_min: 0.01,
            noise_scale_max: 1.0,
            fourier_components: 8,
            fourier_lengthscale_min: 0.1,
            fourier_lengthscale_max: 10.0,
            fit_rows: 64,
            d_min: 5,
            d_max: 50,
            k_min: 2,
            k_max: 10,
            m_min: 8,
            m_max: 1024,
            n_queries: 50,
            categorical_fraction_max: 0.4,
            cat_bins_min: 2,
            cat_bins_max: 10,
            id_shuffle_prob: 0.5,
            token_budget: 32_768,
            budget_profile: TokenProfile::merged_3digit(),
            header: PromptHeader::default(),
            master_seed: 42,
            guard: GuardConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        fn range_ok(name: &str, lo: usize, hi: usize, min_lo: usize) -> Result<()> {
            if lo < min_lo || lo > hi {
                return Err(Error::Config(alloc::format!(
                    "{name} range [{lo}, {hi}] is invalid (minimum {min_lo})"
                )));
            }
            Ok(())
        }
        range_ok("layers", self.layers_min, self.layers_max, 2)?;
        range_ok("width", self.width_min, self.width_max, 1)?;
        range_ok("d", self.d_min, self.d_max, 1)?;
        range_ok("k", self.k_min, self.k_max, 2)?;
        range_ok("m", self.m_min, self.m_max, 1)?;
        range_ok("cat_bins", self.cat_bins_min, self.cat_bins_max, 1)?;
        if self.activations.is_empty() {
            return Err(Error::Config(String::from("activation pool is empty")));
        }
        if !(0.0..=1.0).contains(&self.tree_fraction) {
            return Err(Error::Config(alloc::format!(
                "tree_fraction must be in [0,1], got {}",
                self.tree_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.categorical_fraction_max)
            || !(0.0..=1.0).contains(&self.id_shuffle_prob)
        {
            return Err(Error::Config(String::from(
                "categorical_fraction_max and id_shuffle_prob must be in [0,1]",
            )));
        }
        if self.noise_scale_min <= 0.0 || self.noise_scale_min > self.noise_scale_max {
            return Err(Error::Config(String::from("invalid noise scale range")));
        }
        if self.fourier_lengthscale_min <= 0.0
            || self.fourier_lengthscale_min > self.fourier_lengthscale_max
        {
            return Err(Error::Config(String::from("invalid lengthscale range")));
        }
        if self.fourier_components == 0 {
            return Err(Error::Config(String::from(
                "fourier_components must be positive",
            )));
        }
        if self.fit_rows < 2 {
            return Err(Error::Config(String::from("fit_rows must be at least 2")));
        }
        if self.n_queries == 0 {
            return Err(Error::Config(String::from("n_queries must be positive")));
        }
        if self.value_clamp <= 0.0 {
            return Err(Error::Config(String::from("value_clamp must be positive")));
        }
        self.guard.validate()
    }
}
