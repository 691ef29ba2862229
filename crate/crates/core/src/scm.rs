//! Structural causal model sampling and propagation.
//!
//! A sampled model is a DAG shaped like a fully connected MLP: layer 0
//! holds independent noise inputs and every node in layer L has all of
//! layer L-1 as parents. Each mechanism node computes an activation of
//! an affine combination of its parents, or is one output of a boosted
//! regression ensemble fitted on the parents against Gaussian fake
//! targets. Propagating noise through the graph yields i.i.d. rows.
//!
//! Sampling happens in two phases: [`sample_structure`] draws the cheap
//! structural choices (widths, mechanism kinds, noise scales, target and
//! observed nodes), and [`sample_scm`] materializes it by running a small
//! fitting pass that trains the tree mechanisms layer by layer. Both are
//! deterministic in `(config, seed)`.

use alloc::vec::Vec;

use crate::config::{ActivationName, CorpusConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream_seed, Rng};
use crate::trees::{fit_gbdt_regressor, TreeRegressor};

const SALT_STRUCTURE: u64 = 0x5C31;
const SALT_FIT: u64 = 0xF17;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// One sinusoid of a random-Fourier activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierComponent {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// A concrete activation with its shape parameters. Every kind is total
/// on finite inputs and produces finite outputs (`exp` clamps its input).
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationKind {
    Tanh,
    LeakyRelu { slope: f64 },
    Relu,
    Relu6,
    Selu,
    Silu,
    Softplus,
    HardTanh,
    Sign,
    Sine,
    Rbf,
    Exp { input_clamp: f64 },
    RandomFourier { scale: f64, components: Vec<FourierComponent> },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn apply_activation(kind: &ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Tanh => libm::tanh(x),
        ActivationKind::LeakyRelu { slope } => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::Relu6 => x.clamp(0.0, 6.0),
        ActivationKind::Selu => {
            if x > 0.0 {
                SELU_LAMBDA * x
            } else {
                SELU_LAMBDA * SELU_ALPHA * (libm::exp(x) - 1.0)
            }
        }
        ActivationKind::Silu => x * sigmoid(x),
        ActivationKind::Softplus => {
            if x > 20.0 {
                x + libm::log1p(libm::exp(-x))
            } else {
                libm::log1p(libm::exp(x))
            }
        }
        ActivationKind::HardTanh => x.clamp(-1.0, 1.0),
        ActivationKind::Sign => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        ActivationKind::Sine => libm::sin(x),
        ActivationKind::Rbf => libm::exp(-x * x),
        ActivationKind::Exp { input_clamp } => libm::exp(x.min(*input_clamp)),
        ActivationKind::RandomFourier { scale, components } => {
            let mut acc = 0.0;
            for c in components {
                acc += c.amplitude * libm::cos(c.frequency * x + c.phase);
            }
            scale * acc
        }
    }
}

/// Node address: layer index and position within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    pub layer: usize,
    pub index: usize,
}

/// Structural mechanism choice, before tree fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum StructMechanism {
    Activation {
        kind: ActivationKind,
        weights: Vec<f64>,
        bias: f64,
    },
    Tree,
}

/// Fitted mechanism in a materialized spec.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Activation {
        kind: ActivationKind,
        weights: Vec<f64>,
        bias: f64,
    },
    /// Output `output` of `ScmSpec::regressors[regressor]`.
    Tree { regressor: usize, output: usize },
}

/// Sampled graph structure before the tree mechanisms are fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmStructure {
    /// Per-layer node counts; layer 0 is the noise-input layer.
    pub widths: Vec<usize>,
    /// Mechanisms for layers 1.. (index 0 corresponds to layer 1).
    pub mechanisms: Vec<Vec<StructMechanism>>,
    /// Noise scale per node, all layers.
    pub noise_scales: Vec<Vec<f64>>,
    /// Observed feature count.
    pub d: usize,
    pub target: NodeId,
    pub observed: Vec<NodeId>,
    pub master_seed: u64,
}

impl ScmStructure {
    pub fn mechanism_node_count(&self) -> usize {
        self.widths[1..].iter().sum()
    }

    pub fn tree_node_count(&self) -> usize {
        self.mechanisms
            .iter()
            .flatten()
            .filter(|m| matches!(m, StructMechanism::Tree))
            .count()
    }
}

/// A fully materialized structural causal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    pub widths: Vec<usize>,
    /// Mechanisms for layers 1.. (index 0 corresponds to layer 1).
    pub mechanisms: Vec<Vec<Mechanism>>,
    pub regressors: Vec<TreeRegressor>,
    pub noise_scales: Vec<Vec<f64>>,
    pub d: usize,
    pub target: NodeId,
    pub observed: Vec<NodeId>,
    pub master_seed: u64,
    pub value_clamp: f64,
}

/// Raw propagated samples: `d` observed feature columns plus the scalar
/// target column. Contains no NaN/Inf by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub features: Matrix,
    pub target: Vec<f64>,
}

fn sample_activation(
    name: ActivationName,
    config: &CorpusConfig,
    rng: &mut Rng,
) -> ActivationKind {
    match name {
        ActivationName::Tanh => ActivationKind::Tanh,
        ActivationName::LeakyRelu => ActivationKind::LeakyRelu {
            slope: LEAKY_RELU_SLOPE,
        },
        ActivationName::Relu => ActivationKind::Relu,
        ActivationName::Relu6 => ActivationKind::Relu6,
        ActivationName::Selu => ActivationKind::Selu,
        ActivationName::Silu => ActivationKind::Silu,
        ActivationName::Softplus => ActivationKind::Softplus,
        ActivationName::HardTanh => ActivationKind::HardTanh,
        ActivationName::Sign => ActivationKind::Sign,
        ActivationName::Sine => ActivationKind::Sine,
        ActivationName::Rbf => ActivationKind::Rbf,
        ActivationName::Exp => ActivationKind::Exp {
            input_clamp: config.exp_input_clamp,
        },
        ActivationName::RandomFourier => {
            // Random Fourier features draw from an RBF-kernel GP prior
            // without a GP solve: frequencies scale with 1/lengthscale.
            let lengthscale =
                rng.log_uniform(config.fourier_lengthscale_min, config.fourier_lengthscale_max);
            let r = config.fourier_components;
            let components = (0..r)
                .map(|_| FourierComponent {
                    amplitude: rng.normal(),
                    frequency: rng.normal() / lengthscale,
                    phase: rng.uniform(0.0, 2.0 * core::f64::consts::PI),
                })
                .collect();
            ActivationKind::RandomFourier {
                scale: libm::sqrt(2.0 / r as f64),
                components,
            }
        }
    }
}

/// Sample the graph structure: widths, mechanism kinds, noise scales,
/// target node, and observed feature nodes. Cheap; no tree fitting.
pub fn sample_structure(config: &CorpusConfig, seed: u64) -> Result<ScmStructure> {
    config.validate()?;
    let mut rng = Rng::from_seed(stream_seed(seed, SALT_STRUCTURE));

    let d = rng.range_inclusive(config.d_min as u64, config.d_max as u64) as usize;
    let layer_count =
        rng.range_inclusive(config.layers_min as u64, config.layers_max as u64) as usize;
    let mut widths: Vec<usize> = (0..layer_count)
        .map(|_| rng.range_inclusive(config.width_min as u64, config.width_max as u64) as usize)
        .collect();

    // The graph must hold d observed nodes plus the target. Bump widths
    // round-robin (capped at width_max) until it does.
    let needed = d + 1;
    let mut at = 0usize;
    while widths.iter().sum::<usize>() < needed {
        if widths.iter().all(|&w| w >= config.width_max) {
            return Err(Error::Config(alloc::format!(
                "cannot place {needed} nodes: {layer_count} layers capped at width {}",
                config.width_max
            )));
        }
        if widths[at] < config.width_max {
            widths[at] += 1;
        }
        at = (at + 1) % layer_count;
    }

    let mut mechanisms = Vec::with_capacity(layer_count - 1);
    for layer in 1..layer_count {
        let fan_in = widths[layer - 1];
        let weight_scale = 1.0 / libm::sqrt(fan_in as f64);
        let layer_mechs = (0..widths[layer])
            .map(|_| {
                if rng.bernoulli(config.tree_fraction) {
                    StructMechanism::Tree
                } else {
                    let name = config.activations
                        [rng.below(config.activations.len() as u64) as usize];
                    let kind = sample_activation(name, config, &mut rng);
                    let weights = (0..fan_in).map(|_| rng.normal() * weight_scale).collect();
                    let bias = rng.normal() * 0.25;
                    StructMechanism::Activation { kind, weights, bias }
                }
            })
            .collect();
        mechanisms.push(layer_mechs);
    }

    let noise_scales: Vec<Vec<f64>> = widths
        .iter()
        .map(|&w| {
            (0..w)
                .map(|_| rng.log_uniform(config.noise_scale_min, config.noise_scale_max))
                .collect()
        })
        .collect();

    let target = NodeId {
        layer: layer_count - 1,
        index: rng.below(widths[layer_count - 1] as u64) as usize,
    };
    let mut candidates: Vec<NodeId> = Vec::new();
    for (layer, &w) in widths.iter().enumerate() {
        for index in 0..w {
            let id = NodeId { layer, index };
            if id != target {
                candidates.push(id);
            }
        }
    }
    let observed = rng
        .choose_distinct(candidates.len(), d)
        .into_iter()
        .map(|i| candidates[i])
        .collect();

    Ok(ScmStructure {
        widths,
        mechanisms,
        noise_scales,
        d,
        target,
        observed,
        master_seed: seed,
    })
}

/// Hyperparameters of a tree mechanism: `min(4, floor(1 + Exp(rate 0.5)))`
/// estimators and `min(4, floor(2 + Exp(rate 0.5)))` depth.
pub fn sample_gbdt_hyperparams(rng: &mut Rng) -> (usize, u32) {
    let n_estimators = libm::floor(1.0 + rng.exponential(0.5)).min(4.0) as usize;
    let max_depth = libm::floor(2.0 + rng.exponential(0.5)).min(4.0) as u32;
    (n_estimators, max_depth)
}

/// Fit one multi-output boosted regressor on parent samples against fake
/// Gaussian targets, with hyperparameters drawn from `rng`.
pub fn fit_tree_node(
    parent_samples: &Matrix,
    out_dim: usize,
    rng: &mut Rng,
) -> Result<TreeRegressor> {
    if parent_samples.rows() < 2 {
        return Err(Error::Degenerate(
            "tree mechanism needs at least 2 fitting rows".into(),
        ));
    }
    if out_dim == 0 {
        return Err(Error::Validation("out_dim must be positive".into()));
    }
    let (n_estimators, max_depth) = sample_gbdt_hyperparams(rng);
    let n = parent_samples.rows();
    let mut fake = Matrix::zeros(n, out_dim);
    for i in 0..n {
        for o in 0..out_dim {
            fake.set(i, o, rng.normal());
        }
    }
    fit_gbdt_regressor(parent_samples, &fake, n_estimators, max_depth)
}

/// Evaluate one layer given parent values. `noise` holds one pre-drawn
/// noise value per (row, node).
fn eval_layer(
    mechanisms: &[Mechanism],
    regressors: &[TreeRegressor],
    parents: &Matrix,
    noise: &Matrix,
    value_clamp: f64,
) -> Matrix {
    let n = parents.rows();
    let width = mechanisms.len();
    let mut out = Matrix::zeros(n, width);
    // Tree outputs come from whole-layer regressor predictions.
    let mut tree_preds: Vec<Option<Vec<Vec<f64>>>> = alloc::vec![None; regressors.len()];
    for mech in mechanisms {
        if let Mechanism::Tree { regressor, .. } = mech {
            if tree_preds[*regressor].is_none() {
                let preds = (0..n)
                    .map(|i| regressors[*regressor].predict(parents.row(i)))
                    .collect();
                tree_preds[*regressor] = Some(preds);
            }
        }
    }
    for i in 0..n {
        let parent_row = parents.row(i);
        for (j, mech) in mechanisms.iter().enumerate() {
            let value = match mech {
                Mechanism::Activation { kind, weights, bias } => {
                    let mut pre = *bias;
                    for (w, p) in weights.iter().zip(parent_row) {
                        pre += w * p;
                    }
                    apply_activation(kind, pre)
                }
                Mechanism::Tree { regressor, output } => {
                    tree_preds[*regressor].as_ref().unwrap()[i][*output]
                }
            };
            let v = (value + noise.get(i, j)).clamp(-value_clamp, value_clamp);
            out.set(i, j, v);
        }
    }
    out
}

fn draw_noise(scales: &[f64], n: usize, rng: &mut Rng) -> Matrix {
    let mut noise = Matrix::zeros(n, scales.len());
    for (j, &scale) in scales.iter().enumerate() {
        for i in 0..n {
            noise.set(i, j, scale * rng.normal());
        }
    }
    noise
}

/// Materialize a structure into a spec by fitting its tree mechanisms on
/// a small propagation pass.
pub fn materialize(structure: &ScmStructure, config: &CorpusConfig) -> Result<ScmSpec> {
    let mut fit_rng = Rng::from_seed(stream_seed(structure.master_seed, SALT_FIT));
    let n = config.fit_rows;
    let mut regressors: Vec<TreeRegressor> = Vec::new();
    let mut mechanisms: Vec<Vec<Mechanism>> = Vec::new();

    let noise0 = draw_noise(&structure.noise_scales[0], n, &mut fit_rng);
    let mut values = noise0; // layer 0 is pure noise

    for (li, layer) in structure.mechanisms.iter().enumerate() {
        let tree_count = layer
            .iter()
            .filter(|m| matches!(m, StructMechanism::Tree))
            .count();
        let regressor_index = if tree_count > 0 {
            let reg = fit_tree_node(&values, tree_count, &mut fit_rng)?;
            regressors.push(reg);
            Some(regressors.len() - 1)
        } else {
            None
        };
        let mut next_output = 0usize;
        let resolved: Vec<Mechanism> = layer
            .iter()
            .map(|m| match m {
                StructMechanism::Activation { kind, weights, bias } => Mechanism::Activation {
                    kind: kind.clone(),
                    weights: weights.clone(),
                    bias: *bias,
                },
                StructMechanism::Tree => {
                    let output = next_output;
                    next_output += 1;
                    Mechanism::Tree {
                        regressor: regressor_index.unwrap(),
                        output,
                    }
                }
            })
            .collect();
        let noise = draw_noise(&structure.noise_scales[li + 1], n, &mut fit_rng);
        values = eval_layer(&resolved, &regressors, &values, &noise, config.value_clamp);
        mechanisms.push(resolved);
    }

    Ok(ScmSpec {
        widths: structure.widths.clone(),
        mechanisms,
        regressors,
        noise_scales: structure.noise_scales.clone(),
        d: structure.d,
        target: structure.target,
        observed: structure.observed.clone(),
        master_seed: structure.master_seed,
        value_clamp: config.value_clamp,
    })
}

/// Sample and materialize a spec. Deterministic in `(config, seed)`.
pub fn sample_scm(config: &CorpusConfig, seed: u64) -> Result<ScmSpec> {
    let structure = sample_structure(config, seed)?;
    materialize(&structure, config)
}

/// Propagate `n` noise rows through the model and read out the observed
/// columns plus the target. Deterministic in `(scm, n, seed)`.
pub fn propagate(scm: &ScmSpec, n: usize, seed: u64) -> Result<RawMatrix> {
    if n == 0 {
        return Err(Error::Sizing("propagation needs n >= 1".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let mut layer_values: Vec<Matrix> = Vec::with_capacity(scm.widths.len());
    layer_values.push(draw_noise(&scm.noise_scales[0], n, &mut rng));
    for (li, mechanisms) in scm.mechanisms.iter().enumerate() {
        let noise = draw_noise(&scm.noise_scales[li + 1], n, &mut rng);
        let values = eval_layer(
            mechanisms,
            &scm.regressors,
            &layer_values[li],
            &noise,
            scm.value_clamp,
        );
        layer_values.push(values);
    }

    let mut features = Matrix::zeros(n, scm.d);
    for (j, id) in scm.observed.iter().enumerate() {
        for i in 0..n {
            features.set(i, j, layer_values[id.layer].get(i, id.index));
        }
    }
    let target: Vec<f64> = (0..n)
        .map(|i| layer_values[scm.target.layer].get(i, scm.target.index))
        .collect();

    if !features.is_finite() || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("non-finite value after clamping".into()));
    }
    Ok(RawMatrix { features, target })
}
