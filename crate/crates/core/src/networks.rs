//! Parameterised MLPs for the generator, encoder, discriminator, code
//! discriminator, critic and evaluation classifier.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};

/// Negative-side slope of every leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("{role} expects {expected} input columns, got shape {shape:?}")]
    InputWidth {
        role: Role,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("noise batch has {noise} rows but data batch has {data}")]
    NoiseRows { noise: usize, data: usize },
    #[error("unknown network role `{0}`")]
    UnknownRole(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    Normal { std: f64 },
    Uniform { limit: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::Normal { std: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    #[serde(default)]
    pub init: Init,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden: Activation, output: OutputActivation) -> Self {
        Self {
            layer_sizes,
            hidden_activation: hidden,
            output_activation: output,
            init: Init::default(),
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.layer_sizes.len() < 2 {
            return Err(NetworkError::InvalidSpec(format!(
                "need at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NetworkError::InvalidSpec(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        match self.init {
            Init::Normal { std } if !(std >= 0.0 && std.is_finite()) => Err(
                NetworkError::InvalidSpec(format!("normal init std must be finite and >= 0, got {std}")),
            ),
            Init::Uniform { limit } if !(limit >= 0.0 && limit.is_finite()) => Err(
                NetworkError::InvalidSpec(format!("uniform init limit must be finite and >= 0, got {limit}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    /// Number of scalar weights and biases.
    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Encoder,
    Discriminator,
    CodeDiscriminator,
    Critic,
    Classifier,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Generator,
        Role::Encoder,
        Role::Discriminator,
        Role::CodeDiscriminator,
        Role::Critic,
        Role::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Encoder => "encoder",
            Role::Discriminator => "discriminator",
            Role::CodeDiscriminator => "code_discriminator",
            Role::Critic => "critic",
            Role::Classifier => "classifier",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| NetworkError::UnknownRole(s.to_string()))
    }
}

/// Weights and biases of one MLP, tagged with the role it plays.
///
/// Layer `l` computes `h · W_l + b_l` with `W_l` of shape
/// `[layer_sizes[l], layer_sizes[l + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    role: Role,
    spec: MlpSpec,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl NetworkParams {
    /// Draws weights from `spec.init` with a generator seeded by `seed`; biases start at zero.
    pub fn init(role: Role, spec: MlpSpec, seed: u64) -> Result<Self, NetworkError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(spec.layers());
        let mut biases = Vec::with_capacity(spec.layers());
        for pair in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let n = fan_in * fan_out;
            let data: Vec<f64> = match spec.init {
                Init::Normal { std } if std > 0.0 => {
                    let dist = Normal::new(0.0, std).expect("validated std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                Init::Uniform { limit } if limit > 0.0 => {
                    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
                }
                _ => vec![0.0; n],
            };
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::zeros(vec![fan_out])?);
        }
        Ok(Self {
            role,
            spec,
            weights,
            biases,
        })
    }

    /// Rebuilds a network from tensors in `[W0, b0, W1, b1, ...]` order.
    pub fn from_tensors(role: Role, spec: MlpSpec, tensors: Vec<Tensor>) -> Result<Self, NetworkError> {
        spec.validate()?;
        if tensors.len() != 2 * spec.layers() {
            return Err(NetworkError::InvalidSpec(format!(
                "{role}: expected {} tensors, got {}",
                2 * spec.layers(),
                tensors.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, chunk) in tensors.chunks(2).enumerate() {
            let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            if chunk[0].shape() != [fan_in, fan_out] || chunk[1].shape() != [fan_out] {
                return Err(NetworkError::InvalidSpec(format!(
                    "{role}: layer {l} has shapes {:?}/{:?}, expected [{fan_in}, {fan_out}]/[{fan_out}]",
                    chunk[0].shape(),
                    chunk[1].shape()
                )));
            }
            weights.push(chunk[0].clone());
            biases.push(chunk[1].clone());
        }
        Ok(Self {
            role,
            spec,
            weights,
            biases,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Parameters in `[W0, b0, W1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Hash of the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.role.hash(&mut h);
        for t in self.tensors() {
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Places the parameters on `tape`, as gradient leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        BoundNetwork {
            role: self.role,
            spec: self.spec.clone(),
            weights,
            biases,
        }
    }

    /// Evaluates the network without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NetworkError> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let y = net.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// A network whose parameters live on a particular tape.
pub struct BoundNetwork {
    role: Role,
    spec: MlpSpec,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

fn hidden(tape: &mut Tape, act: Activation, h: Var) -> Var {
    match act {
        Activation::Relu => tape.relu(h),
        Activation::LeakyRelu => tape.leaky_relu(h, LEAKY_SLOPE),
        Activation::Tanh => tape.tanh(h),
    }
}

fn output(tape: &mut Tape, act: OutputActivation, h: Var) -> Var {
    match act {
        OutputActivation::Identity => h,
        OutputActivation::Tanh => tape.tanh(h),
        OutputActivation::Sigmoid => tape.sigmoid(h),
    }
}

impl BoundNetwork {
    /// Views a `[1, P]` row of parameters (in `[W0, b0, ...]` order, row-major)
    /// as a network, so that a single tape leaf carries every parameter.
    pub fn from_flat(tape: &mut Tape, role: Role, spec: MlpSpec, flat: Var) -> Result<Self, NetworkError> {
        spec.validate()?;
        let expected = spec.parameter_count();
        let shape = tape.value(flat).shape().to_vec();
        if shape != [1, expected] {
            return Err(NetworkError::InvalidSpec(format!(
                "{role}: expected [1, {expected}] parameters, got {shape:?}"
            )));
        }
        let mut at = 0;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let slice = tape.slice_cols(flat, at, at + fan_in * fan_out)?;
            weights.push(tape.reshape(slice, &[fan_in, fan_out])?);
            at += fan_in * fan_out;
            let slice = tape.slice_cols(flat, at, at + fan_out)?;
            biases.push(tape.reshape(slice, &[fan_out])?);
            at += fan_out;
        }
        Ok(Self {
            role,
            spec,
            weights,
            biases,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Parameter handles in `[W0, b0, W1, b1, ...]` order.
    pub fn params(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    /// Gradients of the parameters after a backward pass, in [`Self::params`] order.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.params().into_iter().map(|v| tape.grad_or_zeros(v)).collect()
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<(), NetworkError> {
        let t = tape.value(x);
        if t.rank() != 2 || t.cols() != self.spec.input_dim() {
            return Err(NetworkError::InputWidth {
                role: self.role,
                expected: self.spec.input_dim(),
                shape: t.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetworkError> {
        self.check_input(tape, x)?;
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = if l == last {
                output(tape, self.spec.output_activation, z)
            } else {
                hidden(tape, self.spec.hidden_activation, z)
            };
        }
        Ok(h)
    }

    /// Forward pass plus, on the same tape, the gradient of each row's
    /// (single) output with respect to that row's input.
    ///
    /// The returned gradient is itself differentiable with respect to the
    /// parameters. Activation kinks contribute constant masks, so for
    /// piecewise-linear activations this is exact.
    pub fn forward_with_input_gradient(
        &self,
        tape: &mut Tape,
        x: Var,
    ) -> Result<(Var, Var), NetworkError> {
        self.check_input(tape, x)?;
        if self.spec.output_dim() != 1 {
            return Err(NetworkError::InvalidSpec(format!(
                "{}: input gradient needs a single output, got {}",
                self.role,
                self.spec.output_dim()
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x;
        // Local derivative of each layer's activation, evaluated at its pre-activation.
        let mut local: Vec<Option<Var>> = Vec::with_capacity(self.weights.len());
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            if l == last {
                h = output(tape, self.spec.output_activation, z);
                local.push(match self.spec.output_activation {
                    OutputActivation::Identity => None,
                    OutputActivation::Tanh => Some(one_minus_square(tape, h)?),
                    OutputActivation::Sigmoid => {
                        let ones = ones_like(tape, h);
                        let one_minus = tape.sub(ones, h)?;
                        Some(tape.mul(h, one_minus)?)
                    }
                });
            } else {
                h = hidden(tape, self.spec.hidden_activation, z);
                local.push(Some(match self.spec.hidden_activation {
                    Activation::Relu => mask(tape, z, 0.0),
                    Activation::LeakyRelu => mask(tape, z, LEAKY_SLOPE),
                    Activation::Tanh => one_minus_square(tape, h)?,
                }));
            }
        }
        let rows = tape.value(x).rows();
        let mut g = tape.constant(Tensor::full(vec![rows, 1], 1.0)?);
        for l in (0..self.weights.len()).rev() {
            if let Some(d) = local[l] {
                g = tape.mul(g, d)?;
            }
            let wt = tape.transpose(self.weights[l])?;
            g = tape.matmul(g, wt)?;
        }
        Ok((h, g))
    }
}

fn ones_like(tape: &mut Tape, v: Var) -> Var {
    let shape = tape.value(v).shape().to_vec();
    tape.constant(Tensor::full(shape, 1.0).expect("shape of existing value"))
}

fn one_minus_square(tape: &mut Tape, y: Var) -> Result<Var, TensorError> {
    let sq = tape.square(y);
    let ones = ones_like(tape, y);
    tape.sub(ones, sq)
}

/// Constant 0/1 (or slope/1) mask of the activation derivative at `z`.
fn mask(tape: &mut Tape, z: Var, negative: f64) -> Var {
    let m = tape.value(z).map(|v| if v > 0.0 { 1.0 } else { negative });
    tape.constant(m)
}

/// Maps latent codes to data space. Output is in (−1, 1) when the spec ends in tanh.
pub fn generator_forward(tape: &mut Tape, generator: &BoundNetwork, z: Var) -> Result<Var, NetworkError> {
    generator.forward(tape, z)
}

/// Encodes data into latent codes.
///
/// With `noise`, the network input is `[x, ε]` and the encoder is an implicit
/// stochastic posterior; without it the encoder is deterministic. With
/// `project_to_ball`, every code row is divided by `max(1, ‖row‖₂)`.
pub fn encoder_forward(
    tape: &mut Tape,
    encoder: &BoundNetwork,
    x: Var,
    noise: Option<Var>,
    project_to_ball: bool,
) -> Result<Var, NetworkError> {
    let input = match noise {
        Some(eps) => {
            let (data, noise) = (tape.value(x).rows(), tape.value(eps).rows());
            if data != noise {
                return Err(NetworkError::NoiseRows { noise, data });
            }
            tape.concat(&[x, eps], 1)?
        }
        None => x,
    };
    let z = encoder.forward(tape, input)?;
    if project_to_ball {
        Ok(tape.project_unit_ball(z)?)
    } else {
        Ok(z)
    }
}

/// Raw logits of `D(x) = p(real | x)`, one per row.
pub fn discriminator_forward(tape: &mut Tape, discriminator: &BoundNetwork, x: Var) -> Result<Var, NetworkError> {
    discriminator.forward(tape, x)
}

/// Raw logits of `C(z) = p(prior | z)`, one per row.
pub fn code_discriminator_forward(
    tape: &mut Tape,
    code_discriminator: &BoundNetwork,
    z: Var,
) -> Result<Var, NetworkError> {
    code_discriminator.forward(tape, z)
}

/// Numerically stable logistic function.
pub fn sigmoid(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// Row-wise projection onto the unit ball, outside of any tape.
pub fn project_unit_ball(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 1.0 {
        v.iter().map(|a| a / norm).collect()
    } else {
        v.to_vec()
    }
}
