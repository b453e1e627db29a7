use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{DataKind, DatasetSpec};
use crate::losses::{EmpiricalKl, GeneratorLoss};
use crate::networks::{Activation, Init, MlpSpec, OutputActivation, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AlphaGan,
    Gan,
    WganGp,
    Age,
    Vae,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::AlphaGan, Self::Gan, Self::WganGp, Self::Age, Self::Vae];

    pub fn name(self) -> &'static str {
        match self {
            Self::AlphaGan => "alpha_gan",
            Self::Gan => "gan",
            Self::WganGp => "wgan_gp",
            Self::Age => "age",
            Self::Vae => "vae",
        }
    }

    /// Networks trained by the algorithm, in update order.
    pub fn roles(self) -> &'static [Role] {
        match self {
            Self::AlphaGan => &[Role::Encoder, Role::Generator, Role::Discriminator, Role::CodeDiscriminator],
            Self::Gan => &[Role::Generator, Role::Discriminator],
            Self::WganGp => &[Role::Critic, Role::Generator],
            Self::Age => &[Role::Generator, Role::Encoder],
            Self::Vae => &[Role::Encoder, Role::Generator],
        }
    }

    pub fn has_encoder(self) -> bool {
        self.roles().contains(&Role::Encoder)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Everything that determines a training run.
///
/// Optional rates and ratios fall back to per-algorithm defaults, see
/// [`TrainingConfig::learning_rate`] and [`TrainingConfig::steps`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub algorithm: Algorithm,
    #[serde(default = "DatasetSpec::ring")]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub lr_generator: Option<f64>,
    #[serde(default)]
    pub lr_encoder: Option<f64>,
    #[serde(default)]
    pub lr_discriminator: Option<f64>,
    #[serde(default)]
    pub lr_code_discriminator: Option<f64>,
    #[serde(default)]
    pub generator_steps: Option<usize>,
    #[serde(default)]
    pub encoder_steps: Option<usize>,
    #[serde(default)]
    pub discriminator_steps: Option<usize>,
    #[serde(default)]
    pub code_discriminator_steps: Option<usize>,
    /// Reconstruction weight; 10 for alpha-GAN and 1 elsewhere unless set.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "defaults::age_data_weight")]
    pub age_data_weight: f64,
    #[serde(default = "defaults::age_code_weight")]
    pub age_code_weight: f64,
    #[serde(default = "defaults::yes")]
    pub kl_corrected: bool,
    /// Divide the empirical KL by the latent size. Defaults to on for AGE.
    #[serde(default)]
    pub kl_per_dim: Option<bool>,
    #[serde(default = "defaults::gp_coeff")]
    pub gp_coeff: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Draw a new data and prior batch for every network update rather than
    /// one shared pair per iteration.
    #[serde(default = "defaults::yes")]
    pub fresh_batches: bool,
    /// Width of the noise appended to the encoder input; 0 is a deterministic encoder.
    #[serde(default)]
    pub encoder_noise_dim: usize,
    /// Weight of the real-data term in the discriminator loss.
    #[serde(default = "defaults::real_weight")]
    pub real_weight: f64,
    #[serde(default = "defaults::generator_loss")]
    pub generator_loss: GeneratorLoss,
    #[serde(default = "defaults::hidden")]
    pub generator_hidden: Vec<usize>,
    #[serde(default = "defaults::hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "defaults::hidden")]
    pub discriminator_hidden: Vec<usize>,
    #[serde(default = "defaults::code_hidden")]
    pub code_discriminator_hidden: Vec<usize>,
    /// Weight initialisation; defaults to normal(0.02), or normal(0.2) for the VAE.
    #[serde(default)]
    pub init: Option<Init>,
    /// Fill the `wall_ms` metric column. Off by default so logs are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

mod defaults {
    use crate::losses::GeneratorLoss;

    pub fn age_data_weight() -> f64 {
        100.0
    }
    pub fn age_code_weight() -> f64 {
        10.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn gp_coeff() -> f64 {
        10.0
    }
    pub fn beta1() -> f64 {
        0.5
    }
    pub fn beta2() -> f64 {
        0.9
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn latent_dim() -> usize {
        10
    }
    pub fn max_iter() -> usize {
        20_000
    }
    pub fn eval_every() -> usize {
        1_000
    }
    pub fn real_weight() -> f64 {
        1.0
    }
    pub fn generator_loss() -> GeneratorLoss {
        GeneratorLoss::Alternative
    }
    pub fn hidden() -> Vec<usize> {
        vec![64, 64]
    }
    pub fn code_hidden() -> Vec<usize> {
        vec![64, 64, 64]
    }
}

impl TrainingConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            dataset: DatasetSpec::ring(),
            lr_generator: None,
            lr_encoder: None,
            lr_discriminator: None,
            lr_code_discriminator: None,
            generator_steps: None,
            encoder_steps: None,
            discriminator_steps: None,
            code_discriminator_steps: None,
            lambda: None,
            age_data_weight: defaults::age_data_weight(),
            age_code_weight: defaults::age_code_weight(),
            kl_corrected: true,
            kl_per_dim: None,
            gp_coeff: defaults::gp_coeff(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_eps: defaults::adam_eps(),
            batch_size: defaults::batch_size(),
            latent_dim: defaults::latent_dim(),
            max_iter: defaults::max_iter(),
            eval_every: defaults::eval_every(),
            seed: None,
            fresh_batches: true,
            encoder_noise_dim: 0,
            real_weight: defaults::real_weight(),
            generator_loss: defaults::generator_loss(),
            generator_hidden: defaults::hidden(),
            encoder_hidden: defaults::hidden(),
            discriminator_hidden: defaults::hidden(),
            code_discriminator_hidden: defaults::code_hidden(),
            init: None,
            record_wall_time: false,
        }
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Sets every learning rate at once.
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.lr_generator = Some(lr);
        self.lr_encoder = Some(lr);
        self.lr_discriminator = Some(lr);
        self.lr_code_discriminator = Some(lr);
        self
    }

    fn default_learning_rate(&self) -> f64 {
        match self.algorithm {
            Algorithm::AlphaGan | Algorithm::Vae => 5e-4,
            Algorithm::Gan | Algorithm::Age => 2e-4,
            Algorithm::WganGp => 1e-4,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
            .unwrap_or(if self.algorithm == Algorithm::AlphaGan { 10.0 } else { 1.0 })
    }

    pub fn init(&self) -> Init {
        self.init.unwrap_or(match self.algorithm {
            Algorithm::Vae => Init::Normal { std: 0.2 },
            _ => Init::default(),
        })
    }

    pub fn learning_rate(&self, role: Role) -> f64 {
        let explicit = match role {
            Role::Generator => self.lr_generator,
            Role::Encoder => self.lr_encoder,
            Role::Discriminator | Role::Critic => self.lr_discriminator,
            Role::CodeDiscriminator => self.lr_code_discriminator,
            Role::Classifier => None,
        };
        explicit.unwrap_or_else(|| self.default_learning_rate())
    }

    /// Updates of `role` per outer iteration.
    pub fn steps(&self, role: Role) -> usize {
        let explicit = match role {
            Role::Generator => self.generator_steps,
            Role::Encoder => self.encoder_steps,
            Role::Discriminator | Role::Critic => self.discriminator_steps,
            Role::CodeDiscriminator => self.code_discriminator_steps,
            Role::Classifier => None,
        };
        explicit.unwrap_or(match (self.algorithm, role) {
            (Algorithm::AlphaGan, Role::Encoder | Role::Generator) => 2,
            (Algorithm::Gan, Role::Generator) => 2,
            (Algorithm::WganGp, Role::Critic) => 5,
            (Algorithm::Age, Role::Generator) => 2,
            _ => 1,
        })
    }

    pub fn empirical_kl(&self) -> EmpiricalKl {
        EmpiricalKl {
            corrected: self.kl_corrected,
            per_dim: self
                .kl_per_dim
                .unwrap_or(self.algorithm == Algorithm::Age),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |key: &str, detail: String| {
            Err(TrainError::Config {
                key: key.to_string(),
                detail,
            })
        };
        for (key, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_encoder", self.lr_encoder),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_code_discriminator", self.lr_code_discriminator),
        ] {
            if let Some(lr) = lr {
                if !(lr >= 0.0 && lr.is_finite()) {
                    return bad(key, format!("learning rate must be finite and non-negative, got {lr}"));
                }
            }
        }
        for (key, steps) in [
            ("generator_steps", self.generator_steps),
            ("encoder_steps", self.encoder_steps),
            ("discriminator_steps", self.discriminator_steps),
            ("code_discriminator_steps", self.code_discriminator_steps),
        ] {
            if steps == Some(0) {
                return bad(key, "update ratio must be at least 1".into());
            }
        }
        for (key, v) in [
            ("lambda", self.lambda()),
            ("age_data_weight", self.age_data_weight),
            ("age_code_weight", self.age_code_weight),
            ("real_weight", self.real_weight),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("must be positive, got {v}"));
            }
        }
        if !(self.gp_coeff >= 0.0 && self.gp_coeff.is_finite()) {
            return bad("gp_coeff", format!("must be non-negative, got {}", self.gp_coeff));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(key, format!("must lie in [0, 1), got {b}"));
            }
        }
        if self.batch_size < 2 {
            return bad("batch_size", format!("must be at least 2, got {}", self.batch_size));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1".into());
        }
        for (key, h) in [
            ("generator_hidden", &self.generator_hidden),
            ("encoder_hidden", &self.encoder_hidden),
            ("discriminator_hidden", &self.discriminator_hidden),
            ("code_discriminator_hidden", &self.code_discriminator_hidden),
        ] {
            if h.contains(&0) {
                return bad(key, format!("hidden widths must be positive, got {h:?}"));
            }
        }
        Ok(())
    }

    /// Architecture of `role` for data of the given kind.
    pub fn network_spec(&self, role: Role, kind: DataKind) -> MlpSpec {
        let data = kind.dim();
        let latent = self.latent_dim;
        let sizes = |input: usize, hidden: &[usize], output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(output);
            s
        };
        let (layers, hidden, out) = match role {
            Role::Generator => (
                sizes(latent, &self.generator_hidden, data),
                Activation::Relu,
                if kind.is_image() {
                    OutputActivation::Tanh
                } else {
                    OutputActivation::Identity
                },
            ),
            Role::Encoder => {
                let input = data + self.encoder_noise_dim;
                let output = if self.algorithm == Algorithm::Vae { 2 * latent } else { latent };
                (sizes(input, &self.encoder_hidden, output), Activation::LeakyRelu, OutputActivation::Identity)
            }
            Role::Discriminator | Role::Critic | Role::Classifier => (
                sizes(data, &self.discriminator_hidden, 1),
                Activation::LeakyRelu,
                OutputActivation::Identity,
            ),
            Role::CodeDiscriminator => (
                sizes(latent, &self.code_discriminator_hidden, 1),
                Activation::LeakyRelu,
                OutputActivation::Identity,
            ),
        };
        MlpSpec::new(layers, hidden, out).with_init(self.init())
    }
}
