//! Optimisation and the five training loops.

mod adam;
mod config;

pub use adam::AdamState;
pub use config::{Algorithm, TrainingConfig};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::data::{DataError, DataKind, Dataset, SplitName};
use crate::losses::{self, AgeWeights, LossError, LossTerms};
use crate::networks::{encoder_forward, BoundNetwork, NetworkError, NetworkParams, Role};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },
    #[error("non-finite {detail} in {network} at iteration {iteration}")]
    NonFinite {
        network: Role,
        iteration: usize,
        detail: String,
        /// The model as it was before the failing iteration.
        last_good: Option<Box<TrainedModel>>,
    },
    #[error("{network}: gradient shapes do not match the parameters")]
    GradientShape { network: Role },
    #[error("model has no {0} network")]
    MissingNetwork(Role),
    #[error("expected a {expected} config, got {got}")]
    WrongAlgorithm { expected: Algorithm, got: Algorithm },
    #[error("dataset mismatch: {0}")]
    DataMismatch(String),
    #[error("observer: {0}")]
    Observer(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    pub fn is_numeric_abort(&self) -> bool {
        matches!(self, Self::NonFinite { .. })
    }

    /// Description of an arithmetic blow-up buried in a lower-level error.
    fn numeric_detail(&self) -> Option<String> {
        let tensor = match self {
            Self::Tensor(e) | Self::Loss(LossError::Tensor(e)) | Self::Network(NetworkError::Tensor(e)) => e,
            Self::Loss(e @ LossError::RatioOverflow(_)) => return Some(e.to_string()),
            _ => return None,
        };
        matches!(tensor, TensorError::Domain { .. }).then(|| tensor.to_string())
    }
}

/// Parameters of every network of one algorithm plus the config that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: TrainingConfig,
    pub kind: DataKind,
    pub iteration: usize,
    pub networks: Vec<NetworkParams>,
}

fn role_index(role: Role) -> u64 {
    Role::ALL.iter().position(|&r| r == role).unwrap_or(0) as u64
}

impl TrainedModel {
    /// Freshly initialised networks. Each network's init seed is derived from
    /// the run seed and the network's role.
    pub fn initialize(config: &TrainingConfig, kind: DataKind) -> Result<Self, TrainError> {
        config.validate()?;
        let seed = config.seed_or_default();
        let networks = config
            .algorithm
            .roles()
            .iter()
            .map(|&role| {
                let spec = config.network_spec(role, kind);
                NetworkParams::init(role, spec, seed.wrapping_mul(31).wrapping_add(role_index(role) + 1))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config: config.clone(),
            kind,
            iteration: 0,
            networks,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    pub fn network(&self, role: Role) -> Result<&NetworkParams, TrainError> {
        self.networks
            .iter()
            .find(|n| n.role() == role)
            .ok_or(TrainError::MissingNetwork(role))
    }

    fn position(&self, role: Role) -> Result<usize, TrainError> {
        self.networks
            .iter()
            .position(|n| n.role() == role)
            .ok_or(TrainError::MissingNetwork(role))
    }

    pub fn sample_prior(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        sample_prior(self.algorithm(), n, self.config.latent_dim, rng)
    }

    /// `n` generator samples from prior draws.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Tensor, TrainError> {
        let z = self.sample_prior(n, rng);
        Ok(self.network(Role::Generator)?.forward(&z)?)
    }

    /// Encoder codes; for the VAE these are the posterior means.
    pub fn encode(&self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor, TrainError> {
        let enc = self.network(Role::Encoder)?;
        let mut tape = Tape::new();
        let net = enc.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let noise = encoder_noise(&self.config, x.rows(), rng).map(|e| tape.constant(e));
        let out = encoder_forward(&mut tape, &net, xv, noise, self.algorithm() == Algorithm::Age)?;
        let out = if self.algorithm() == Algorithm::Vae {
            tape.slice_cols(out, 0, self.config.latent_dim)?
        } else {
            out
        };
        Ok(tape.value(out).clone())
    }

    /// `G(encode(x))`.
    pub fn reconstruct(&self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor, TrainError> {
        let z = self.encode(x, rng)?;
        Ok(self.network(Role::Generator)?.forward(&z)?)
    }
}

/// Standard normal draws, or uniform draws from the unit ball for AGE.
pub fn sample_prior(algorithm: Algorithm, n: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let mut data: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    if algorithm == Algorithm::Age {
        for row in data.chunks_mut(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = rng.gen::<f64>().powf(1.0 / dim as f64);
            row.iter_mut().for_each(|v| *v *= radius / norm);
        }
    }
    Tensor::matrix(n, dim, data).expect("positive prior shape")
}

fn encoder_noise(config: &TrainingConfig, rows: usize, rng: &mut impl Rng) -> Option<Tensor> {
    (config.encoder_noise_dim > 0).then(|| {
        let k = config.encoder_noise_dim;
        let data = (0..rows * k).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::matrix(rows, k, data).expect("positive noise shape")
    })
}

pub const METRICS_HEADER: &str = "iter,wall_ms,loss_total,loss_recon,loss_adv,loss_kl,disc_loss,code_disc_loss";

/// One row of the training log; absent components are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub wall_ms: Option<u128>,
    pub loss_total: Option<f64>,
    pub loss_recon: Option<f64>,
    pub loss_adv: Option<f64>,
    pub loss_kl: Option<f64>,
    pub disc_loss: Option<f64>,
    pub code_disc_loss: Option<f64>,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        [
            self.iter.to_string(),
            cell(self.wall_ms),
            cell(self.loss_total),
            cell(self.loss_recon),
            cell(self.loss_adv),
            cell(self.loss_kl),
            cell(self.disc_loss),
            cell(self.code_disc_loss),
        ]
        .join(",")
    }

    fn values(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        [
            ("loss_total", self.loss_total),
            ("loss_recon", self.loss_recon),
            ("loss_adv", self.loss_adv),
            ("loss_kl", self.loss_kl),
            ("disc_loss", self.disc_loss),
            ("code_disc_loss", self.code_disc_loss),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
    }
}

/// Header plus one line per row, LF-terminated.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Hooks into a training run.
pub trait TrainObserver {
    /// Called after every single-network (or joint) parameter update.
    fn after_update(&mut self, _iteration: usize, _updated: &[Role], _model: &TrainedModel) {}

    /// Called after each metric row, including the one at iteration 0.
    fn on_eval(&mut self, _model: &TrainedModel, _row: &MetricRow) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub metrics: Vec<MetricRow>,
}

const MONITOR_ROWS: usize = 256;

/// Fixed tensors on which every metric row is evaluated.
struct Monitor {
    x: Tensor,
    z: Tensor,
    noise: Option<Tensor>,
    eps: Tensor,
    mix: Vec<f64>,
}

struct Batch {
    x: Tensor,
    z: Tensor,
    noise: Option<Tensor>,
}

/// Networks of a model placed on one tape; only the targets are trainable.
struct Bound {
    nets: Vec<BoundNetwork>,
}

impl Bound {
    fn new(tape: &mut Tape, model: &TrainedModel, targets: &[Role]) -> Self {
        Self {
            nets: model
                .networks
                .iter()
                .map(|n| n.bind(tape, targets.contains(&n.role())))
                .collect(),
        }
    }

    fn get(&self, role: Role) -> Result<&BoundNetwork, TrainError> {
        self.nets
            .iter()
            .find(|n| n.role() == role)
            .ok_or(TrainError::MissingNetwork(role))
    }
}

/// A training run in progress.
pub struct Trainer<'a> {
    config: TrainingConfig,
    dataset: &'a Dataset,
    model: TrainedModel,
    optim: Vec<AdamState>,
    rng: ChaCha8Rng,
    monitor: Monitor,
    started: Instant,
    metrics: Vec<MetricRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainingConfig, dataset: &'a Dataset) -> Result<Self, TrainError> {
        config.validate()?;
        let model = TrainedModel::initialize(config, dataset.kind)?;
        Self::resume(model, dataset)
    }

    /// Continues from existing parameters with fresh optimiser state.
    pub fn resume(model: TrainedModel, dataset: &'a Dataset) -> Result<Self, TrainError> {
        let config = model.config.clone();
        config.validate()?;
        if model.kind != dataset.kind {
            return Err(TrainError::DataMismatch(format!(
                "model expects {:?}, dataset is {:?}",
                model.kind, dataset.kind
            )));
        }
        let optim = model
            .networks
            .iter()
            .map(|n| {
                AdamState::new(
                    n,
                    config.learning_rate(n.role()),
                    config.beta1,
                    config.beta2,
                    config.adam_eps,
                )
            })
            .collect();
        let seed = config.seed_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut mrng = ChaCha8Rng::seed_from_u64(seed);
        mrng.set_stream(2);
        let rows = MONITOR_ROWS.min(dataset.valid.len()).max(2);
        let monitor = Monitor {
            x: dataset.sample_batch(SplitName::Valid, rows, &mut mrng)?,
            z: sample_prior(config.algorithm, rows, config.latent_dim, &mut mrng),
            noise: encoder_noise(&config, rows, &mut mrng),
            eps: sample_prior(Algorithm::Gan, rows, config.latent_dim, &mut mrng),
            mix: (0..rows).map(|_| mrng.gen::<f64>()).collect(),
        };
        Ok(Self {
            config,
            dataset,
            model,
            optim,
            rng,
            monitor,
            started: Instant::now(),
            metrics: Vec::new(),
        })
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn metrics(&self) -> &[MetricRow] {
        &self.metrics
    }

    fn batch(&mut self) -> Result<Batch, TrainError> {
        let b = self.config.batch_size;
        Ok(Batch {
            x: self.dataset.sample_batch(SplitName::Train, b, &mut self.rng)?,
            z: sample_prior(self.config.algorithm, b, self.config.latent_dim, &mut self.rng),
            noise: encoder_noise(&self.config, b, &mut self.rng),
        })
    }

    fn standard_normal(&mut self, rows: usize) -> Tensor {
        sample_prior(Algorithm::Gan, rows, self.config.latent_dim, &mut self.rng)
    }

    /// One parameter update of `targets` on the loss built by `loss`.
    fn update<F>(&mut self, targets: &[Role], obs: &mut dyn TrainObserver, loss: F) -> Result<(), TrainError>
    where
        F: FnOnce(&mut Tape, &Bound) -> Result<Var, TrainError>,
    {
        let iteration = self.model.iteration;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.model, targets);
        let l = loss(&mut tape, &bound).map_err(|e| match e.numeric_detail() {
            Some(detail) => TrainError::NonFinite {
                network: targets[0],
                iteration,
                detail,
                last_good: None,
            },
            None => e,
        })?;
        let value = tape.scalar(l);
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                network: targets[0],
                iteration,
                detail: format!("loss {value}"),
                last_good: None,
            });
        }
        tape.backward(l)?;
        for &role in targets {
            let grads = bound.get(role)?.grads(&tape);
            let i = self.model.position(role)?;
            self.optim[i].step(&mut self.model.networks[i], &grads, iteration)?;
        }
        obs.after_update(iteration, targets, &self.model);
        Ok(())
    }

    /// Runs one outer iteration of the configured schedule.
    pub fn iteration(&mut self, obs: &mut dyn TrainObserver) -> Result<(), TrainError> {
        self.model.iteration += 1;
        let shared = if self.config.fresh_batches { None } else { Some(self.batch()?) };
        let next = |t: &mut Self| -> Result<Batch, TrainError> {
            match &shared {
                Some(b) => Ok(Batch {
                    x: b.x.clone(),
                    z: b.z.clone(),
                    noise: b.noise.clone(),
                }),
                None => t.batch(),
            }
        };
        let c = self.config.clone();
        let project = c.algorithm == Algorithm::Age;
        match c.algorithm {
            Algorithm::AlphaGan => {
                for _ in 0..c.steps(Role::Encoder) {
                    let b = next(self)?;
                    self.update(&[Role::Encoder], obs, |t, n| {
                        let x = t.constant(b.x);
                        let noise = b.noise.map(|e| t.constant(e));
                        let z_hat = encoder_forward(t, n.get(Role::Encoder)?, x, noise, false)?;
                        let x_hat = n.get(Role::Generator)?.forward(t, z_hat)?;
                        let code = n.get(Role::CodeDiscriminator)?.forward(t, z_hat)?;
                        Ok(losses::alpha_gan_encoder_loss(t, x, x_hat, code, c.lambda())?.total)
                    })?;
                }
                for _ in 0..c.steps(Role::Generator) {
                    let b = next(self)?;
                    self.update(&[Role::Generator], obs, |t, n| {
                        let x = t.constant(b.x);
                        let noise = b.noise.map(|e| t.constant(e));
                        let z_hat = encoder_forward(t, n.get(Role::Encoder)?, x, noise, false)?;
                        let g = n.get(Role::Generator)?;
                        let x_hat = g.forward(t, z_hat)?;
                        let z = t.constant(b.z);
                        let x_gen = g.forward(t, z)?;
                        let d = n.get(Role::Discriminator)?;
                        let recon_logits = d.forward(t, x_hat)?;
                        let sample_logits = d.forward(t, x_gen)?;
                        Ok(losses::alpha_gan_generator_loss(t, x, x_hat, recon_logits, sample_logits, c.lambda())?.total)
                    })?;
                }
                for _ in 0..c.steps(Role::Discriminator) {
                    let b = next(self)?;
                    self.update(&[Role::Discriminator], obs, |t, n| {
                        let x = t.constant(b.x);
                        let noise = b.noise.map(|e| t.constant(e));
                        let z_hat = encoder_forward(t, n.get(Role::Encoder)?, x, noise, false)?;
                        let g = n.get(Role::Generator)?;
                        let x_hat = g.forward(t, z_hat)?;
                        let z = t.constant(b.z);
                        let x_gen = g.forward(t, z)?;
                        let d = n.get(Role::Discriminator)?;
                        let (real, recon, sample) = (d.forward(t, x)?, d.forward(t, x_hat)?, d.forward(t, x_gen)?);
                        Ok(losses::alpha_gan_discriminator_loss(t, real, recon, sample, c.real_weight)?.total)
                    })?;
                }
                for _ in 0..c.steps(Role::CodeDiscriminator) {
                    let b = next(self)?;
                    self.update(&[Role::CodeDiscriminator], obs, |t, n| {
                        let x = t.constant(b.x);
                        let noise = b.noise.map(|e| t.constant(e));
                        let z_hat = encoder_forward(t, n.get(Role::Encoder)?, x, noise, false)?;
                        let z = t.constant(b.z);
                        let cd = n.get(Role::CodeDiscriminator)?;
                        let (prior, posterior) = (cd.forward(t, z)?, cd.forward(t, z_hat)?);
                        Ok(losses::code_discriminator_loss(t, prior, posterior)?.total)
                    })?;
                }
            }
            Algorithm::Gan => {
                for _ in 0..c.steps(Role::Discriminator) {
                    let b = next(self)?;
                    self.update(&[Role::Discriminator], obs, |t, n| {
                        let x = t.constant(b.x);
                        let z = t.constant(b.z);
                        let x_gen = n.get(Role::Generator)?.forward(t, z)?;
                        let d = n.get(Role::Discriminator)?;
                        let (real, fake) = (d.forward(t, x)?, d.forward(t, x_gen)?);
                        Ok(losses::gan_discriminator_loss(t, real, fake)?.total)
                    })?;
                }
                for _ in 0..c.steps(Role::Generator) {
                    let b = next(self)?;
                    self.update(&[Role::Generator], obs, |t, n| {
                        let z = t.constant(b.z);
                        let x_gen = n.get(Role::Generator)?.forward(t, z)?;
                        let fake = n.get(Role::Discriminator)?.forward(t, x_gen)?;
                        Ok(losses::gan_generator_loss(t, fake, c.generator_loss)?.total)
                    })?;
                }
            }
            Algorithm::WganGp => {
                for _ in 0..c.steps(Role::Critic) {
                    let b = next(self)?;
                    let mix: Vec<f64> = (0..b.x.rows()).map(|_| self.rng.gen::<f64>()).collect();
                    self.update(&[Role::Critic], obs, |t, n| {
                        let x = t.constant(b.x);
                        let z = t.constant(b.z);
                        let x_gen = n.get(Role::Generator)?.forward(t, z)?;
                        let critic = n.get(Role::Critic)?;
                        let (critic_loss, _) = losses::wgan_gp_losses(t, critic, x, x_gen, &mix, c.gp_coeff)?;
                        Ok(critic_loss.total)
                    })?;
                }
                for _ in 0..c.steps(Role::Generator) {
                    let b = next(self)?;
                    self.update(&[Role::Generator], obs, |t, n| {
                        let z = t.constant(b.z);
                        let x_gen = n.get(Role::Generator)?.forward(t, z)?;
                        let f = n.get(Role::Critic)?.forward(t, x_gen)?;
                        let m = t.mean(f, None)?;
                        Ok(t.neg(m))
                    })?;
                }
            }
            Algorithm::Age => {
                let weights = AgeWeights {
                    data_reconstruction: c.age_data_weight,
                    code_reconstruction: c.age_code_weight,
                    kl: c.empirical_kl(),
                };
                for _ in 0..c.steps(Role::Encoder) {
                    let b = next(self)?;
                    self.update(&[Role::Encoder], obs, |t, n| {
                        let x = t.constant(b.x);
                        let e = n.get(Role::Encoder)?;
                        let g = n.get(Role::Generator)?;
                        let noise = b.noise.clone().map(|v| t.constant(v));
                        let z_hat = encoder_forward(t, e, x, noise, project)?;
                        let x_hat = g.forward(t, z_hat)?;
                        let z = t.constant(b.z);
                        let x_gen = g.forward(t, z)?;
                        let noise = b.noise.map(|v| t.constant(v));
                        let z_gen = encoder_forward(t, e, x_gen, noise, project)?;
                        Ok(losses::age_encoder_loss(t, x, x_hat, z_hat, z_gen, weights)?.total)
                    })?;
                }
                for _ in 0..c.steps(Role::Generator) {
                    let b = next(self)?;
                    self.update(&[Role::Generator], obs, |t, n| {
                        let z = t.constant(b.z);
                        let x_gen = n.get(Role::Generator)?.forward(t, z)?;
                        let noise = b.noise.map(|v| t.constant(v));
                        let z_gen = encoder_forward(t, n.get(Role::Encoder)?, x_gen, noise, project)?;
                        Ok(losses::age_generator_loss(t, z, z_gen, weights)?.total)
                    })?;
                }
            }
            Algorithm::Vae => {
                for _ in 0..c.steps(Role::Encoder).max(c.steps(Role::Generator)) {
                    let b = next(self)?;
                    let eps = self.standard_normal(b.x.rows());
                    self.update(&[Role::Encoder, Role::Generator], obs, |t, n| {
                        let x = t.constant(b.x);
                        let eps = t.constant(eps);
                        Ok(vae_terms(t, n, x, eps, c.latent_dim, c.lambda())?.total)
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Metric row for the current parameters on the fixed monitor batch.
    pub fn evaluate(&self) -> Result<MetricRow, TrainError> {
        let c = &self.config;
        let m = &self.monitor;
        let mut t = Tape::new();
        let n = Bound::new(&mut t, &self.model, &[]);
        let x = t.constant(m.x.clone());
        let z = t.constant(m.z.clone());
        let noise = m.noise.clone().map(|e| t.constant(e));
        let project = c.algorithm == Algorithm::Age;
        let v = |t: &Tape, l: Var| Some(t.scalar(l));
        let mut row = MetricRow {
            iter: self.model.iteration,
            wall_ms: c.record_wall_time.then(|| self.started.elapsed().as_millis()),
            ..MetricRow::default()
        };
        match c.algorithm {
            Algorithm::AlphaGan => {
                let z_hat = encoder_forward(&mut t, n.get(Role::Encoder)?, x, noise, false)?;
                let g = n.get(Role::Generator)?;
                let x_hat = g.forward(&mut t, z_hat)?;
                let x_gen = g.forward(&mut t, z)?;
                let d = n.get(Role::Discriminator)?;
                let (real, recon, sample) = (d.forward(&mut t, x)?, d.forward(&mut t, x_hat)?, d.forward(&mut t, x_gen)?);
                let cd = n.get(Role::CodeDiscriminator)?;
                let (prior, posterior) = (cd.forward(&mut t, z)?, cd.forward(&mut t, z_hat)?);
                let gen = losses::alpha_gan_generator_loss(&mut t, x, x_hat, recon, sample, c.lambda())?;
                let kl = losses::kl_via_code_discriminator(&mut t, posterior)?;
                let recon_v = component(&t, &gen, losses::Component::Reconstruction);
                let adv = gen.sum_of(&t, &[losses::Component::Adversarial, losses::Component::AdversarialSamples]);
                row.loss_recon = recon_v;
                row.loss_adv = adv;
                row.loss_kl = v(&t, kl);
                row.loss_total = Some(gen.value(&t) + t.scalar(kl));
                let disc = losses::alpha_gan_discriminator_loss(&mut t, real, recon, sample, c.real_weight)?;
                row.disc_loss = Some(disc.value(&t));
                let code = losses::code_discriminator_loss(&mut t, prior, posterior)?;
                row.code_disc_loss = Some(code.value(&t));
            }
            Algorithm::Gan => {
                let x_gen = n.get(Role::Generator)?.forward(&mut t, z)?;
                let d = n.get(Role::Discriminator)?;
                let (real, fake) = (d.forward(&mut t, x)?, d.forward(&mut t, x_gen)?);
                let gen = losses::gan_generator_loss(&mut t, fake, c.generator_loss)?;
                row.loss_total = Some(gen.value(&t));
                row.loss_adv = row.loss_total;
                row.disc_loss = Some(losses::gan_discriminator_loss(&mut t, real, fake)?.value(&t));
            }
            Algorithm::WganGp => {
                let x_gen = n.get(Role::Generator)?.forward(&mut t, z)?;
                let critic = n.get(Role::Critic)?;
                let (cl, gl) = losses::wgan_gp_losses(&mut t, critic, x, x_gen, &m.mix, c.gp_coeff)?;
                row.loss_total = Some(gl.value(&t));
                row.loss_adv = row.loss_total;
                row.disc_loss = Some(cl.value(&t));
            }
            Algorithm::Age => {
                let weights = AgeWeights {
                    data_reconstruction: c.age_data_weight,
                    code_reconstruction: c.age_code_weight,
                    kl: c.empirical_kl(),
                };
                let e = n.get(Role::Encoder)?;
                let g = n.get(Role::Generator)?;
                let z_hat = encoder_forward(&mut t, e, x, noise, project)?;
                let x_hat = g.forward(&mut t, z_hat)?;
                let x_gen = g.forward(&mut t, z)?;
                let noise = m.noise.clone().map(|e| t.constant(e));
                let z_gen = encoder_forward(&mut t, e, x_gen, noise, project)?;
                let (enc, gen) = losses::age_losses(&mut t, x, x_hat, z_hat, z, z_gen, weights)?;
                row.loss_recon = component(&t, &enc, losses::Component::Reconstruction);
                row.loss_kl = component(&t, &enc, losses::Component::Kl);
                row.loss_adv = component(&t, &gen, losses::Component::CodeReconstruction);
                row.loss_total = Some(enc.value(&t) + gen.value(&t));
            }
            Algorithm::Vae => {
                let eps = t.constant(m.eps.clone());
                let terms = vae_terms(&mut t, &n, x, eps, c.latent_dim, c.lambda())?;
                row.loss_total = Some(terms.value(&t));
                row.loss_recon = component(&t, &terms, losses::Component::Reconstruction);
                row.loss_kl = component(&t, &terms, losses::Component::Kl);
            }
        }
        if let Some((key, value)) = row.values().find(|(_, v)| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                network: c.algorithm.roles()[0],
                iteration: self.model.iteration,
                detail: format!("{key} {value}"),
                last_good: None,
            });
        }
        Ok(row)
    }

    fn record(&mut self, obs: &mut dyn TrainObserver) -> Result<(), TrainError> {
        let row = self.evaluate()?;
        obs.on_eval(&self.model, &row)?;
        self.metrics.push(row);
        Ok(())
    }

    /// Trains for `max_iter` iterations, logging a metric row at iteration 0
    /// and every `eval_every` iterations.
    pub fn run(mut self, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
        let first = self.config.algorithm.roles()[0];
        let attach = |e: TrainError, good: &TrainedModel| match e {
            e if e.numeric_detail().is_some() => TrainError::NonFinite {
                network: first,
                iteration: good.iteration + 1,
                detail: e.numeric_detail().unwrap_or_default(),
                last_good: Some(Box::new(good.clone())),
            },
            TrainError::NonFinite {
                network,
                iteration,
                detail,
                ..
            } => TrainError::NonFinite {
                network,
                iteration,
                detail,
                last_good: Some(Box::new(good.clone())),
            },
            other => other,
        };
        let mut last_good = self.model.clone();
        self.record(obs).map_err(|e| attach(e, &last_good))?;
        while self.model.iteration < self.config.max_iter {
            last_good.clone_from(&self.model);
            self.iteration(obs).map_err(|e| attach(e, &last_good))?;
            if self.model.iteration % self.config.eval_every == 0 {
                self.record(obs).map_err(|e| attach(e, &last_good))?;
            }
        }
        Ok(TrainOutcome {
            model: self.model,
            metrics: self.metrics,
        })
    }
}

fn component(t: &Tape, terms: &LossTerms, which: losses::Component) -> Option<f64> {
    terms.component(t, which)
}

fn vae_terms(t: &mut Tape, n: &Bound, x: Var, eps: Var, latent: usize, lambda: f64) -> Result<LossTerms, TrainError> {
    let stats = n.get(Role::Encoder)?.forward(t, x)?;
    let mu = t.slice_cols(stats, 0, latent)?;
    let log_sigma = t.slice_cols(stats, latent, 2 * latent)?;
    let z = losses::reparameterize(t, mu, log_sigma, eps)?;
    let x_hat = n.get(Role::Generator)?.forward(t, z)?;
    Ok(losses::vae_loss(t, x, mu, log_sigma, x_hat, lambda)?)
}

/// Negative ELBO of a VAE model on fixed data and reparameterisation noise.
pub fn vae_negative_elbo(model: &TrainedModel, x: &Tensor, eps: &Tensor) -> Result<f64, TrainError> {
    let mut t = Tape::new();
    let n = Bound::new(&mut t, model, &[]);
    let (xv, ev) = (t.constant(x.clone()), t.constant(eps.clone()));
    let terms = vae_terms(&mut t, &n, xv, ev, model.config.latent_dim, model.config.lambda())?;
    Ok(terms.value(&t))
}

pub fn train(
    config: &TrainingConfig,
    dataset: &Dataset,
    obs: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    Trainer::new(config, dataset)?.run(obs)
}

fn train_as(
    expected: Algorithm,
    config: &TrainingConfig,
    dataset: &Dataset,
    obs: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    if config.algorithm != expected {
        return Err(TrainError::WrongAlgorithm {
            expected,
            got: config.algorithm,
        });
    }
    train(config, dataset, obs)
}

pub fn train_alpha_gan(config: &TrainingConfig, dataset: &Dataset, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
    train_as(Algorithm::AlphaGan, config, dataset, obs)
}

pub fn train_gan(config: &TrainingConfig, dataset: &Dataset, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
    train_as(Algorithm::Gan, config, dataset, obs)
}

pub fn train_wgan_gp(config: &TrainingConfig, dataset: &Dataset, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
    train_as(Algorithm::WganGp, config, dataset, obs)
}

pub fn train_age(config: &TrainingConfig, dataset: &Dataset, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
    train_as(Algorithm::Age, config, dataset, obs)
}

pub fn train_vae(config: &TrainingConfig, dataset: &Dataset, obs: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
    train_as(Algorithm::Vae, config, dataset, obs)
}
