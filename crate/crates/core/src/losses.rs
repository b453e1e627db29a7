//! Loss functions and estimators as tape expressions.
//!
//! Every cross-entropy term is written with `softplus` on logits:
//! `-log D = softplus(-l)` and `-log(1 - D) = softplus(l)` where `D = sigmoid(l)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{random_matrix, GradCheckCase, Tape, Tensor, TensorError, Var, EXP_LIMIT};
use crate::networks::{
    Activation, BoundNetwork, Init, MlpSpec, NetworkError, NetworkParams, OutputActivation, Role,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{what} must be positive, got {value}")]
    NonPositiveWeight { what: &'static str, value: f64 },
    #[error("empirical KL needs at least 2 codes, got {0}")]
    BatchTooSmall(usize),
    #[error("latent dimension {0} has zero sample variance")]
    DegenerateBatch(usize),
    #[error("cosine distance of a zero-norm row ({0})")]
    ZeroNorm(usize),
    #[error("density ratio overflows for logit {0}")]
    RatioOverflow(f64),
    #[error("unknown generator loss variant `{0}`")]
    UnknownVariant(String),
    #[error("{0} interpolation weights for {1} rows")]
    MixLength(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Named parts of a loss. `total` is the plain sum of the components; any
/// weights are already folded into the component values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Reconstruction,
    /// Reverse-KL or GAN term from the data discriminator on reconstructions (or fakes).
    Adversarial,
    /// The same term on samples from the prior.
    AdversarialSamples,
    Kl,
    SampleKl,
    CodeReconstruction,
    Real,
    Fake,
    Samples,
    Wasserstein,
    GradientPenalty,
}

#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub components: Vec<(Component, Var)>,
}

impl LossTerms {
    fn sum(tape: &mut Tape, components: Vec<(Component, Var)>) -> Result<Self, LossError> {
        let mut total = components[0].1;
        for &(_, v) in &components[1..] {
            total = tape.add(total, v)?;
        }
        Ok(Self { total, components })
    }

    pub fn value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.total)
    }

    pub fn component(&self, tape: &Tape, which: Component) -> Option<f64> {
        self.components
            .iter()
            .find(|(c, _)| *c == which)
            .map(|&(_, v)| tape.scalar(v))
    }

    /// Sum of the components matching any of `which`.
    pub fn sum_of(&self, tape: &Tape, which: &[Component]) -> Option<f64> {
        let parts: Vec<f64> = self
            .components
            .iter()
            .filter(|(c, _)| which.contains(c))
            .map(|&(_, v)| tape.scalar(v))
            .collect();
        (!parts.is_empty()).then(|| parts.iter().sum())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// `mean log(1 - D)`.
    Saturating,
    /// `mean -log D`.
    Alternative,
    /// `mean [-log D + log(1 - D)]`, i.e. `mean(-logit)`.
    ReverseKl,
}

impl FromStr for GeneratorLoss {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "saturating" => Ok(Self::Saturating),
            "alternative" => Ok(Self::Alternative),
            "reverse_kl" => Ok(Self::ReverseKl),
            other => Err(LossError::UnknownVariant(other.to_string())),
        }
    }
}

impl fmt::Display for GeneratorLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Saturating => "saturating",
            Self::Alternative => "alternative",
            Self::ReverseKl => "reverse_kl",
        })
    }
}

/// `log r(x) = log(D / (1 - D))`, which is the logit itself.
pub fn log_density_ratio(logits: &Tensor) -> Tensor {
    logits.clone()
}

/// `r(x) = D / (1 - D) = exp(logit)`.
pub fn density_ratio(logits: &Tensor) -> Result<Tensor, LossError> {
    if let Some(&bad) = logits.data().iter().find(|v| **v > EXP_LIMIT) {
        return Err(LossError::RatioOverflow(bad));
    }
    Ok(logits.map(f64::exp))
}

fn mean_softplus(tape: &mut Tape, logits: Var, negate: bool) -> Result<Var, LossError> {
    let x = if negate { tape.neg(logits) } else { logits };
    let sp = tape.softplus(x);
    Ok(tape.mean(sp, None)?)
}

fn mean_neg(tape: &mut Tape, logits: Var) -> Result<Var, LossError> {
    let m = tape.mean(logits, None)?;
    Ok(tape.neg(m))
}

/// `mean[-log D(real)] + mean[-log(1 - D(fake))]`.
pub fn gan_discriminator_loss(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<LossTerms, LossError> {
    let real = mean_softplus(tape, real_logits, true)?;
    let fake = mean_softplus(tape, fake_logits, false)?;
    LossTerms::sum(tape, vec![(Component::Real, real), (Component::Fake, fake)])
}

pub fn gan_generator_loss(
    tape: &mut Tape,
    fake_logits: Var,
    variant: GeneratorLoss,
) -> Result<LossTerms, LossError> {
    let adv = match variant {
        GeneratorLoss::Saturating => {
            let v = mean_softplus(tape, fake_logits, false)?;
            tape.neg(v)
        }
        GeneratorLoss::Alternative => mean_softplus(tape, fake_logits, true)?,
        GeneratorLoss::ReverseKl => mean_neg(tape, fake_logits)?,
    };
    LossTerms::sum(tape, vec![(Component::Adversarial, adv)])
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<(), LossError> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() != tb.shape() {
        return Err(LossError::ShapeMismatch {
            op,
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        });
    }
    Ok(())
}

/// `λ · mean_i ‖x_i − x̂_i‖₁`.
pub fn l1_reconstruction(tape: &mut Tape, x: Var, x_hat: Var, lambda: f64) -> Result<Var, LossError> {
    same_shape(tape, "l1_reconstruction", x, x_hat)?;
    if !(lambda > 0.0) {
        return Err(LossError::NonPositiveWeight {
            what: "reconstruction weight",
            value: lambda,
        });
    }
    let rows = tape.value(x).rows() as f64;
    let diff = tape.sub(x, x_hat)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs, None)?;
    Ok(tape.scale(total, lambda / rows))
}

/// KL estimate from code-discriminator logits on encoder outputs, `mean(-logit)`.
///
/// With `C = p(prior | z)`, `-KL ≈ E[log(C / (1 - C))] = E[logit]`.
pub fn kl_via_code_discriminator(tape: &mut Tape, code_logits: Var) -> Result<Var, LossError> {
    mean_neg(tape, code_logits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalKl {
    /// Use `-n/2` (the Gaussian closed form) instead of the `+n/2` constant.
    pub corrected: bool,
    /// Divide the estimate by the latent size.
    pub per_dim: bool,
}

impl Default for EmpiricalKl {
    fn default() -> Self {
        Self {
            corrected: true,
            per_dim: false,
        }
    }
}

/// Batch-moment estimate of `KL(q ‖ N(0, I))` from per-dimension sample
/// means `m_i` and standard deviations `s_i`:
/// `Σ_i [(s_i² + m_i²)/2 − log s_i] ∓ n/2`.
///
/// Variances use the `1/B` (population) normaliser.
pub fn empirical_kl(tape: &mut Tape, codes: Var, opts: EmpiricalKl) -> Result<Var, LossError> {
    let t = tape.value(codes);
    let (rows, n) = (t.rows(), t.cols());
    if t.rank() != 2 || rows < 2 {
        return Err(LossError::BatchTooSmall(rows));
    }
    for j in 0..n {
        let first = t.get(0, j);
        if (1..rows).all(|i| t.get(i, j) == first) {
            return Err(LossError::DegenerateBatch(j));
        }
    }
    let mean = tape.mean(codes, Some(0))?;
    let neg_mean = tape.neg(mean);
    let centered = tape.add_bias(codes, neg_mean)?;
    let sq = tape.square(centered);
    let var = tape.mean(sq, Some(0))?;
    let mean_sq = tape.square(mean);
    let moments = tape.add(var, mean_sq)?;
    let half_moments = tape.scale(moments, 0.5);
    let log_var = tape.log(var)?;
    let log_s = tape.scale(log_var, 0.5);
    let per_dim = tape.sub(half_moments, log_s)?;
    let sum = tape.sum(per_dim, None)?;
    let half_n = n as f64 / 2.0;
    let kl = tape.add_scalar(sum, if opts.corrected { -half_n } else { half_n });
    Ok(if opts.per_dim {
        tape.scale(kl, 1.0 / n as f64)
    } else {
        kl
    })
}

/// Encoder objective: `λ‖x − x̂‖₁ + R_C(ẑ)` with `R_C(z) = −logit_C(z)`.
pub fn alpha_gan_encoder_loss(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    code_logits: Var,
    lambda: f64,
) -> Result<LossTerms, LossError> {
    let recon = l1_reconstruction(tape, x, x_hat, lambda)?;
    let kl = kl_via_code_discriminator(tape, code_logits)?;
    LossTerms::sum(tape, vec![(Component::Reconstruction, recon), (Component::Kl, kl)])
}

/// Generator objective: `λ‖x − x̂‖₁ + R_D(x̂) + R_D(G(z))` with `R_D(x) = −logit_D(x)`.
pub fn alpha_gan_generator_loss(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    recon_logits: Var,
    sample_logits: Var,
    lambda: f64,
) -> Result<LossTerms, LossError> {
    let recon = l1_reconstruction(tape, x, x_hat, lambda)?;
    let adv_recon = mean_neg(tape, recon_logits)?;
    let adv_samples = mean_neg(tape, sample_logits)?;
    LossTerms::sum(
        tape,
        vec![
            (Component::Reconstruction, recon),
            (Component::Adversarial, adv_recon),
            (Component::AdversarialSamples, adv_samples),
        ],
    )
}

/// Discriminator objective: data is real, reconstructions and samples are fake.
///
/// `real_weight · mean[−log D(x)] + mean[−log(1 − D(x̂))] + mean[−log(1 − D(G(z)))]`.
pub fn alpha_gan_discriminator_loss(
    tape: &mut Tape,
    real_logits: Var,
    recon_logits: Var,
    sample_logits: Var,
    real_weight: f64,
) -> Result<LossTerms, LossError> {
    let real = mean_softplus(tape, real_logits, true)?;
    let real = tape.scale(real, real_weight);
    let fake = mean_softplus(tape, recon_logits, false)?;
    let samples = mean_softplus(tape, sample_logits, false)?;
    LossTerms::sum(
        tape,
        vec![
            (Component::Real, real),
            (Component::Fake, fake),
            (Component::Samples, samples),
        ],
    )
}

/// Prior draws are real, encoder codes are fake: `mean[−log C(z)] + mean[−log(1 − C(ẑ))]`.
pub fn code_discriminator_loss(
    tape: &mut Tape,
    prior_logits: Var,
    posterior_logits: Var,
) -> Result<LossTerms, LossError> {
    let real = mean_softplus(tape, prior_logits, true)?;
    let fake = mean_softplus(tape, posterior_logits, false)?;
    LossTerms::sum(tape, vec![(Component::Real, real), (Component::Fake, fake)])
}

/// Row-wise `u·real + (1 − u)·fake`.
pub fn interpolate(real: &Tensor, fake: &Tensor, mix: &[f64]) -> Result<Tensor, LossError> {
    if real.shape() != fake.shape() {
        return Err(LossError::ShapeMismatch {
            op: "interpolate",
            left: real.shape().to_vec(),
            right: fake.shape().to_vec(),
        });
    }
    if mix.len() != real.rows() {
        return Err(LossError::MixLength(mix.len(), real.rows()));
    }
    let c = real.cols();
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let u = mix[i / c];
            u * r + (1.0 - u) * f
        })
        .collect();
    Ok(Tensor::new(real.shape().to_vec(), data)?)
}

/// `gp_coeff · mean_i (‖∇ₓ f(x_i)‖₂ − 1)²` at the given points.
///
/// The input gradient is built on the tape, so the penalty differentiates
/// with respect to the critic parameters.
pub fn gradient_penalty(
    tape: &mut Tape,
    critic: &BoundNetwork,
    points: Var,
    gp_coeff: f64,
) -> Result<Var, LossError> {
    let (_, grad) = critic.forward_with_input_gradient(tape, points)?;
    let sq = tape.square(grad);
    let norm_sq = tape.sum(sq, Some(1))?;
    let norm = tape.sqrt(norm_sq)?;
    let deficit = tape.add_scalar(norm, -1.0);
    let deficit_sq = tape.square(deficit);
    let mean = tape.mean(deficit_sq, None)?;
    Ok(tape.scale(mean, gp_coeff))
}

/// Critic and generator losses of WGAN-GP.
///
/// Critic: `mean f(fake) − mean f(real) + penalty` at `u·real + (1 − u)·fake`.
/// Generator: `−mean f(fake)`.
pub fn wgan_gp_losses(
    tape: &mut Tape,
    critic: &BoundNetwork,
    real: Var,
    fake: Var,
    mix: &[f64],
    gp_coeff: f64,
) -> Result<(LossTerms, LossTerms), LossError> {
    same_shape(tape, "wgan_gp_losses", real, fake)?;
    if !(gp_coeff >= 0.0) {
        return Err(LossError::NonPositiveWeight {
            what: "gradient penalty coefficient",
            value: gp_coeff,
        });
    }
    let f_real = critic.forward(tape, real)?;
    let f_fake = critic.forward(tape, fake)?;
    let mean_real = tape.mean(f_real, None)?;
    let mean_fake = tape.mean(f_fake, None)?;
    let w = tape.sub(mean_fake, mean_real)?;
    let points = interpolate(tape.value(real), tape.value(fake), mix)?;
    let points = tape.constant(points);
    let gp = gradient_penalty(tape, critic, points, gp_coeff)?;
    let critic_loss = LossTerms::sum(tape, vec![(Component::Wasserstein, w), (Component::GradientPenalty, gp)])?;
    let gen = tape.neg(mean_fake);
    let generator_loss = LossTerms::sum(tape, vec![(Component::Adversarial, gen)])?;
    Ok((critic_loss, generator_loss))
}

/// `z = μ + exp(log σ) ⊙ ε`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_sigma: Var, eps: Var) -> Result<Var, LossError> {
    let sigma = tape.exp(log_sigma)?;
    let scaled = tape.mul(sigma, eps)?;
    Ok(tape.add(mu, scaled)?)
}

/// Analytic `KL(N(μ, σ²) ‖ N(0, I))`, summed over dimensions and averaged over rows.
pub fn gaussian_kl(tape: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var, LossError> {
    same_shape(tape, "gaussian_kl", mu, log_sigma)?;
    let rows = tape.value(mu).rows() as f64;
    let two_log_sigma = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_log_sigma)?;
    let mu_sq = tape.square(mu);
    let moments = tape.add(var, mu_sq)?;
    let half = tape.scale(moments, 0.5);
    let t = tape.sub(half, log_sigma)?;
    let t = tape.add_scalar(t, -0.5);
    let total = tape.sum(t, None)?;
    Ok(tape.scale(total, 1.0 / rows))
}

/// Negative ELBO up to the Laplace normaliser: `λ‖x − x̂‖₁ + KL(N(μ, σ²) ‖ N(0, I))`.
pub fn vae_loss(
    tape: &mut Tape,
    x: Var,
    mu: Var,
    log_sigma: Var,
    x_hat: Var,
    lambda: f64,
) -> Result<LossTerms, LossError> {
    let recon = l1_reconstruction(tape, x, x_hat, lambda)?;
    let kl = gaussian_kl(tape, mu, log_sigma)?;
    LossTerms::sum(tape, vec![(Component::Reconstruction, recon), (Component::Kl, kl)])
}

/// `mean_i [1 − a_i·b_i / (‖a_i‖ ‖b_i‖)]`; zero-norm rows are an error.
pub fn cosine_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var, LossError> {
    same_shape(tape, "cosine_distance", a, b)?;
    for v in [a, b] {
        let t = tape.value(v);
        if let Some(i) = (0..t.rows()).find(|&i| t.row(i).iter().all(|&x| x == 0.0)) {
            return Err(LossError::ZeroNorm(i));
        }
    }
    let ab = tape.mul(a, b)?;
    let dot = tape.sum(ab, Some(1))?;
    let a2 = tape.square(a);
    let a2 = tape.sum(a2, Some(1))?;
    let b2 = tape.square(b);
    let b2 = tape.sum(b2, Some(1))?;
    let norms = tape.mul(a2, b2)?;
    let norms = tape.sqrt(norms)?;
    let cos = tape.div(dot, norms)?;
    let mean = tape.mean(cos, None)?;
    let neg = tape.neg(mean);
    Ok(tape.add_scalar(neg, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgeWeights {
    pub data_reconstruction: f64,
    pub code_reconstruction: f64,
    pub kl: EmpiricalKl,
}

/// AGE encoder objective:
/// `w_data‖x − x̂‖₁ + KL(ẑ(x)) − KL(ẑ(G(z)))`.
pub fn age_encoder_loss(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    data_codes: Var,
    sample_codes: Var,
    weights: AgeWeights,
) -> Result<LossTerms, LossError> {
    let recon = l1_reconstruction(tape, x, x_hat, weights.data_reconstruction)?;
    let kl_data = empirical_kl(tape, data_codes, weights.kl)?;
    let kl_samples = empirical_kl(tape, sample_codes, weights.kl)?;
    let neg_samples = tape.neg(kl_samples);
    LossTerms::sum(
        tape,
        vec![
            (Component::Reconstruction, recon),
            (Component::Kl, kl_data),
            (Component::SampleKl, neg_samples),
        ],
    )
}

/// AGE generator objective:
/// `w_code · cos_dist(z, ẑ(G(z))) + KL(ẑ(G(z)))`.
pub fn age_generator_loss(
    tape: &mut Tape,
    z_prior: Var,
    sample_codes: Var,
    weights: AgeWeights,
) -> Result<LossTerms, LossError> {
    let cos = cosine_distance(tape, z_prior, sample_codes)?;
    let cos = tape.scale(cos, weights.code_reconstruction);
    let kl = empirical_kl(tape, sample_codes, weights.kl)?;
    LossTerms::sum(
        tape,
        vec![(Component::CodeReconstruction, cos), (Component::SampleKl, kl)],
    )
}

/// Both AGE objectives for one set of tensors.
pub fn age_losses(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    data_codes: Var,
    z_prior: Var,
    sample_codes: Var,
    weights: AgeWeights,
) -> Result<(LossTerms, LossTerms), LossError> {
    let enc = age_encoder_loss(tape, x, x_hat, data_codes, sample_codes, weights)?;
    let gen = age_generator_loss(tape, z_prior, sample_codes, weights)?;
    Ok((enc, gen))
}

/// Gradient-check cases for the composite objectives, each differentiated
/// with respect to one network's parameters (or the codes, for the
/// moment-based estimators) with everything else held fixed.
pub fn composite_suite() -> Vec<GradCheckCase> {
    const TOL: f64 = 1e-4;
    const PENALTY_TOL: f64 = 1e-3;
    const BATCH: usize = 4;
    const X: usize = 2;
    const Z: usize = 2;
    const H: usize = 5;

    let spec = |sizes: Vec<usize>, out| MlpSpec::new(sizes, Activation::Tanh, out);
    let gen_spec = spec(vec![Z, H, X], OutputActivation::Identity);
    let enc_spec = spec(vec![X, H, Z], OutputActivation::Identity);
    let disc_spec = spec(vec![X, H, 1], OutputActivation::Identity);
    let code_spec = spec(vec![Z, H, 1], OutputActivation::Identity);
    let critic_spec = MlpSpec::new(vec![X, H, H, 1], Activation::LeakyRelu, OutputActivation::Identity);

    let flat_point = |spec: &MlpSpec| {
        let p = spec.parameter_count();
        move |rng: &mut ChaCha8Rng| random_matrix(1, p, || rng.gen_range(-1.0..1.0))
    };
    let codes_point = |rng: &mut ChaCha8Rng| random_matrix(BATCH, Z, || rng.gen_range(-2.0..2.0));

    // Fixed context shared by every case: data, prior draws and frozen networks.
    let fixed = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| random_matrix(r, c, || rng.gen_range(-1.0..1.0));
        let x = draw(BATCH, X);
        let z = draw(BATCH, Z);
        let eps = draw(BATCH, Z);
        (x, z, eps)
    };
    let frozen = |spec: &MlpSpec, role, seed| {
        NetworkParams::init(role, spec.clone().with_init(Init::Uniform { limit: 0.8 }), seed)
            .expect("valid spec")
    };
    let g0 = frozen(&gen_spec, Role::Generator, 1);
    let e0 = frozen(&enc_spec, Role::Encoder, 2);
    let d0 = frozen(&disc_spec, Role::Discriminator, 3);
    let c0 = frozen(&code_spec, Role::CodeDiscriminator, 4);
    let (x0, z0, eps0) = fixed(5);
    let lambda = 3.0;

    let mut cases = Vec::new();

    {
        let (g0, d0, c0, x0, spec) = (g0.clone(), d0.clone(), c0.clone(), x0.clone(), enc_spec.clone());
        cases.push(GradCheckCase::new(
            "alpha_gan_encoder",
            TOL,
            flat_point(&enc_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let enc = BoundNetwork::from_flat(t, Role::Encoder, spec.clone(), p)?;
                let (g, _d, c) = (g0.bind(t, false), d0.bind(t, false), c0.bind(t, false));
                let x = t.constant(x0.clone());
                let z_hat = enc.forward(t, x)?;
                let x_hat = g.forward(t, z_hat)?;
                let code = c.forward(t, z_hat)?;
                Ok(alpha_gan_encoder_loss(t, x, x_hat, code, lambda)?.total)
            },
        ));
    }
    {
        let (e0, d0, x0, z0, spec) = (e0.clone(), d0.clone(), x0.clone(), z0.clone(), gen_spec.clone());
        cases.push(GradCheckCase::new(
            "alpha_gan_generator",
            TOL,
            flat_point(&gen_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let gen = BoundNetwork::from_flat(t, Role::Generator, spec.clone(), p)?;
                let (e, d) = (e0.bind(t, false), d0.bind(t, false));
                let x = t.constant(x0.clone());
                let z = t.constant(z0.clone());
                let z_hat = e.forward(t, x)?;
                let x_hat = gen.forward(t, z_hat)?;
                let x_gen = gen.forward(t, z)?;
                let lr = d.forward(t, x_hat)?;
                let ls = d.forward(t, x_gen)?;
                Ok(alpha_gan_generator_loss(t, x, x_hat, lr, ls, lambda)?.total)
            },
        ));
    }
    for real_weight in [1.0, 2.0] {
        let (g0, e0, x0, z0, spec) = (g0.clone(), e0.clone(), x0.clone(), z0.clone(), disc_spec.clone());
        cases.push(GradCheckCase::new(
            format!("alpha_gan_discriminator_w{real_weight}"),
            TOL,
            flat_point(&disc_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let d = BoundNetwork::from_flat(t, Role::Discriminator, spec.clone(), p)?;
                let x = t.constant(x0.clone());
                let x_hat = t.constant(g0.forward(&e0.forward(&x0)?)?);
                let x_gen = t.constant(g0.forward(&z0)?);
                let (a, b, c) = (d.forward(t, x)?, d.forward(t, x_hat)?, d.forward(t, x_gen)?);
                Ok(alpha_gan_discriminator_loss(t, a, b, c, real_weight)?.total)
            },
        ));
    }
    {
        let (e0, x0, z0, spec) = (e0.clone(), x0.clone(), z0.clone(), code_spec.clone());
        cases.push(GradCheckCase::new(
            "code_discriminator",
            TOL,
            flat_point(&code_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let c = BoundNetwork::from_flat(t, Role::CodeDiscriminator, spec.clone(), p)?;
                let z = t.constant(z0.clone());
                let z_hat = t.constant(e0.forward(&x0)?);
                let (a, b) = (c.forward(t, z)?, c.forward(t, z_hat)?);
                Ok(code_discriminator_loss(t, a, b)?.total)
            },
        ));
    }
    for variant in [GeneratorLoss::Saturating, GeneratorLoss::Alternative, GeneratorLoss::ReverseKl] {
        let (d0, z0, spec) = (d0.clone(), z0.clone(), gen_spec.clone());
        cases.push(GradCheckCase::new(
            format!("gan_generator_{variant}"),
            TOL,
            flat_point(&gen_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let gen = BoundNetwork::from_flat(t, Role::Generator, spec.clone(), p)?;
                let d = d0.bind(t, false);
                let z = t.constant(z0.clone());
                let x_gen = gen.forward(t, z)?;
                let l = d.forward(t, x_gen)?;
                Ok(gan_generator_loss(t, l, variant)?.total)
            },
        ));
    }
    {
        let (g0, x0, z0, spec) = (g0.clone(), x0.clone(), z0.clone(), disc_spec.clone());
        cases.push(GradCheckCase::new(
            "gan_discriminator",
            TOL,
            flat_point(&disc_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let d = BoundNetwork::from_flat(t, Role::Discriminator, spec.clone(), p)?;
                let x = t.constant(x0.clone());
                let x_gen = t.constant(g0.forward(&z0)?);
                let (a, b) = (d.forward(t, x)?, d.forward(t, x_gen)?);
                Ok(gan_discriminator_loss(t, a, b)?.total)
            },
        ));
    }
    for (name, corrected, per_dim) in [
        ("empirical_kl_corrected", true, false),
        ("empirical_kl_uncorrected", false, false),
        ("empirical_kl_per_dim", true, true),
    ] {
        cases.push(GradCheckCase::new(name, TOL, codes_point, move |t: &mut Tape, c: Var| {
            empirical_kl(t, c, EmpiricalKl { corrected, per_dim })
        }));
    }
    {
        let z0 = z0.clone();
        cases.push(GradCheckCase::new("cosine_distance", TOL, codes_point, move |t: &mut Tape, c: Var| {
            let z = t.constant(z0.clone());
            cosine_distance(t, z, c)
        }));
    }
    {
        let weights = AgeWeights {
            data_reconstruction: 10.0,
            code_reconstruction: 10.0,
            kl: EmpiricalKl::default(),
        };
        let (g0, e0, x0, z0, spec) = (g0.clone(), e0.clone(), x0.clone(), z0.clone(), enc_spec.clone());
        let (g1, e1, z1, spec1) = (g0.clone(), e0.clone(), z0.clone(), gen_spec.clone());
        cases.push(GradCheckCase::new(
            "age_encoder",
            TOL,
            flat_point(&enc_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let enc = BoundNetwork::from_flat(t, Role::Encoder, spec.clone(), p)?;
                let g = g0.bind(t, false);
                let x = t.constant(x0.clone());
                let z_hat = enc.forward(t, x)?;
                let x_hat = g.forward(t, z_hat)?;
                let x_gen = t.constant(g0.forward(&z0)?);
                let z_gen = enc.forward(t, x_gen)?;
                Ok(age_encoder_loss(t, x, x_hat, z_hat, z_gen, weights)?.total)
            },
        ));
        cases.push(GradCheckCase::new(
            "age_generator",
            TOL,
            flat_point(&gen_spec),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let gen = BoundNetwork::from_flat(t, Role::Generator, spec1.clone(), p)?;
                let e = e1.bind(t, false);
                let _ = &g1;
                let z = t.constant(z1.clone());
                let x_gen = gen.forward(t, z)?;
                let z_gen = e.forward(t, x_gen)?;
                Ok(age_generator_loss(t, z, z_gen, weights)?.total)
            },
        ));
    }
    {
        let vae_enc = spec(vec![X, H, 2 * Z], OutputActivation::Identity);
        let (g0, x0, eps0, spec) = (g0.clone(), x0.clone(), eps0.clone(), vae_enc.clone());
        cases.push(GradCheckCase::new(
            "vae_negative_elbo",
            TOL,
            flat_point(&vae_enc),
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let enc = BoundNetwork::from_flat(t, Role::Encoder, spec.clone(), p)?;
                let g = g0.bind(t, false);
                let x = t.constant(x0.clone());
                let stats = enc.forward(t, x)?;
                let mu = t.slice_cols(stats, 0, Z)?;
                let log_sigma = t.slice_cols(stats, Z, 2 * Z)?;
                let eps = t.constant(eps0.clone());
                let z = reparameterize(t, mu, log_sigma, eps)?;
                let x_hat = g.forward(t, z)?;
                Ok(vae_loss(t, x, mu, log_sigma, x_hat, lambda)?.total)
            },
        ));
    }
    {
        let mix: Vec<f64> = (0..BATCH).map(|i| (i as f64 + 0.5) / BATCH as f64).collect();
        let (g0, x0, z0, spec) = (g0.clone(), x0.clone(), z0.clone(), critic_spec.clone());
        let point = {
            let p = critic_spec.parameter_count();
            move |rng: &mut ChaCha8Rng| random_matrix(1, p, || rng.gen_range(-1.0..1.0))
        };
        cases.push(GradCheckCase::new(
            "wgan_gp_critic",
            PENALTY_TOL,
            point,
            move |t: &mut Tape, p: Var| -> Result<Var, LossError> {
                let critic = BoundNetwork::from_flat(t, Role::Critic, spec.clone(), p)?;
                let x = t.constant(x0.clone());
                let x_gen = t.constant(g0.forward(&z0)?);
                let (c, _) = wgan_gp_losses(t, &critic, x, x_gen, &mix, 10.0)?;
                Ok(c.total)
            },
        ));
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    macro_rules! sv {
        ($t:ident, $e:expr) => {{
            let v = $e;
            $t.scalar(v)
        }};
    }

    fn col(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn density_ratio_examples() {
        let r = density_ratio(&col(&[0.0, logit(0.75), logit(0.9)])).unwrap();
        close(r.data()[0], 1.0, 1e-12);
        close(r.data()[1], 3.0, 1e-12);
        close(r.data()[2], 9.0, 1e-12);
        assert!(matches!(density_ratio(&col(&[701.0])), Err(LossError::RatioOverflow(_))));
        assert_eq!(log_density_ratio(&col(&[2.5])).data(), &[2.5]);
    }

    #[test]
    fn gan_discriminator_examples() {
        let mut t = Tape::new();
        let z = t.constant(col(&[0.0; 4]));
        let l = gan_discriminator_loss(&mut t, z, z).unwrap();
        close(l.value(&t), 2.0 * 2f64.ln(), 1e-12);

        let r = t.constant(col(&[40.0]));
        let f = t.constant(col(&[-40.0]));
        let l = gan_discriminator_loss(&mut t, r, f).unwrap();
        assert!(l.value(&t) < 1e-16);

        let r = t.constant(col(&[logit(0.8)]));
        let f = t.constant(col(&[logit(0.3)]));
        let l = gan_discriminator_loss(&mut t, r, f).unwrap();
        close(l.value(&t), -(0.8f64.ln()) - 0.7f64.ln(), 1e-12);
        close(l.value(&t), 0.5798184952529422, 1e-12);
    }

    #[test]
    fn generator_variants() {
        let mut t = Tape::new();
        let z = t.constant(col(&[0.0]));
        close(gan_generator_loss(&mut t, z, GeneratorLoss::ReverseKl).unwrap().value(&t), 0.0, 0.0);
        close(gan_generator_loss(&mut t, z, GeneratorLoss::Alternative).unwrap().value(&t), 2f64.ln(), 1e-15);
        let x = t.constant(col(&[1.5]));
        close(gan_generator_loss(&mut t, x, GeneratorLoss::ReverseKl).unwrap().value(&t), -1.5, 0.0);
        assert!("nope".parse::<GeneratorLoss>().is_err());
        assert_eq!("reverse_kl".parse::<GeneratorLoss>().unwrap(), GeneratorLoss::ReverseKl);
    }

    #[test]
    fn l1_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let z = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        close(sv!(t, l1_reconstruction(&mut t, x, x, 1.0).unwrap()), 0.0, 0.0);
        let one = sv!(t, l1_reconstruction(&mut t, x, z, 1.0).unwrap());
        close(one, 2.0, 0.0);
        for lambda in [1.0, 5.0, 10.0, 50.0] {
            close(sv!(t, l1_reconstruction(&mut t, x, z, lambda).unwrap()), lambda * one, 0.0);
        }
        let bad = t.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        assert!(matches!(l1_reconstruction(&mut t, x, bad, 1.0), Err(LossError::ShapeMismatch { .. })));
        assert!(l1_reconstruction(&mut t, x, z, 0.0).is_err());
    }

    #[test]
    fn code_kl_examples() {
        let mut t = Tape::new();
        let a = t.constant(col(&[0.0; 3]));
        close(sv!(t, kl_via_code_discriminator(&mut t, a).unwrap()), 0.0, 0.0);
        let b = t.constant(col(&[-2.0; 3]));
        close(sv!(t, kl_via_code_discriminator(&mut t, b).unwrap()), 2.0, 0.0);
        let c = t.constant(col(&[-1.0, 1.0]));
        close(sv!(t, kl_via_code_discriminator(&mut t, c).unwrap()), 0.0, 0.0);
    }

    /// A batch whose every column has sample mean exactly 0 and population std exactly 1.
    fn standard_codes(n: usize) -> Tensor {
        let rows = vec![vec![1.0; n], vec![-1.0; n]];
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn empirical_kl_examples() {
        let mut t = Tape::new();
        let codes = t.constant(standard_codes(10));
        let c = empirical_kl(&mut t, codes, EmpiricalKl { corrected: true, per_dim: false }).unwrap();
        close(t.scalar(c), 0.0, 1e-12);
        let u = empirical_kl(&mut t, codes, EmpiricalKl { corrected: false, per_dim: false }).unwrap();
        close(t.scalar(u), 10.0, 1e-12);
        let un = empirical_kl(&mut t, codes, EmpiricalKl { corrected: false, per_dim: true }).unwrap();
        close(t.scalar(un), 1.0, 1e-12);

        let dup = t.constant(Tensor::matrix(3, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]).unwrap());
        assert_eq!(empirical_kl(&mut t, dup, EmpiricalKl::default()).unwrap_err(), LossError::DegenerateBatch(0));
        let one = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        assert!(matches!(empirical_kl(&mut t, one, EmpiricalKl::default()), Err(LossError::BatchTooSmall(1))));
    }

    #[test]
    fn empirical_kl_matches_gaussian_closed_form() {
        // N(1, 4): KL = (4 + 1)/2 − ln 2 − 1/2.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Normal::new(1.0, 2.0).unwrap();
        let codes = Tensor::matrix(65536, 1, (0..65536).map(|_| dist.sample(&mut rng)).collect()).unwrap();
        let mut t = Tape::new();
        let c = t.constant(codes);
        let kl = empirical_kl(&mut t, c, EmpiricalKl::default()).unwrap();
        close(t.scalar(kl), 2.5 - 2f64.ln() - 0.5, 0.05);
    }

    #[test]
    fn alpha_gan_objective_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let x0 = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let zero = t.constant(col(&[0.0]));
        let minus = t.constant(col(&[-1.0]));

        close(alpha_gan_encoder_loss(&mut t, x, x, zero, 1.0).unwrap().value(&t), 0.0, 0.0);
        let l = alpha_gan_encoder_loss(&mut t, x, x0, minus, 1.0).unwrap();
        close(l.value(&t), 3.0, 0.0);
        let l2 = alpha_gan_encoder_loss(&mut t, x, x0, minus, 2.0).unwrap();
        close(
            l2.component(&t, Component::Reconstruction).unwrap(),
            2.0 * l.component(&t, Component::Reconstruction).unwrap(),
            0.0,
        );

        close(alpha_gan_generator_loss(&mut t, x, x, zero, zero, 1.0).unwrap().value(&t), 0.0, 0.0);
        close(alpha_gan_generator_loss(&mut t, x, x, minus, minus, 1.0).unwrap().value(&t), 2.0, 0.0);
        // Per-example L1 of 0.5 with λ = 10 shifts the total by exactly 5.
        let half = t.constant(Tensor::matrix(1, 2, vec![0.75, 0.75]).unwrap());
        let base = alpha_gan_generator_loss(&mut t, x, x, minus, zero, 10.0).unwrap();
        let shifted = alpha_gan_generator_loss(&mut t, x, half, minus, zero, 10.0).unwrap();
        close(shifted.value(&t) - base.value(&t), 5.0, 1e-12);
        close(
            shifted.sum_of(&t, &[Component::Adversarial, Component::AdversarialSamples]).unwrap(),
            base.sum_of(&t, &[Component::Adversarial, Component::AdversarialSamples]).unwrap(),
            0.0,
        );
    }

    #[test]
    fn alpha_gan_discriminator_examples() {
        let mut t = Tape::new();
        let z = t.constant(col(&[0.0; 5]));
        close(alpha_gan_discriminator_loss(&mut t, z, z, z, 1.0).unwrap().value(&t), 3.0 * 2f64.ln(), 1e-12);
        let r = t.constant(col(&[50.0]));
        let f = t.constant(col(&[-50.0]));
        assert!(alpha_gan_discriminator_loss(&mut t, r, f, f, 1.0).unwrap().value(&t) < 1e-20);
        let r = t.constant(col(&[4.0]));
        let f = t.constant(col(&[-4.0]));
        let v = alpha_gan_discriminator_loss(&mut t, r, f, f, 1.0).unwrap().value(&t);
        close(v, 3.0 * (-4f64).exp().ln_1p(), 1e-15);
        close(v, 0.054449783753429, 1e-12);
        let w2 = alpha_gan_discriminator_loss(&mut t, z, z, z, 2.0).unwrap().value(&t);
        close(w2, 4.0 * 2f64.ln(), 1e-12);
    }

    #[test]
    fn discriminator_loss_decreases_along_separating_ray() {
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let s = k as f64 * 0.5;
            let mut t = Tape::new();
            let r = t.constant(col(&[s, s + 0.3]));
            let f = t.constant(col(&[-s, -s - 0.1]));
            let g = t.constant(col(&[-s - 0.2]));
            let v = alpha_gan_discriminator_loss(&mut t, r, f, g, 1.0).unwrap().value(&t);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn code_discriminator_examples() {
        let mut t = Tape::new();
        let z = t.constant(col(&[0.0; 2]));
        close(code_discriminator_loss(&mut t, z, z).unwrap().value(&t), 2.0 * 2f64.ln(), 1e-12);
        let p = t.constant(col(&[60.0]));
        let q = t.constant(col(&[-60.0]));
        assert!(code_discriminator_loss(&mut t, p, q).unwrap().value(&t) < 1e-20);
        let a = t.constant(col(&[0.3, -1.2]));
        let b = t.constant(col(&[2.0, 0.7]));
        let na = t.neg(a);
        let nb = t.neg(b);
        let l1 = code_discriminator_loss(&mut t, a, b).unwrap().value(&t);
        let l2 = code_discriminator_loss(&mut t, nb, na).unwrap().value(&t);
        close(l1, l2, 1e-15);
    }

    #[test]
    fn vae_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![0.4, -0.2]).unwrap());
        let zero = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        close(vae_loss(&mut t, x, zero, zero, x, 1.0).unwrap().value(&t), 0.0, 1e-15);
        let one = t.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let l = vae_loss(&mut t, x, one, zero, x, 1.0).unwrap();
        close(l.component(&t, Component::Kl).unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn vae_kl_agrees_with_empirical_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mu = [0.7, -0.3];
        let sigma = [0.5, 1.6];
        let n = 65536;
        let mut data = Vec::with_capacity(n * 2);
        for _ in 0..n {
            for j in 0..2 {
                data.push(Normal::new(mu[j], sigma[j]).unwrap().sample(&mut rng));
            }
        }
        let mut t = Tape::new();
        let codes = t.constant(Tensor::matrix(n, 2, data).unwrap());
        let emp = sv!(t, empirical_kl(&mut t, codes, EmpiricalKl::default()).unwrap());
        let m = t.constant(Tensor::matrix(1, 2, mu.to_vec()).unwrap());
        let ls = t.constant(Tensor::matrix(1, 2, sigma.iter().map(|s: &f64| s.ln()).collect()).unwrap());
        let analytic = sv!(t, gaussian_kl(&mut t, m, ls).unwrap());
        close(emp, analytic, 0.05);
    }

    #[test]
    fn wgan_gp_examples() {
        let zero = MlpSpec::new(vec![2, 4, 1], Activation::LeakyRelu, OutputActivation::Identity)
            .with_init(Init::Normal { std: 0.0 });
        let critic = NetworkParams::init(Role::Critic, zero, 0).unwrap();
        let mut t = Tape::new();
        let net = critic.bind(&mut t, true);
        let real = t.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let fake = t.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        let (c, g) = wgan_gp_losses(&mut t, &net, real, fake, &[0.1, 0.5, 0.9], 10.0).unwrap();
        close(c.value(&t), 10.0, 1e-15);
        close(g.value(&t), 0.0, 0.0);

        // f(x) = 0.6 x₀ + 0.8 x₁ has unit gradient norm everywhere.
        let unit = MlpSpec::new(vec![2, 1], Activation::Relu, OutputActivation::Identity);
        let linear = NetworkParams::from_tensors(
            Role::Critic,
            unit.clone(),
            vec![Tensor::matrix(2, 1, vec![0.6, 0.8]).unwrap(), Tensor::zeros(vec![1]).unwrap()],
        )
        .unwrap();
        let mut t = Tape::new();
        let net = linear.bind(&mut t, true);
        let pts = t.constant(Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap());
        close(sv!(t, gradient_penalty(&mut t, &net, pts, 10.0).unwrap()), 0.0, 1e-15);

        // Gradient norm 0.5 everywhere: squared deficit 0.25, times 10.
        let half = NetworkParams::from_tensors(
            Role::Critic,
            unit,
            vec![Tensor::matrix(2, 1, vec![0.3, 0.4]).unwrap(), Tensor::zeros(vec![1]).unwrap()],
        )
        .unwrap();
        let mut t = Tape::new();
        let net = half.bind(&mut t, true);
        let pts = t.constant(Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap());
        close(sv!(t, gradient_penalty(&mut t, &net, pts, 10.0).unwrap()), 2.5, 1e-14);
    }

    #[test]
    fn cosine_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap());
        close(sv!(t, cosine_distance(&mut t, a, a).unwrap()), 0.0, 1e-15);
        let na = t.neg(a);
        close(sv!(t, cosine_distance(&mut t, a, na).unwrap()), 2.0, 1e-15);
        let z = t.constant(Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        assert_eq!(cosine_distance(&mut t, a, z).unwrap_err(), LossError::ZeroNorm(0));
    }

    #[test]
    fn age_examples() {
        let w = AgeWeights {
            data_reconstruction: 100.0,
            code_reconstruction: 10.0,
            kl: EmpiricalKl::default(),
        };
        let mut t = Tape::new();
        let codes = t.constant(standard_codes(3));
        let x = t.constant(Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let g = age_generator_loss(&mut t, codes, codes, w).unwrap();
        close(g.component(&t, Component::CodeReconstruction).unwrap(), 0.0, 1e-14);
        close(g.component(&t, Component::SampleKl).unwrap(), 0.0, 1e-12);
        let (e, _) = age_losses(&mut t, x, x, codes, codes, codes, w).unwrap();
        close(e.component(&t, Component::Kl).unwrap(), 0.0, 1e-12);
        close(e.value(&t), 0.0, 1e-12);
    }

    #[test]
    fn composite_suite_passes() {
        for case in composite_suite() {
            let report = case.run(100, 1e-6, 11);
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn totals_equal_component_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let mut r = |n| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            v
        };
        let a = t.constant(col(&r(6)));
        let b = t.constant(col(&r(6)));
        let c = t.constant(col(&r(6)));
        let x = t.constant(Tensor::matrix(3, 2, r(6)).unwrap());
        let y = t.constant(Tensor::matrix(3, 2, r(6)).unwrap());
        let terms = [
            alpha_gan_discriminator_loss(&mut t, a, b, c, 2.0).unwrap(),
            alpha_gan_generator_loss(&mut t, x, y, a, b, 7.0).unwrap(),
            alpha_gan_encoder_loss(&mut t, x, y, c, 3.0).unwrap(),
            gan_discriminator_loss(&mut t, a, b).unwrap(),
        ];
        for l in terms {
            let sum: f64 = l.components.iter().map(|&(_, v)| t.scalar(v)).sum();
            close(l.value(&t), sum, 1e-10);
        }
    }

    proptest! {
        #[test]
        fn logit_and_probability_forms_agree(l in -15.0f64..15.0, m in -15.0f64..15.0) {
            let (d_real, d_fake) = (crate::networks::sigmoid(l), crate::networks::sigmoid(m));
            let mut t = Tape::new();
            let r = t.constant(col(&[l]));
            let f = t.constant(col(&[m]));
            let disc = gan_discriminator_loss(&mut t, r, f).unwrap().value(&t);
            prop_assert!((disc - (-(d_real.ln()) - (1.0 - d_fake).ln())).abs() < 1e-9);
            let alt = gan_generator_loss(&mut t, f, GeneratorLoss::Alternative).unwrap().value(&t);
            prop_assert!((alt + d_fake.ln()).abs() < 1e-9);
            let sat = gan_generator_loss(&mut t, f, GeneratorLoss::Saturating).unwrap().value(&t);
            prop_assert!((sat - (1.0 - d_fake).ln()).abs() < 1e-9);
            let rkl = gan_generator_loss(&mut t, f, GeneratorLoss::ReverseKl).unwrap().value(&t);
            prop_assert!((rkl - (alt + sat)).abs() < 1e-12);
        }

        #[test]
        fn losses_are_permutation_invariant(
            v in proptest::collection::vec(-5.0f64..5.0, 12),
            rot in 1usize..6,
        ) {
            let real: Vec<f64> = v[..6].to_vec();
            let fake: Vec<f64> = v[6..].to_vec();
            let mut rr = real.clone();
            rr.rotate_left(rot);
            let mut ff = fake.clone();
            ff.rotate_right(rot);
            let mut t = Tape::new();
            let (a, b) = (t.constant(col(&real)), t.constant(col(&fake)));
            let (c, d) = (t.constant(col(&rr)), t.constant(col(&ff)));
            let l1 = alpha_gan_discriminator_loss(&mut t, a, b, b, 1.0).unwrap().value(&t);
            let l2 = alpha_gan_discriminator_loss(&mut t, c, d, d, 1.0).unwrap().value(&t);
            prop_assert!((l1 - l2).abs() < 1e-12);
            let k1 = code_discriminator_loss(&mut t, a, b).unwrap().value(&t);
            let k2 = code_discriminator_loss(&mut t, c, d).unwrap().value(&t);
            prop_assert!((k1 - k2).abs() < 1e-12);
        }

        #[test]
        fn corrected_and_uncorrected_differ_by_n(
            v in proptest::collection::vec(-3.0f64..3.0, 8..40),
        ) {
            let n = 2;
            let rows = v.len() / n;
            prop_assume!(rows >= 4);
            let codes = Tensor::matrix(rows, n, v[..rows * n].to_vec()).unwrap();
            let mut t = Tape::new();
            let c = t.constant(codes);
            let corrected = empirical_kl(&mut t, c, EmpiricalKl { corrected: true, per_dim: false });
            prop_assume!(corrected.is_ok());
            let a = t.scalar(corrected.unwrap());
            let u = empirical_kl(&mut t, c, EmpiricalKl { corrected: false, per_dim: false }).unwrap();
            prop_assert!((t.scalar(u) - a - n as f64).abs() < 1e-12);
        }
    }
}
