//! Evaluation battery: independent Wasserstein critic, MS-SSIM diversity,
//! classifier score, mode coverage and latent statistics.

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::data::{DataKind, Dataset, GaussianMixtureSpec, SplitName};
use crate::losses::{self, LossError};
use crate::networks::{Activation, Init, MlpSpec, NetworkError, NetworkParams, OutputActivation, Role};
use crate::trainers::{AdamState, TrainError, TrainedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what}: need at least {need}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("image shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("image {height}×{width} is too small for a single MS-SSIM scale (need 8×8)")]
    ImageTooSmall { height: usize, width: usize },
    #[error("{pixels} pixels do not form a {height}×{width} image")]
    PixelCount { pixels: usize, height: usize, width: usize },
    #[error("{requested} pairs requested but only {available} distinct pairs exist")]
    PairCount { requested: usize, available: usize },
    #[error("{what}: expected width {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("probabilities in row {0} are not a distribution")]
    NotADistribution(usize),
    #[error("metric `{0}` needs {1}")]
    Unsupported(String, &'static str),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Canonical five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

/// Largest scale count (at most 5) for which every scale keeps a side of at least 8.
pub fn max_scales(height: usize, width: usize) -> usize {
    let side = height.min(width);
    (1..=5).rev().find(|&s| side >= (1 << (s - 1)) * 8).unwrap_or(0)
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` image.
fn filter(img: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| win[i] * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| win[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let win = gaussian_window(WINDOW.min(h).min(w));
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, _, _) = filter(a, h, w, &win);
    let (mu_b, _, _) = filter(b, h, w, &win);
    let (aa, _, _) = filter(&prod(a, a), h, w, &win);
    let (bb, _, _) = filter(&prod(b, b), h, w, &win);
    let (ab, _, _) = filter(&prod(a, b), h, w, &win);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let c = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2);
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let at = |rr: usize, cc: usize| img[rr * w + cc];
            out.push((at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1)) / 4.0);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two `height × width` greyscale images with pixels in [0, 1].
///
/// `scales = None` picks [`max_scales`]. The canonical exponents are
/// renormalised over the scales used, and negative contrast-structure
/// terms are clamped to 0 before exponentiation.
pub fn ms_ssim(
    a: &[f64],
    b: &[f64],
    height: usize,
    width: usize,
    scales: Option<usize>,
) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::ShapeMismatch {
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if a.len() != height * width {
        return Err(EvalError::PixelCount {
            pixels: a.len(),
            height,
            width,
        });
    }
    let available = max_scales(height, width);
    if available == 0 {
        return Err(EvalError::ImageTooSmall { height, width });
    }
    let scales = scales.unwrap_or(available).clamp(1, available);
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (mut a, mut b, mut h, mut w) = (a.to_vec(), b.to_vec(), height, width);
    let mut value = 1.0;
    for (s, &weight) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b, h, w);
        let term = if s + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(weight / total);
        if s + 1 < scales {
            (a, _, _) = downsample(&a, h, w);
            let (nb, nh, nw) = downsample(&b, h, w);
            (b, h, w) = (nb, nh, nw);
        }
    }
    Ok(value)
}

/// Maps a pixel from [-1, 1] to [0, 1].
pub fn to_unit_interval(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

fn image_shape(kind: DataKind) -> Result<(usize, usize), EvalError> {
    match kind {
        DataKind::Images { height, width } => Ok((height, width)),
        DataKind::Points2d => Err(EvalError::Unsupported("diversity".into(), "image data")),
    }
}

/// `1 − mean MS-SSIM` over `pair_count` seeded distinct pairs of rows of
/// `images` (pixels in [-1, 1]).
pub fn sample_diversity(
    images: &Tensor,
    height: usize,
    width: usize,
    pair_count: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let n = images.rows();
    if n < 2 {
        return Err(EvalError::TooFew {
            what: "images for diversity",
            need: 2,
            got: n,
        });
    }
    let available = n * (n - 1) / 2;
    if pair_count == 0 || pair_count > available {
        return Err(EvalError::PairCount {
            requested: pair_count,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = if pair_count * 2 > available {
        let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        all.shuffle(&mut rng);
        all.truncate(pair_count);
        all
    } else {
        let mut seen = HashSet::new();
        let mut pairs = Vec::with_capacity(pair_count);
        while pairs.len() < pair_count {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i != j && seen.insert((i.min(j), i.max(j))) {
                pairs.push((i.min(j), i.max(j)));
            }
        }
        pairs
    };
    let unit: Vec<Vec<f64>> = (0..n).map(|i| images.row(i).iter().map(|&v| to_unit_interval(v)).collect()).collect();
    let mut total = 0.0;
    for &(i, j) in &pairs {
        total += ms_ssim(&unit[i], &unit[j], height, width, None)?;
    }
    Ok(1.0 - total / pairs.len() as f64)
}

/// `exp(mean_x KL(p(y|x) ‖ p(y)))` from rows of class probabilities.
pub fn classifier_score_from_probs(probs: &Tensor) -> Result<f64, EvalError> {
    let (n, c) = (probs.rows(), probs.cols());
    for i in 0..n {
        let row = probs.row(i);
        if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(EvalError::NotADistribution(i));
        }
    }
    let marginal: Vec<f64> = (0..c).map(|j| (0..n).map(|i| probs.get(i, j)).sum::<f64>() / n as f64).collect();
    let mut kl_total = 0.0;
    for i in 0..n {
        kl_total += probs
            .row(i)
            .iter()
            .zip(&marginal)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, m)| p * (p / m).ln())
            .sum::<f64>();
    }
    Ok((kl_total / n as f64).exp())
}

/// Softmax of a classifier's logits.
pub fn class_probabilities(classifier: &NetworkParams, x: &Tensor) -> Result<Tensor, EvalError> {
    let expected = classifier.spec().input_dim();
    if x.cols() != expected {
        return Err(EvalError::DimMismatch {
            what: "classifier input",
            expected,
            got: x.cols(),
        });
    }
    let mut tape = Tape::new();
    let net = classifier.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let logits = net.forward(&mut tape, xv)?;
    let p = tape.softmax(logits, 1)?;
    Ok(tape.value(p).clone())
}

pub fn classifier_score(samples: &Tensor, classifier: &NetworkParams) -> Result<f64, EvalError> {
    classifier_score_from_probs(&class_probabilities(classifier, samples)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTraining {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            steps: 1500,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

pub fn accuracy(classifier: &NetworkParams, x: &Tensor, labels: &[usize]) -> Result<f64, EvalError> {
    let p = class_probabilities(classifier, x)?;
    let correct = (0..p.rows())
        .filter(|&i| {
            let row = p.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[i]
        })
        .count();
    Ok(correct as f64 / p.rows() as f64)
}

/// Trains a softmax MLP on the labelled train split; returns it with its test accuracy.
pub fn train_classifier(dataset: &Dataset, opts: &ClassifierTraining) -> Result<(NetworkParams, f64), EvalError> {
    let (Some(classes), Some(labels)) = (dataset.n_classes, dataset.train.labels.as_ref()) else {
        return Err(EvalError::Unsupported("classifier_score".into(), "a labelled dataset"));
    };
    let mut sizes = vec![dataset.dim()];
    sizes.extend(&opts.hidden);
    sizes.push(classes);
    let spec = MlpSpec::new(sizes, Activation::LeakyRelu, OutputActivation::Identity)
        .with_init(Init::Normal { std: 0.05 });
    let mut params = NetworkParams::init(Role::Classifier, spec, opts.seed)?;
    let mut adam = AdamState::new(&params, opts.lr, 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc1a5);
    let train = &dataset.train.data;
    for step in 0..opts.steps {
        let idx: Vec<usize> = (0..opts.batch_size).map(|_| rng.gen_range(0..train.rows())).collect();
        let mut onehot = vec![0.0; opts.batch_size * classes];
        for (r, &i) in idx.iter().enumerate() {
            onehot[r * classes + labels[i]] = 1.0;
        }
        let mut tape = Tape::new();
        let net = params.bind(&mut tape, true);
        let x = tape.constant(train.select_rows(&idx)?);
        let y = tape.constant(Tensor::matrix(opts.batch_size, classes, onehot)?);
        let logits = net.forward(&mut tape, x)?;
        let logp = tape.log_softmax(logits, 1)?;
        let picked = tape.mul(logp, y)?;
        let total = tape.sum(picked, None)?;
        let loss = tape.scale(total, -1.0 / opts.batch_size as f64);
        tape.backward(loss)?;
        let grads = net.grads(&tape);
        adam.step(&mut params, &grads, step)?;
    }
    let test_labels = dataset.test.labels.as_ref().expect("labelled dataset has test labels");
    let acc = accuracy(&params, &dataset.test.data, test_labels)?;
    Ok((params, acc))
}

/// Mode coverage of 2D samples against a known mixture.
///
/// A sample is high quality if it lies within `sigma_radius · σ` of some
/// mode mean; a mode is covered if at least `min_fraction` of all samples
/// are high-quality samples of that mode.
pub fn mode_coverage_with(
    samples: &Tensor,
    mixture: &GaussianMixtureSpec,
    sigma_radius: f64,
    min_fraction: f64,
) -> Result<(usize, f64), EvalError> {
    let n = samples.rows();
    if n == 0 || samples.is_empty() {
        return Err(EvalError::TooFew {
            what: "samples for mode coverage",
            need: 1,
            got: 0,
        });
    }
    if samples.cols() != 2 {
        return Err(EvalError::DimMismatch {
            what: "mode coverage samples",
            expected: 2,
            got: samples.cols(),
        });
    }
    let radius = sigma_radius * mixture.sigma;
    let mut counts = vec![0usize; mixture.n_modes()];
    for i in 0..n {
        let (x, y) = (samples.get(i, 0), samples.get(i, 1));
        let nearest = mixture
            .means
            .iter()
            .map(|m| ((x - m[0]).powi(2) + (y - m[1]).powi(2)).sqrt())
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best });
        if nearest.1 <= radius {
            counts[nearest.0] += 1;
        }
    }
    let hq: usize = counts.iter().sum();
    let covered = counts
        .iter()
        .filter(|&&c| c > 0 && c as f64 >= min_fraction * n as f64)
        .count();
    Ok((covered, hq as f64 / n as f64))
}

pub const DEFAULT_SIGMA_RADIUS: f64 = 3.0;
pub const DEFAULT_MODE_FRACTION: f64 = 0.01;

/// `(modes_covered, high_quality_fraction)` with the 1% coverage threshold.
pub fn mode_coverage(
    samples: &Tensor,
    mixture: &GaussianMixtureSpec,
    sigma_radius: f64,
) -> Result<(usize, f64), EvalError> {
    mode_coverage_with(samples, mixture, sigma_radius, DEFAULT_MODE_FRACTION)
}

/// Per-dimension means and the (exactly symmetric) sample covariance of codes.
pub fn code_stats(codes: &Tensor) -> Result<(Vec<f64>, Tensor), EvalError> {
    let (n, d) = (codes.rows(), codes.cols());
    if n < 2 {
        return Err(EvalError::TooFew {
            what: "codes for latent statistics",
            need: 2,
            got: n,
        });
    }
    // Deviations from the first row keep duplicated codes at exactly zero covariance.
    let shifted: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..n).map(|i| codes.get(i, j) - codes.get(0, j)).collect())
        .collect();
    let shift_means: Vec<f64> = shifted.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let means: Vec<f64> = (0..d).map(|j| codes.get(0, j) + shift_means[j]).collect();
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let s: f64 = (0..n)
                .map(|i| (shifted[a][i] - shift_means[a]) * (shifted[b][i] - shift_means[b]))
                .sum();
            cov[a * d + b] = s / (n - 1) as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    Ok((means, Tensor::matrix(d, d, cov)?))
}

pub fn latent_stats(model: &TrainedModel, data: &Tensor, seed: u64) -> Result<(Vec<f64>, Tensor), EvalError> {
    let codes = model.encode(data, &mut ChaCha8Rng::seed_from_u64(seed))?;
    code_stats(&codes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gp_coeff: f64,
    /// Fraction of each sample set held back for the final estimate.
    pub test_fraction: f64,
    /// Record a curve point every this many steps.
    pub curve_every: usize,
    pub seed: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            steps: 5000,
            batch_size: 64,
            lr: 1e-4,
            gp_coeff: 10.0,
            test_fraction: 0.5,
            curve_every: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticCurvePoint {
    pub step: usize,
    /// Distance estimate on one validation minibatch.
    pub minibatch: f64,
    /// Distance estimate averaged over the whole test split.
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticReport {
    /// `mean f(data) − mean f(samples)` on the test split.
    pub distance: f64,
    pub neg_wasserstein: f64,
    pub curves: Vec<CriticCurvePoint>,
}

pub const MIN_CRITIC_SAMPLES: usize = 512;

fn split_rows(t: &Tensor, test_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor), EvalError> {
    let mut idx: Vec<usize> = (0..t.rows()).collect();
    idx.shuffle(rng);
    let n_test = ((t.rows() as f64 * test_fraction).round() as usize).clamp(1, t.rows() - 1);
    Ok((t.select_rows(&idx[n_test..])?, t.select_rows(&idx[..n_test])?))
}

fn critic_gap(critic: &NetworkParams, data: &Tensor, samples: &Tensor) -> Result<f64, EvalError> {
    let mean = |t: &Tensor| -> Result<f64, EvalError> {
        let f = critic.forward(t)?;
        Ok(f.data().iter().sum::<f64>() / f.len() as f64)
    };
    Ok(mean(data)? - mean(samples)?)
}

/// Trains a fresh WGAN-GP critic between `held_out` data and model `samples`
/// and reports the distance estimate on a held-back test split.
pub fn independent_critic(samples: &Tensor, held_out: &Tensor, cfg: &CriticConfig) -> Result<CriticReport, EvalError> {
    for (what, t) in [("generator samples", samples), ("held-out data", held_out)] {
        if t.rows() < MIN_CRITIC_SAMPLES {
            return Err(EvalError::TooFew {
                what,
                need: MIN_CRITIC_SAMPLES,
                got: t.rows(),
            });
        }
    }
    if samples.cols() != held_out.cols() {
        return Err(EvalError::DimMismatch {
            what: "critic samples",
            expected: held_out.cols(),
            got: samples.cols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (data_train, data_test) = split_rows(held_out, cfg.test_fraction, &mut rng)?;
    let (gen_train, gen_test) = split_rows(samples, cfg.test_fraction, &mut rng)?;

    let mut sizes = vec![held_out.cols()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let spec = MlpSpec::new(sizes, Activation::LeakyRelu, OutputActivation::Identity)
        .with_init(Init::Normal { std: 0.1 });
    let mut critic = NetworkParams::init(Role::Critic, spec, cfg.seed.wrapping_add(7))?;
    let mut adam = AdamState::new(&critic, cfg.lr, 0.5, 0.9, 1e-8);
    let b = cfg.batch_size;
    let mut curves = Vec::new();
    for step in 0..cfg.steps {
        let di: Vec<usize> = (0..b).map(|_| rng.gen_range(0..data_train.rows())).collect();
        let gi: Vec<usize> = (0..b).map(|_| rng.gen_range(0..gen_train.rows())).collect();
        let mix: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
        let mut tape = Tape::new();
        let net = critic.bind(&mut tape, true);
        let real = tape.constant(data_train.select_rows(&di)?);
        let fake = tape.constant(gen_train.select_rows(&gi)?);
        let (loss, _) = losses::wgan_gp_losses(&mut tape, &net, real, fake, &mix, cfg.gp_coeff)?;
        tape.backward(loss.total)?;
        let grads = net.grads(&tape);
        adam.step(&mut critic, &grads, step)?;
        if cfg.curve_every > 0 && (step + 1) % cfg.curve_every == 0 {
            let vi: Vec<usize> = (0..b).map(|_| rng.gen_range(0..data_test.rows())).collect();
            let wi: Vec<usize> = (0..b).map(|_| rng.gen_range(0..gen_test.rows())).collect();
            curves.push(CriticCurvePoint {
                step: step + 1,
                minibatch: critic_gap(&critic, &data_test.select_rows(&vi)?, &gen_test.select_rows(&wi)?)?,
                test: critic_gap(&critic, &data_test, &gen_test)?,
            });
        }
    }
    let distance = critic_gap(&critic, &data_test, &gen_test)?;
    Ok(CriticReport {
        distance,
        neg_wasserstein: -distance,
        curves,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    NegWasserstein,
    Diversity,
    ClassifierScore,
    ModeCoverage,
    LatentStats,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Self::NegWasserstein,
        Self::Diversity,
        Self::ClassifierScore,
        Self::ModeCoverage,
        Self::LatentStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NegWasserstein => "neg_wasserstein",
            Self::Diversity => "diversity",
            Self::ClassifierScore => "classifier_score",
            Self::ModeCoverage => "modes",
            Self::LatentStats => "latent",
        }
    }

    /// Metrics that make sense for a model trained on `kind` data.
    pub fn applicable(model: &TrainedModel, dataset: &Dataset) -> Vec<Metric> {
        Self::ALL
            .into_iter()
            .filter(|m| match m {
                Self::NegWasserstein => true,
                Self::Diversity => dataset.kind.is_image(),
                Self::ClassifierScore => dataset.n_classes.is_some(),
                Self::ModeCoverage => dataset.mixture.is_some(),
                Self::LatentStats => model.algorithm().has_encoder(),
            })
            .collect()
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EvalError::UnknownMetric(s.to_string()))
    }
}

pub const REPORT_HEADER: &str = "iter,neg_wasserstein,diversity,classifier_score,modes_covered,hq_fraction";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub iter: usize,
    pub neg_wasserstein: Option<f64>,
    pub diversity: Option<f64>,
    pub classifier_score: Option<f64>,
    pub modes_covered: Option<usize>,
    pub high_quality_fraction: Option<f64>,
    pub latent_means: Option<Vec<f64>>,
    pub latent_covariance: Option<Tensor>,
    pub critic_curves: Vec<CriticCurvePoint>,
}

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_line(&self) -> String {
        [
            self.iter.to_string(),
            cell(&self.neg_wasserstein),
            cell(&self.diversity),
            cell(&self.classifier_score),
            cell(&self.modes_covered),
            cell(&self.high_quality_fraction),
        ]
        .join(",")
    }

    pub fn csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}\n", self.csv_line())
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub samples: usize,
    pub pair_count: usize,
    pub sigma_radius: f64,
    pub critic: CriticConfig,
    pub classifier: ClassifierTraining,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: 4096,
            pair_count: 2000,
            sigma_radius: DEFAULT_SIGMA_RADIUS,
            critic: CriticConfig::default(),
            classifier: ClassifierTraining::default(),
            seed: 0,
        }
    }
}

/// Runs the selected metrics for a trained model.
pub fn evaluate_model(
    model: &TrainedModel,
    dataset: &Dataset,
    metrics: &[Metric],
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples = model.sample(opts.samples, &mut rng)?;
    let mut report = MetricsReport {
        iter: model.iteration,
        ..MetricsReport::default()
    };
    for &m in metrics {
        match m {
            Metric::NegWasserstein => {
                let held = &dataset.split(SplitName::Valid).data;
                let r = independent_critic(&samples, held, &opts.critic)?;
                report.neg_wasserstein = Some(r.neg_wasserstein);
                report.critic_curves = r.curves;
            }
            Metric::Diversity => {
                let (h, w) = image_shape(dataset.kind)?;
                let pairs = opts.pair_count.min(samples.rows() * (samples.rows() - 1) / 2);
                report.diversity = Some(sample_diversity(&samples, h, w, pairs, opts.seed)?);
            }
            Metric::ClassifierScore => {
                let (classifier, _) = train_classifier(dataset, &opts.classifier)?;
                report.classifier_score = Some(classifier_score(&samples, &classifier)?);
            }
            Metric::ModeCoverage => {
                let mixture = dataset
                    .mixture
                    .as_ref()
                    .ok_or_else(|| EvalError::Unsupported("modes".into(), "a Gaussian-mixture dataset"))?;
                let (k, hq) = mode_coverage(&samples, mixture, opts.sigma_radius)?;
                report.modes_covered = Some(k);
                report.high_quality_fraction = Some(hq);
            }
            Metric::LatentStats => {
                if !model.algorithm().has_encoder() {
                    return Err(EvalError::Unsupported("latent".into(), "a model with an encoder"));
                }
                let (means, cov) = latent_stats(model, &dataset.test.data, opts.seed)?;
                report.latent_means = Some(means);
                report.latent_covariance = Some(cov);
            }
        }
    }
    Ok(report)
}
