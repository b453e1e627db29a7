//! Datasets: 2D Gaussian mixtures, procedural raster shapes and IDX files.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file, need {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {extra} unexpected bytes after the payload")]
    TrailingBytes { path: String, extra: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<[f64; 2]>,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl GaussianMixtureSpec {
    /// Equal-weight mixture over `means`.
    pub fn uniform(means: Vec<[f64; 2]>, sigma: f64) -> Result<Self, DataError> {
        let k = means.len();
        let spec = Self {
            means,
            sigma,
            weights: vec![1.0 / k.max(1) as f64; k],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.means.is_empty() || self.weights.len() != self.means.len() {
            return Err(DataError::InvalidParameter(format!(
                "{} means with {} weights",
                self.means.len(),
                self.weights.len()
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(DataError::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(DataError::InvalidParameter(format!(
                "mixture weights must be a simplex vector, sum is {total}"
            )));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.means.len()
    }

    /// `n` points and the index of the mode each came from.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>), DataError> {
        let pick = WeightedIndex::new(&self.weights)
            .map_err(|e| DataError::InvalidParameter(format!("mixture weights: {e}")))?;
        let mut data = Vec::with_capacity(2 * n);
        let mut modes = Vec::with_capacity(n);
        for _ in 0..n {
            let k = pick.sample(rng);
            let [mx, my] = self.means[k];
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            data.push(mx + self.sigma * dx);
            data.push(my + self.sigma * dy);
            modes.push(k);
        }
        Ok((Tensor::matrix(n, 2, data)?, modes))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataKind {
    Points2d,
    Images { height: usize, width: usize },
}

impl DataKind {
    pub fn dim(&self) -> usize {
        match *self {
            Self::Points2d => 2,
            Self::Images { height, width } => height * width,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Self::Images { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub data: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DataKind,
    pub train: Split,
    pub valid: Split,
    pub test: Split,
    pub n_classes: Option<usize>,
    /// The generating mixture, for synthetic point sets.
    pub mixture: Option<GaussianMixtureSpec>,
}

impl Dataset {
    pub fn split(&self, which: SplitName) -> &Split {
        match which {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Uniform draw with replacement of `batch` rows from a split.
    pub fn sample_batch(&self, which: SplitName, batch: usize, rng: &mut impl Rng) -> Result<Tensor, DataError> {
        let split = self.split(which);
        let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..split.len())).collect();
        Ok(split.data.select_rows(&idx)?)
    }
}

fn check_count(name: &str, n: usize, min: usize) -> Result<(), DataError> {
    if n < min {
        return Err(DataError::InvalidParameter(format!("{name} must be at least {min}, got {n}")));
    }
    Ok(())
}

fn mixture_dataset(mixture: GaussianMixtureSpec, n_per_split: usize, seed: u64) -> Result<Dataset, DataError> {
    check_count("n_per_split", n_per_split, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = || -> Result<Split, DataError> {
        let (data, _) = mixture.sample(n_per_split, &mut rng)?;
        Ok(Split { data, labels: None })
    };
    let (train, valid, test) = (split()?, split()?, split()?);
    Ok(Dataset {
        kind: DataKind::Points2d,
        train,
        valid,
        test,
        n_classes: None,
        mixture: Some(mixture),
    })
}

/// Modes equally spaced on a circle, starting at angle 0.
pub fn ring_mixture(n_modes: usize, radius: f64, sigma: f64) -> Result<GaussianMixtureSpec, DataError> {
    check_count("n_modes", n_modes, 2)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(DataError::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let means = (0..n_modes)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n_modes as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    GaussianMixtureSpec::uniform(means, sigma)
}

/// A `side × side` lattice of modes centred on the origin.
pub fn grid_mixture(side: usize, spacing: f64, sigma: f64) -> Result<GaussianMixtureSpec, DataError> {
    check_count("side", side, 1)?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(DataError::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    let offset = (side as f64 - 1.0) / 2.0;
    let mut means = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            means.push([(i as f64 - offset) * spacing, (j as f64 - offset) * spacing]);
        }
    }
    GaussianMixtureSpec::uniform(means, sigma)
}

pub fn ring_of_gaussians(
    n_modes: usize,
    radius: f64,
    sigma: f64,
    n_per_split: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    mixture_dataset(ring_mixture(n_modes, radius, sigma)?, n_per_split, seed)
}

pub fn grid_of_gaussians(
    side: usize,
    spacing: f64,
    sigma: f64,
    n_per_split: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    mixture_dataset(grid_mixture(side, spacing, sigma)?, n_per_split, seed)
}

pub const MAX_SHAPE_CLASSES: usize = 6;

/// Coverage in [0, 1] of a pixel centred at `(x, y)` by a soft shape.
fn shape_coverage(class: usize, x: f64, y: f64, p: &ShapeJitter, side: f64) -> f64 {
    let soft = |d: f64, half_width: f64| (half_width + 0.5 - d).clamp(0.0, 1.0);
    let (cx, cy) = (side / 2.0 + p.dx, side / 2.0 + p.dy);
    match class {
        // Horizontal and vertical bars.
        0 => soft((y - cy).abs(), p.thickness),
        1 => soft((x - cx).abs(), p.thickness),
        // Diagonal bars.
        2 => soft(((x - cx) - (y - cy)).abs() / 2f64.sqrt(), p.thickness),
        3 => soft(((x - cx) + (y - cy)).abs() / 2f64.sqrt(), p.thickness),
        // Filled blob and hollow ring.
        4 => soft(((x - cx).powi(2) + (y - cy).powi(2)).sqrt(), p.radius),
        _ => {
            let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            soft((r - p.radius - 1.0).abs(), p.thickness * 0.6)
        }
    }
}

struct ShapeJitter {
    dx: f64,
    dy: f64,
    thickness: f64,
    radius: f64,
    intensity: f64,
}

fn render_shape(class: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = side as f64;
    let p = ShapeJitter {
        dx: rng.gen_range(-0.2..0.2) * s,
        dy: rng.gen_range(-0.2..0.2) * s,
        thickness: rng.gen_range(0.06..0.12) * s,
        radius: rng.gen_range(0.12..0.22) * s,
        intensity: rng.gen_range(0.7..1.0),
    };
    let mut img = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let cov = shape_coverage(class, c as f64 + 0.5, r as f64 + 0.5, &p, s);
            img.push(-1.0 + 2.0 * p.intensity * cov);
        }
    }
    img
}

/// Labelled greyscale images of parameterised shapes: bars at four
/// orientations, then a blob and a ring. Each split holds `n_per_split`
/// images with class counts as balanced as `n_per_split` allows.
pub fn procedural_shapes(
    n_classes: usize,
    image_side: usize,
    n_per_split: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    check_count("n_classes", n_classes, 2)?;
    if n_classes > MAX_SHAPE_CLASSES {
        return Err(DataError::InvalidParameter(format!(
            "n_classes must be at most {MAX_SHAPE_CLASSES}, got {n_classes}"
        )));
    }
    check_count("image_side", image_side, 8)?;
    check_count("n_per_split", n_per_split, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = || -> Result<Split, DataError> {
        let mut labels: Vec<usize> = (0..n_per_split).map(|i| i % n_classes).collect();
        labels.shuffle(&mut rng);
        let mut data = Vec::with_capacity(n_per_split * image_side * image_side);
        for &y in &labels {
            data.extend(render_shape(y, image_side, &mut rng));
        }
        Ok(Split {
            data: Tensor::matrix(n_per_split, image_side * image_side, data)?,
            labels: Some(labels),
        })
    };
    let (train, valid, test) = (split()?, split()?, split()?);
    Ok(Dataset {
        kind: DataKind::Images {
            height: image_side,
            width: image_side,
        },
        train,
        valid,
        test,
        n_classes: Some(n_classes),
        mixture: None,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn need(path: &str, bytes: &[u8], expected: usize) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &str, bytes: &[u8], expected: u32) -> Result<(), DataError> {
    need(path, bytes, 4)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn exact_length(path: &str, bytes: &[u8], expected: usize) -> Result<(), DataError> {
    need(path, bytes, expected)?;
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes {
            path: path.to_string(),
            extra: bytes.len() - expected,
        });
    }
    Ok(())
}

/// Maps a byte in [0, 255] to [-1, 1].
pub fn pixel_to_unit(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Parses an unsigned-byte, 3-dimensional IDX image file into
/// `(images [count, rows·cols], rows, cols)`.
pub fn parse_idx_images(path: &str, bytes: &[u8]) -> Result<(Tensor, usize, usize), DataError> {
    check_magic(path, bytes, IDX_IMAGE_MAGIC)?;
    need(path, bytes, 16)?;
    let (count, rows, cols) = (
        be_u32(bytes, 4) as usize,
        be_u32(bytes, 8) as usize,
        be_u32(bytes, 12) as usize,
    );
    if count == 0 || rows == 0 || cols == 0 {
        return Err(DataError::InvalidParameter(format!(
            "{path}: empty IDX dimensions {count}×{rows}×{cols}"
        )));
    }
    exact_length(path, bytes, 16 + count * rows * cols)?;
    let data = bytes[16..].iter().map(|&p| pixel_to_unit(p)).collect();
    Ok((Tensor::matrix(count, rows * cols, data)?, rows, cols))
}

pub fn parse_idx_labels(path: &str, bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    check_magic(path, bytes, IDX_LABEL_MAGIC)?;
    need(path, bytes, 8)?;
    let count = be_u32(bytes, 4) as usize;
    exact_length(path, bytes, 8 + count)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Split sizes for `n` items: 80/10/10 with at least one item per split.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize), DataError> {
    check_count("number of items", n, 3)?;
    let held = (n / 10).max(1);
    Ok((n - 2 * held, held, held))
}

/// Loads IDX images (and optional labels) and splits them 80/10/10 by a seeded shuffle.
pub fn idx_load(images_path: &Path, labels_path: Option<&Path>, seed: u64) -> Result<Dataset, DataError> {
    let (images, rows, cols) = parse_idx_images(&images_path.display().to_string(), &read(images_path)?)?;
    let labels = match labels_path {
        Some(p) => {
            let labels = parse_idx_labels(&p.display().to_string(), &read(p)?)?;
            if labels.len() != images.rows() {
                return Err(DataError::CountMismatch {
                    images: images.rows(),
                    labels: labels.len(),
                });
            }
            Some(labels)
        }
        None => None,
    };
    let n = images.rows();
    let (n_train, n_valid, _) = split_sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| -> Result<Split, DataError> {
        Ok(Split {
            data: images.select_rows(idx)?,
            labels: labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        })
    };
    let n_classes = labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1));
    Ok(Dataset {
        kind: DataKind::Images {
            height: rows,
            width: cols,
        },
        train: take(&order[..n_train])?,
        valid: take(&order[n_train..n_train + n_valid])?,
        test: take(&order[n_train + n_valid..])?,
        n_classes,
        mixture: None,
    })
}

/// Serialisable description of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DatasetSpec {
    Ring {
        #[serde(default = "defaults::ring_modes")]
        n_modes: usize,
        #[serde(default = "defaults::ring_radius")]
        radius: f64,
        #[serde(default = "defaults::ring_sigma")]
        sigma: f64,
        #[serde(default = "defaults::n_per_split")]
        n_per_split: usize,
    },
    Grid {
        #[serde(default = "defaults::grid_side")]
        side: usize,
        #[serde(default = "defaults::grid_spacing")]
        spacing: f64,
        #[serde(default = "defaults::grid_sigma")]
        sigma: f64,
        #[serde(default = "defaults::n_per_split")]
        n_per_split: usize,
    },
    Shapes {
        #[serde(default = "defaults::shape_classes")]
        n_classes: usize,
        #[serde(default = "defaults::image_side")]
        image_side: usize,
        #[serde(default = "defaults::shape_count")]
        n_per_split: usize,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

mod defaults {
    pub fn ring_modes() -> usize {
        8
    }
    pub fn ring_radius() -> f64 {
        2.0
    }
    pub fn ring_sigma() -> f64 {
        0.02
    }
    pub fn grid_side() -> usize {
        5
    }
    pub fn grid_spacing() -> f64 {
        2.0
    }
    pub fn grid_sigma() -> f64 {
        0.05
    }
    pub fn n_per_split() -> usize {
        10_000
    }
    pub fn shape_classes() -> usize {
        4
    }
    pub fn image_side() -> usize {
        16
    }
    pub fn shape_count() -> usize {
        2_000
    }
}

impl DatasetSpec {
    pub fn ring() -> Self {
        Self::Ring {
            n_modes: defaults::ring_modes(),
            radius: defaults::ring_radius(),
            sigma: defaults::ring_sigma(),
            n_per_split: defaults::n_per_split(),
        }
    }

    pub fn grid() -> Self {
        Self::Grid {
            side: defaults::grid_side(),
            spacing: defaults::grid_spacing(),
            sigma: defaults::grid_sigma(),
            n_per_split: defaults::n_per_split(),
        }
    }

    pub fn shapes() -> Self {
        Self::Shapes {
            n_classes: defaults::shape_classes(),
            image_side: defaults::image_side(),
            n_per_split: defaults::shape_count(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Dataset, DataError> {
        match self {
            Self::Ring {
                n_modes,
                radius,
                sigma,
                n_per_split,
            } => ring_of_gaussians(*n_modes, *radius, *sigma, *n_per_split, seed),
            Self::Grid {
                side,
                spacing,
                sigma,
                n_per_split,
            } => grid_of_gaussians(*side, *spacing, *sigma, *n_per_split, seed),
            Self::Shapes {
                n_classes,
                image_side,
                n_per_split,
            } => procedural_shapes(*n_classes, *image_side, *n_per_split, seed),
            Self::Idx { images, labels } => idx_load(images, labels.as_deref(), seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::hash_map::DefaultHasher;
    use std::collections::HashSet;
    use std::hash::{Hash, Hasher};

    fn row_hashes(t: &Tensor) -> HashSet<u64> {
        (0..t.rows())
            .map(|i| {
                let mut h = DefaultHasher::new();
                for v in t.row(i) {
                    v.to_bits().hash(&mut h);
                }
                h.finish()
            })
            .collect()
    }

    fn assert_disjoint(d: &Dataset) {
        let (a, b, c) = (row_hashes(&d.train.data), row_hashes(&d.valid.data), row_hashes(&d.test.data));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }

    #[test]
    fn ring_geometry() {
        let m = ring_mixture(4, 1.0, 0.1).unwrap();
        let expected = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (got, want) in m.means.iter().zip(expected) {
            assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
        }
        assert!(ring_mixture(1, 1.0, 0.1).is_err());
        assert!(ring_mixture(8, 2.0, 0.0).is_err());
    }

    #[test]
    fn ring_sample_mean_near_origin() {
        let m = ring_mixture(8, 2.0, 0.02).unwrap();
        let (x, _) = m.sample(100_000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for j in 0..2 {
            let mean = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / x.rows() as f64;
            assert!(mean.abs() < 0.02, "{mean}");
        }
    }

    #[test]
    fn datasets_are_deterministic_and_disjoint() {
        for spec in [DatasetSpec::ring(), DatasetSpec::grid()] {
            let a = spec.build(4).unwrap();
            assert_eq!(a, spec.build(4).unwrap());
            assert_ne!(a.train, spec.build(5).unwrap().train);
            assert_disjoint(&a);
            assert!(a.train.data.is_finite());
        }
        let s = procedural_shapes(4, 16, 200, 9).unwrap();
        assert_eq!(s, procedural_shapes(4, 16, 200, 9).unwrap());
        assert_disjoint(&s);
    }

    #[test]
    fn grid_is_centred_with_per_mode_covariance() {
        let m = grid_mixture(5, 2.0, 0.05).unwrap();
        let cx: f64 = m.means.iter().map(|p| p[0]).sum();
        let cy: f64 = m.means.iter().map(|p| p[1]).sum();
        assert!(cx.abs() < 1e-12 && cy.abs() < 1e-12);
        assert_eq!(m.means[0], [-4.0, -4.0]);

        let (x, modes) = m.sample(50_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let pts: Vec<[f64; 2]> = (0..x.rows())
            .filter(|&i| modes[i] == 12)
            .map(|i| [x.get(i, 0), x.get(i, 1)])
            .collect();
        let n = pts.len() as f64;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for p in &pts {
            sxx += p[0] * p[0];
            syy += p[1] * p[1];
            sxy += p[0] * p[1];
        }
        let var = 0.05f64.powi(2);
        assert!((sxx / n - var).abs() < 0.15 * var);
        assert!((syy / n - var).abs() < 0.15 * var);
        assert!((sxy / n).abs() < 0.15 * var);
    }

    #[test]
    fn shapes_are_balanced_and_in_range() {
        let d = procedural_shapes(4, 16, 400, 2).unwrap();
        for split in [&d.train, &d.valid, &d.test] {
            let mut counts = [0usize; 4];
            for &y in split.labels.as_ref().unwrap() {
                counts[y] += 1;
            }
            assert_eq!(counts, [100; 4]);
            assert!(split.data.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_eq!(d.kind, DataKind::Images { height: 16, width: 16 });
        assert!(procedural_shapes(7, 16, 10, 0).is_err());
        assert!(procedural_shapes(4, 4, 10, 0).is_err());
    }

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_LABEL_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn idx_golden_bytes() {
        let pixels: Vec<u8> = (0..32).map(|i| (i * 8) as u8).collect();
        let (t, rows, cols) = parse_idx_images("golden", &idx_images(2, 4, 4, &pixels)).unwrap();
        assert_eq!((rows, cols), (4, 4));
        assert_eq!(t.shape(), &[2, 16]);
        for (i, &p) in pixels.iter().enumerate() {
            assert_eq!(t.data()[i], p as f64 / 127.5 - 1.0);
        }
        assert_eq!(pixel_to_unit(0), -1.0);
        assert_eq!(pixel_to_unit(255), 1.0);
        assert_eq!(parse_idx_labels("l", &idx_labels(&[3, 7])).unwrap(), vec![3, 7]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let good = idx_images(2, 4, 4, &[0; 32]);
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images("a", &bad), Err(DataError::BadMagic { found: 0x801, .. })));
        assert!(matches!(parse_idx_images("a", &good[..10]), Err(DataError::Truncated { .. })));
        assert!(matches!(parse_idx_images("a", &good[..40]), Err(DataError::Truncated { .. })));
        assert!(matches!(parse_idx_images("a", &good[..2]), Err(DataError::Truncated { .. })));
        assert!(matches!(parse_idx_labels("l", &good), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn split_sizes_follow_80_10_10() {
        assert_eq!(split_sizes(100).unwrap(), (80, 10, 10));
        assert_eq!(split_sizes(3).unwrap(), (1, 1, 1));
        assert!(split_sizes(2).is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let s: DatasetSpec = serde_json::from_str(r#"{"kind":"ring"}"#).unwrap();
        assert_eq!(s, DatasetSpec::ring());
        assert!(serde_json::from_str::<DatasetSpec>(r#"{"kind":"ring","modes":3}"#).is_err());
    }

    proptest! {
        #[test]
        fn pixel_map_is_affine_and_bounded(p in any::<u8>()) {
            let v = pixel_to_unit(p);
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert!(((v + 1.0) * 127.5 - p as f64).abs() < 1e-12);
        }

        #[test]
        fn mixture_weights_validate(k in 2usize..12) {
            let m = ring_mixture(k, 1.5, 0.1).unwrap();
            prop_assert!((m.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
