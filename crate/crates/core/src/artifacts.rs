//! On-disk formats: binary checkpoints, JSON run configs, PPM grids and point CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};
use crate::data::DataKind;
use crate::networks::{NetworkError, NetworkParams, Role};
use crate::trainers::{TrainError, TrainedModel, TrainingConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AGAN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error("config: {0}")]
    Config(String),
    #[error("grid {cols}x{rows} cannot hold {n} images")]
    Grid { cols: usize, rows: usize, n: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: TrainingConfig,
    data: DataKind,
    iteration: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serialises a model; the result depends only on the model.
pub fn checkpoint_bytes(model: &TrainedModel) -> Result<Vec<u8>, ArtifactError> {
    let meta = serde_json::to_vec(&CheckpointMeta {
        config: model.config.clone(),
        data: model.kind,
        iteration: model.iteration,
    })
    .map_err(|e| ArtifactError::Meta(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, meta.len());
    out.extend_from_slice(&meta);
    put_u32(&mut out, model.networks.len());
    for net in &model.networks {
        let name = net.role().name().as_bytes();
        put_u32(&mut out, name.len());
        out.extend_from_slice(name);
        let tensors = net.tensors();
        put_u32(&mut out, tensors.len());
        for t in tensors {
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(ArtifactError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ArtifactError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TrainedModel, ArtifactError> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ArtifactError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(ArtifactError::Version(version));
    }
    let meta_len = r.u32()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| ArtifactError::Meta(e.to_string()))?;
    let count = r.u32()?;
    let mut networks = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| ArtifactError::Meta(e.to_string()))?;
        let role: Role = name.parse()?;
        let n_tensors = r.u32()?;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or(ArtifactError::Truncated(bytes.len()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        let spec = meta.config.network_spec(role, meta.data);
        networks.push(NetworkParams::from_tensors(role, spec, tensors)?);
    }
    if r.at != bytes.len() {
        return Err(ArtifactError::Trailing(bytes.len() - r.at));
    }
    let expected = meta.config.algorithm.roles();
    if networks.len() != expected.len() || networks.iter().zip(expected).any(|(n, r)| n.role() != *r) {
        return Err(ArtifactError::Meta(format!(
            "networks do not match a {} model",
            meta.config.algorithm
        )));
    }
    Ok(TrainedModel {
        config: meta.config,
        kind: meta.data,
        iteration: meta.iteration,
        networks,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), ArtifactError> {
    fs::write(path, checkpoint_bytes(model)?).map_err(io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, ArtifactError> {
    checkpoint_from_bytes(&fs::read(path).map_err(io(path))?)
}

/// A training config as written on disk: every [`TrainingConfig`] key plus
/// an optional `out_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfigFile {
    pub config: TrainingConfig,
    pub out_dir: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, ArtifactError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ArtifactError::Config(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| ArtifactError::Config("top level must be an object".into()))?;
        let out_dir = match obj.remove("out_dir") {
            None => None,
            Some(serde_json::Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => return Err(ArtifactError::Config(format!("out_dir must be a string, got {other}"))),
        };
        let config: TrainingConfig =
            serde_json::from_value(value).map_err(|e| ArtifactError::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self { config, out_dir })
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        Self::parse(&fs::read_to_string(path).map_err(io(path))?)
    }
}

/// Maps a pixel in [-1, 1] to a byte; -1 → 0 and +1 → 255.
pub fn pixel_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Binary PPM (P6) tiling rows of `images` into a `cols × rows` grid of
/// greyscale `height × width` tiles. Unused cells are black.
pub fn ppm_grid(
    images: &Tensor,
    height: usize,
    width: usize,
    cols: usize,
    rows: usize,
) -> Result<Vec<u8>, ArtifactError> {
    let n = images.rows();
    if n > cols * rows || cols == 0 || rows == 0 {
        return Err(ArtifactError::Grid { cols, rows, n });
    }
    let (pw, ph) = (cols * width, rows * height);
    let mut out = format!("P6\n{pw} {ph}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + pw * ph * 3, 0);
    for k in 0..n {
        let img = images.row(k);
        let (gr, gc) = (k / cols, k % cols);
        for r in 0..height {
            for c in 0..width {
                let b = pixel_byte(img[r * width + c]);
                let at = header + ((gr * height + r) * pw + gc * width + c) * 3;
                out[at..at + 3].copy_from_slice(&[b, b, b]);
            }
        }
    }
    Ok(out)
}

/// Orders images so that a grid with `2 · cols` columns shows the data on
/// the left half and the matching reconstructions on the right half.
pub fn paired_grid_rows(data: &Tensor, recon: &Tensor, cols: usize) -> Result<Tensor, ArtifactError> {
    if data.shape() != recon.shape() || cols == 0 {
        return Err(ArtifactError::Grid {
            cols,
            rows: 0,
            n: data.rows(),
        });
    }
    let n = data.rows();
    let blank = vec![-1.0; data.cols()];
    let mut rows = Vec::new();
    for start in (0..n).step_by(cols) {
        for src in [data, recon] {
            for i in start..start + cols {
                rows.push(if i < n { src.row(i).to_vec() } else { blank.clone() });
            }
        }
    }
    Ok(Tensor::from_rows(&rows)?)
}

/// `x,y` CSV of 2D points.
pub fn points_csv(points: &Tensor) -> String {
    let header = (0..points.cols()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    let mut out = header + "\n";
    for i in 0..points.rows() {
        let line: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainers::Algorithm;

    fn model(alg: Algorithm) -> TrainedModel {
        let mut c = TrainingConfig::new(alg);
        c.seed = Some(4);
        TrainedModel::initialize(&c, DataKind::Points2d).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for alg in Algorithm::ALL {
            let mut m = model(alg);
            m.iteration = 123;
            m.networks[0].tensors_mut()[0].data_mut()[0] = -0.0;
            m.networks[0].tensors_mut()[0].data_mut()[1] = 1e-310;
            let bytes = checkpoint_bytes(&m).unwrap();
            let back = checkpoint_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
            let bits = |m: &TrainedModel| -> Vec<u64> {
                m.networks.iter().flat_map(|n| n.tensors().into_iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>()).collect()
            };
            assert_eq!(bits(&back), bits(&m));
        }
    }

    #[test]
    fn checkpoint_header_layout() {
        let bytes = checkpoint_bytes(&model(Algorithm::Gan)).unwrap();
        assert_eq!(&bytes[..4], b"AGAN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[12..12 + meta_len]).unwrap();
        assert_eq!(meta["config"]["algorithm"], "gan");
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = checkpoint_bytes(&model(Algorithm::Vae)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bad), Err(ArtifactError::BadMagic(_))));
        assert!(matches!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]), Err(ArtifactError::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(checkpoint_from_bytes(&long), Err(ArtifactError::Trailing(1))));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(checkpoint_from_bytes(&v2), Err(ArtifactError::Version(2))));
    }

    #[test]
    fn run_config_rejects_unknown_and_bad_values() {
        let ok = RunConfigFile::parse(r#"{"algorithm":"alpha_gan","max_iter":10,"out_dir":"runs/a"}"#).unwrap();
        assert_eq!(ok.out_dir, Some(PathBuf::from("runs/a")));
        assert_eq!(ok.config.max_iter, 10);
        let unknown = RunConfigFile::parse(r#"{"algorithm":"gan","learning_rate":0.1}"#).unwrap_err();
        assert!(unknown.to_string().contains("learning_rate"), "{unknown}");
        let neg = RunConfigFile::parse(r#"{"algorithm":"gan","lr_generator":-1.0}"#).unwrap_err();
        assert!(neg.to_string().contains("lr_generator"), "{neg}");
        assert!(RunConfigFile::parse(r#"{"max_iter":10}"#).is_err());
    }

    #[test]
    fn ppm_grid_dimensions_and_endpoints() {
        let images = Tensor::full(vec![64, 256], 1.0).unwrap();
        let ppm = ppm_grid(&images, 16, 16, 8, 8).unwrap();
        let header = b"P6\n128 128\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert_eq!(ppm.len(), header.len() + 128 * 128 * 3);
        assert!(ppm[header.len()..].iter().all(|&b| b == 255));
        assert_eq!(pixel_byte(-1.0), 0);
        assert_eq!(pixel_byte(1.0), 255);
        assert!(matches!(ppm_grid(&images, 16, 16, 7, 9), Err(ArtifactError::Grid { .. })));
    }

    #[test]
    fn paired_grid_puts_data_left() {
        let data = Tensor::matrix(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let recon = Tensor::matrix(3, 1, vec![0.5, 0.6, 0.7]).unwrap();
        let p = paired_grid_rows(&data, &recon, 2).unwrap();
        assert_eq!(p.data(), &[0.1, 0.2, 0.5, 0.6, 0.3, -1.0, 0.7, -1.0]);
    }

    #[test]
    fn points_csv_format() {
        let p = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        assert_eq!(points_csv(&p), "x0,x1\n0.5,-1\n2,0.25\n");
    }
}
