//! Classification datasets: synthesis and the `CELODATA` file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "CELODATA"
//! version      u32      1
//! num_examples u32
//! feature_dim  u32
//! class_count  u32
//! inputs       num_examples × feature_dim f32, row-major
//! labels       num_examples u16
//! ```

use std::hash::Hasher;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"CELODATA";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("label out of range: example {index} has label {label} but class count is {classes}")]
    LabelOutOfRange { index: usize, label: u32, classes: u32 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<u32>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<u32>, classes: usize) -> Result<Self> {
        let n = match inputs.shape() {
            [n, _] => *n,
            s => return Err(Error::Shape(format!("dataset inputs must be 2-D, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} examples", labels.len())));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(DatasetError::LabelOutOfRange { index: i, label: l, classes: classes as u32 }.into());
        }
        Ok(Self { inputs, labels, classes })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.inputs.data()[i * d..(i + 1) * d]
    }
}

/// Gaussian class-mean mixture.
///
/// Each class mean is a random direction of length `margin`; examples are the
/// class mean plus unit isotropic noise. Labels cycle through the classes so
/// every class appears once `examples >= classes`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub examples: usize,
    pub margin: f64,
}

pub fn synthesize_dataset(spec: SyntheticSpec, rng: &RngStream) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::InvalidArgument(format!("classes must be ≥ 2, got {}", spec.classes)));
    }
    if spec.examples == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs examples and features".into()));
    }
    if !(spec.margin.is_finite() && spec.margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad margin {}", spec.margin)));
    }
    let mut mean_rng = rng.child("class_means", 0).generator();
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let dir = mean_rng.normals(spec.dim, 1.0);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.into_iter().map(|v| spec.margin * v / norm).collect()
        })
        .collect();
    let mut noise = rng.child("noise", 0).generator();
    let mut data = Vec::with_capacity(spec.examples * spec.dim);
    let mut labels = Vec::with_capacity(spec.examples);
    for i in 0..spec.examples {
        let class = i % spec.classes;
        labels.push(class as u32);
        data.extend(means[class].iter().map(|m| m + noise.normal()));
    }
    Dataset::new(Tensor::matrix(spec.examples, spec.dim, data)?, labels, spec.classes)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let n = ds.len();
    let d = ds.feature_dim();
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4 + n * 2);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(ds.classes as u32).to_le_bytes());
    for &v in ds.inputs.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in &ds.labels {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a `CELODATA` buffer. Never panics on malformed input.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    if bytes.len() < HEADER_LEN {
        return Err(DatasetError::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(DatasetError::MalformedHeader("bad magic".into()));
    }
    let version = read_u32(bytes, 8);
    if version != DATASET_VERSION {
        return Err(DatasetError::MalformedHeader(format!("unsupported version {version}")));
    }
    let n = read_u32(bytes, 12) as usize;
    let d = read_u32(bytes, 16) as usize;
    let classes = read_u32(bytes, 20);
    if n == 0 || d == 0 {
        return Err(DatasetError::MalformedHeader(format!("empty dataset ({n} × {d})")));
    }
    if classes < 2 || classes > u16::MAX as u32 + 1 {
        return Err(DatasetError::MalformedHeader(format!("class count {classes}")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|x| x.checked_add(n * 2))
        .ok_or_else(|| DatasetError::MalformedHeader("payload size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(DatasetError::TruncatedPayload { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(DatasetError::TrailingBytes(payload.len() - expected));
    }
    let (inputs, labels) = payload.split_at(n * d * 4);
    let values: Vec<f64> = inputs
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let labels: Vec<u32> = labels
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")) as u32)
        .collect();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(DatasetError::LabelOutOfRange { index, label, classes });
    }
    let inputs = Tensor::matrix(n, d, values).expect("sizes checked");
    Ok(Dataset { inputs, labels, classes: classes as usize })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let ds = decode_dataset(&bytes)?;
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(&bytes);
    log::info!(
        "loaded dataset {} ({} × {}, {} classes, fnv1a {:016x})",
        path.display(),
        ds.len(),
        ds.feature_dim(),
        ds.classes(),
        hasher.finish()
    );
    Ok(ds)
}
