use std::borrow::Cow;
use std::hash::Hasher;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::index;

use super::dataset::{load_dataset, synthesize_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::{mlp_backward, mlp_forward, Activation, NetSpec};
use crate::rng::RngStream;
use crate::tensor::{ParamSet, Tensor};

/// Optimizee problem: data, network, batch size and augmentation scale τ.
///
/// The network is evaluated at `τ·θ` for stored parameters `θ`.
#[derive(Clone, Debug)]
pub struct TaskInstance {
    id: String,
    dataset: Arc<Dataset>,
    net: NetSpec,
    batch_size: usize,
    tau: f64,
}

impl TaskInstance {
    pub fn new(id: impl Into<String>, dataset: Arc<Dataset>, net: NetSpec, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > dataset.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} must be in 1..={}",
                dataset.len()
            )));
        }
        if net.input_width() != dataset.feature_dim() || net.output_width() != dataset.classes() {
            return Err(Error::Shape(format!(
                "network {:?} does not fit {}-dim data with {} classes",
                net.widths(),
                dataset.feature_dim(),
                dataset.classes()
            )));
        }
        Ok(Self { id: id.into(), dataset, net, batch_size, tau: 1.0 })
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self { tau, ..self.clone() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn net(&self) -> &NetSpec {
        &self.net
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("augmentation scale must be positive, got {tau}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub inputs: Tensor,
    pub labels: Vec<u32>,
}

impl Batch {
    fn gather(ds: &Dataset, indices: Vec<usize>) -> Self {
        let d = ds.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            data.extend_from_slice(ds.row(i));
            labels.push(ds.labels()[i]);
        }
        let inputs = Tensor::matrix(indices.len(), d, data).expect("nonempty batch");
        Self { indices, inputs, labels }
    }

    /// FNV-1a hash of the sampled row indices.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        for &i in &self.indices {
            h.write_u64(i as u64);
        }
        h.finish()
    }
}

/// Uniform rows with replacement.
pub fn sample_batch(task: &TaskInstance, rng: &RngStream) -> Batch {
    let n = task.dataset.len();
    let mut g = rng.generator();
    let indices = (0..task.batch_size).map(|_| g.below(n)).collect();
    Batch::gather(&task.dataset, indices)
}

/// Distinct rows; with `batch_size == len` this is a permutation of the dataset.
pub fn sample_batch_without_replacement(task: &TaskInstance, rng: &RngStream) -> Batch {
    let mut g = rng.generator();
    let indices = index::sample(g.inner(), task.dataset.len(), task.batch_size).into_vec();
    Batch::gather(&task.dataset, indices)
}

#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub grads: ParamSet,
    /// Loss or gradient was NaN/Inf.
    pub diverged: bool,
}

fn cross_entropy(logits: &Tensor, labels: &[u32]) -> (f64, Tensor) {
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    for (r, (row, &y)) in logits.data().chunks_exact(classes).zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y as usize];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gi, z) in g.iter_mut().zip(row) {
            *gi = (z - lse).exp() / batch as f64;
        }
        g[y as usize] -= 1.0 / batch as f64;
    }
    (total / batch as f64, Tensor::matrix(batch, classes, grad).expect("shape"))
}

/// Mean cross-entropy at `τ·θ` and its gradient with respect to the stored `θ`.
pub fn loss_and_grad(task: &TaskInstance, params: &ParamSet, batch: &Batch) -> Result<LossEval> {
    let effective: Cow<ParamSet> = if task.tau == 1.0 {
        Cow::Borrowed(params)
    } else {
        Cow::Owned(params.scaled(task.tau))
    };
    let (logits, cache) = mlp_forward(&task.net, &effective, &batch.inputs)?;
    let (loss, dlogits) = cross_entropy(&logits, &batch.labels);
    let (mut grads, _) = mlp_backward(&task.net, &effective, &cache, &dlogits)?;
    if task.tau != 1.0 {
        grads = grads.scaled(task.tau);
    }
    let diverged = !loss.is_finite() || !grads.all_finite();
    Ok(LossEval { loss, grads, diverged })
}

/// Loss only, at `τ·θ`.
pub fn loss_value(task: &TaskInstance, params: &ParamSet, batch: &Batch) -> Result<f64> {
    let effective: Cow<ParamSet> = if task.tau == 1.0 {
        Cow::Borrowed(params)
    } else {
        Cow::Owned(params.scaled(task.tau))
    };
    let (logits, _) = mlp_forward(&task.net, &effective, &batch.inputs)?;
    Ok(cross_entropy(&logits, &batch.labels).0)
}

/// Initial parameters for an augmented task: `θ₀ / τ`, so `τ·(θ₀/τ)` reproduces
/// the unaugmented network at initialization.
pub fn augment_init(theta0: &ParamSet, tau: f64) -> Result<ParamSet> {
    check_tau(tau)?;
    let mut out = theta0.clone();
    for (_, t) in out.iter_mut() {
        for v in t.data_mut() {
            *v /= tau;
        }
    }
    Ok(out)
}

/// τ = 10^u with u uniform on [−3, 3].
pub fn sample_tau(rng: &RngStream) -> f64 {
    10f64.powf(rng.generator().uniform_range(-3.0, 3.0))
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec, seed: u64 },
    File(PathBuf),
}

/// Declarative description of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub name: String,
    pub source: DataSource,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
}

impl TaskConfig {
    pub fn build(&self) -> Result<TaskInstance> {
        let dataset = match &self.source {
            DataSource::Synthetic { spec, seed } => {
                synthesize_dataset(*spec, &RngStream::new(*seed).child("dataset", 0))?
            }
            DataSource::File(path) => load_dataset(path)?,
        };
        let mut widths = vec![dataset.feature_dim()];
        widths.extend(&self.hidden);
        widths.push(dataset.classes());
        let net = NetSpec::mlp(widths, self.activation)?;
        TaskInstance::new(self.name.clone(), Arc::new(dataset), net, self.batch_size)
    }
}

pub const IMAGE_DIM: usize = 64;
pub const META_BATCH: usize = 64;
pub const META_HIDDEN: usize = 32;
/// Examples per synthetic dataset.
pub const SYNTHETIC_EXAMPLES: usize = 8192;

fn synthetic(classes: usize, examples: usize, margin: f64, seed: u64) -> DataSource {
    DataSource::Synthetic { spec: SyntheticSpec { classes, dim: IMAGE_DIM, examples, margin }, seed }
}

/// Meta-training task: 64-dim inputs, one hidden ReLU layer of 32 units, batch 64.
pub fn meta_train_task(name: impl Into<String>, source: DataSource) -> TaskConfig {
    TaskConfig {
        name: name.into(),
        source,
        hidden: vec![META_HIDDEN],
        activation: Activation::Relu,
        batch_size: META_BATCH,
    }
}

/// The default four synthetic stand-ins for the 8×8 image datasets, ordered
/// from easiest to hardest.
pub fn default_meta_train_configs(count: usize, seed: u64) -> Vec<TaskConfig> {
    const NAMES: [&str; 4] = ["synth_digits", "synth_fashion", "synth_house_numbers", "synth_objects"];
    const MARGINS: [f64; 4] = [3.0, 2.5, 2.0, 1.5];
    (0..count)
        .map(|i| {
            let name = match NAMES.get(i) {
                Some(n) => n.to_string(),
                None => format!("synth_{i}"),
            };
            let margin = MARGINS[i % MARGINS.len()];
            meta_train_task(name, synthetic(10, SYNTHETIC_EXAMPLES, margin, seed.wrapping_add(i as u64)))
        })
        .collect()
}

/// Held-out desk-scale tasks: deeper MLPs, Tanh variants, other widths and batch sizes.
pub fn default_heldout_configs(seed: u64) -> Vec<TaskConfig> {
    let s = |i: u64| seed.wrapping_add(1000 + i);
    vec![
        TaskConfig {
            name: "mlp2_relu".into(),
            source: synthetic(10, SYNTHETIC_EXAMPLES, 3.0, s(0)),
            hidden: vec![64, 32],
            activation: Activation::Relu,
            batch_size: 64,
        },
        TaskConfig {
            name: "mlp3_tanh".into(),
            source: synthetic(10, SYNTHETIC_EXAMPLES, 3.0, s(1)),
            hidden: vec![32, 32, 32],
            activation: Activation::Tanh,
            batch_size: 32,
        },
        TaskConfig {
            name: "mlp_wide_relu".into(),
            source: synthetic(10, SYNTHETIC_EXAMPLES, 2.5, s(2)),
            hidden: vec![128],
            activation: Activation::Relu,
            batch_size: 128,
        },
        TaskConfig {
            name: "mlp_tanh".into(),
            source: synthetic(10, SYNTHETIC_EXAMPLES, 3.5, s(3)),
            hidden: vec![32],
            activation: Activation::Tanh,
            batch_size: 64,
        },
        TaskConfig {
            name: "mlp2_relu_5class".into(),
            source: synthetic(5, SYNTHETIC_EXAMPLES / 2, 2.0, s(4)),
            hidden: vec![48, 48],
            activation: Activation::Relu,
            batch_size: 16,
        },
    ]
}

/// Builds a suite; every entry must share the meta-training architecture family.
pub fn make_meta_train_suite(configs: &[TaskConfig]) -> Result<Vec<TaskInstance>> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("task suite is empty".into()));
    }
    configs.iter().map(TaskConfig::build).collect()
}
