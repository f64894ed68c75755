//! Optimizee tasks: datasets, batches, cross-entropy loss/gradient and the
//! parameter-scale (τ) task augmentation.

mod dataset;
mod task;

pub use dataset::{
    decode_dataset, encode_dataset, load_dataset, save_dataset, synthesize_dataset, Dataset, DatasetError,
    SyntheticSpec, DATASET_MAGIC, DATASET_VERSION,
};
pub use task::{
    augment_init, default_heldout_configs, default_meta_train_configs, loss_and_grad, loss_value,
    make_meta_train_suite, meta_train_task, sample_batch, sample_batch_without_replacement, sample_tau, Batch,
    DataSource, LossEval, TaskConfig, TaskInstance,
};
