//! The learned optimizer: accumulator state, per-parameter features, the MLP
//! update rule, the LSTM step-size scheduler and their composition.
//!
//! One step runs, in order: fold the gradient and loss into the accumulators;
//! compute the global scale η from progress and loss features; for every
//! tensor build features, evaluate the rule MLP to get direction `d` and
//! log-magnitude `m`, and subtract `η·λ₁·d·exp(λ₂·m)·ν(p)`.

mod celo;
mod features;
mod rule;
mod scheduler;
mod state;

pub use celo::{make_variant, Celo, CeloParams, CeloStep, Variant, RULE_PREFIX, SCHEDULER_PREFIX};
pub use features::{per_param_features, time_embeddings, FeatureMatrix};
pub use rule::{init_rule, rule_heads, rule_net, rule_step, tensor_scale, NormKind, NORM_FLOOR};
pub use scheduler::{
    build_scheduler_input, init_scheduler, lstm_spec, scheduler_step, scheduler_variant, SchedulerForm,
    SchedulerInput, SchedulerOutput, LINEAR_CLIP_MAX, PROJ_BIAS, PROJ_WEIGHT,
};
pub use state::{CeloState, Factored, TensorAccumulators};

pub const MOMENTUM_DECAYS: [f64; 3] = [0.9, 0.99, 0.999];
pub const SECOND_MOMENT_DECAY: f64 = 0.999;
pub const LOSS_EMA_DECAYS: [f64; 4] = [0.5, 0.9, 0.99, 0.999];
pub const FEATURE_TIMESCALES: [f64; 8] = [10.0, 30.0, 100.0, 300.0, 1e3, 3e3, 1e4, 3e4];
pub const PROGRESS_TIMESCALES: [f64; 3] = [100.0, 1e3, 1e4];

/// Normalized per-parameter feature columns (before time embeddings).
pub const PER_PARAM_FEATURES: usize = 11;
pub const RULE_INPUT: usize = PER_PARAM_FEATURES + FEATURE_TIMESCALES.len();
pub const RULE_HIDDEN: usize = 32;
pub const SCHEDULER_INPUT: usize = 1 + PROGRESS_TIMESCALES.len() + LOSS_EMA_DECAYS.len() + 1;
pub const SCHEDULER_HIDDEN: usize = 64;
/// Base learning rate of the Adam-rule ablation.
pub const ADAM_RULE_LR: f64 = 1e-3;
