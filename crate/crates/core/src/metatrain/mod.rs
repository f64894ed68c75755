//! Meta-training of Celo: PES gradient estimates over truncated unrolls, the
//! AdamW meta-optimizer, the two-stage pipeline and checkpoints.

mod checkpoint;
mod meta_opt;
mod pes;
mod stage;

pub use checkpoint::{
    checkpoint_from_tensors, checkpoint_load, checkpoint_save, checkpoint_tensors, decode_checkpoint,
    encode_checkpoint, load_params, load_tensors, params_from_tensors, resume_stage, save_params, save_tensors,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use meta_opt::{adamw_meta_step, AdamWConfig, AdamWState, MetaStepInfo};
pub use pes::{
    chain_hash, perturbed, pes_reset, pes_truncation, PairOutcome, ParticlePair, PesConfig, TruncationOutcome,
    Unrolled, Unroller,
};
pub use stage::{
    log_csv, pair_streams, run_stage, stage_budgets, stage_stream, thread_pool, window_means, CeloEpisode,
    CeloPair, CeloTrajectory, CeloUnroller, LogRow, MetaState, StageId, StagePlan, StageRun,
    DEFAULT_RULE_FRACTION, LOG_HEADER,
};
