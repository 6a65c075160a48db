//! Two-stage training: masked pretraining, cascading finetuning, freezing,
//! evaluation, and checkpoint persistence.

mod checkpoint;
mod config;
mod eval;
mod loops;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, Stage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{apply_freeze_policy, FinetuneConfig, FreezePolicy, PretrainConfig};
pub use eval::{evaluate, predict, EvalReport};
pub use loops::{finetune, pretrain, MetricsRecord};
