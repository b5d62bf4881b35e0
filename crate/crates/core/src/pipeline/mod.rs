//! Progressive transfer: LM stages over corpora ordered from general to
//! domain-specific, each starting from the previous stage's weights, then
//! classifier fine-tuning with the LM softmax frozen. Also the
//! no-pretraining ablation and a registry of runnable training arms.

mod arms;
mod finetune;
mod log;
mod plan;
mod stage;

use std::path::PathBuf;

pub use arms::{ArmOutcome, ArmRegistry, NoPretrainArm, ProgressiveArm, TrainingArm};
pub use finetune::{ablate_no_pretrain, finetune_classifier, predict, test_report, FinetuneResult, FinetuneSettings};
pub use log::{EpochRecord, TrainLog};
pub use plan::{
    prepare, run_progressive, ChainLink, ModelSettings, Prepared, ProgressiveOutcome, Role, StagePlan, StageSpec,
    VocabSettings,
};
pub use stage::{holdout, run_pretrain_stage, LmStageSettings, StageResult};

use crate::corpus::CorpusError;
use crate::metrics::MetricsError;
use crate::net::NetError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("input error: {0}")]
    Input(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("stage order violated: {0}")]
    Ordering(String),
    #[error("lm_head changed during fine-tuning at epoch {epoch}")]
    Freeze { epoch: usize },
    #[error("stage {stage} failed (last good checkpoint: {}): {source}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Stage {
        stage: String,
        last_good: Option<PathBuf>,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("unknown training arm {0:?}")]
    UnknownArm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// Disjoint tag spaces for derive_seed.
pub const TAG_SHUFFLE: u64 = 1 << 40;
pub const TAG_SPLIT: u64 = 1 << 41;
pub const TAG_HOLDOUT: u64 = 1 << 42;
pub const TAG_STAGE: u64 = 1 << 43;

/// Seed for the initial LM weights of a run; shared by both training arms.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

/// Independent stream seed for `tag` under `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
