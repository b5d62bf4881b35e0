//! Embedding, three stacked LSTM layers and a vocabulary softmax head, plus
//! the classifier variant that appends a linear layer and a class softmax.

mod checkpoint;
mod classifier;
mod lm;
mod lstm;

pub use checkpoint::{
    checkpoint_id, load_checkpoint, load_classifier, load_lm, save_checkpoint, Checkpoint, CheckpointModel, ModelKind,
    FORMAT_VERSION,
};
pub use classifier::{attach_classifier_head, ClassifierNetwork, ClsOutput};
pub use lm::{LmNetwork, LmOutput};
pub use lstm::{LstmLayer, LstmState};

use serde::{Deserialize, Serialize};

use crate::numkit::NumError;

pub const NUM_LAYERS: usize = 3;
pub const GRAD_CLIP_NORM: f64 = 5.0;
/// Index used to pad ragged batches; matches the vocabulary's PAD special.
pub const PAD_INDEX: usize = 0;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("token {token} at position {position} is outside the vocabulary of {vocab}")]
    TokenIndex { token: usize, position: usize, vocab: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("backward called without a recorded forward pass")]
    State,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint vocabulary {found} does not match the supplied vocabulary {expected}")]
    Compatibility { found: String, expected: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_keep: f64,
    pub bptt_window: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            hidden_dim: 128,
            num_layers: NUM_LAYERS,
            dropout_keep: 0.5,
            bptt_window: 32,
            num_classes: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.num_layers != NUM_LAYERS {
            return Err(NetError::Config(format!("num_layers must be {NUM_LAYERS}, got {}", self.num_layers)));
        }
        if self.vocab_size < 4 {
            return Err(NetError::Config(format!("vocab_size {} leaves no room for specials", self.vocab_size)));
        }
        if self.num_classes != 0 && !(2..=64).contains(&self.num_classes) {
            return Err(NetError::Config(format!("num_classes {} not in {{0}} or [2, 64]", self.num_classes)));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(NetError::Config(format!("dropout_keep {} not in (0, 1]", self.dropout_keep)));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.bptt_window == 0 {
            return Err(NetError::Config("embed_dim, hidden_dim and bptt_window must be positive".into()));
        }
        Ok(())
    }
}

/// Forward-pass mode. Training records activations for backprop and applies
/// inverted dropout between LSTM layers with masks drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Ragged token rows padded to a time-major `steps x batch` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    tokens: Vec<usize>,
    batch: usize,
    steps: usize,
    lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn from_rows<R: AsRef<[usize]>>(rows: &[R]) -> Result<Self, NetError> {
        if rows.is_empty() {
            return Err(NetError::Input("empty batch".into()));
        }
        let lengths: Vec<usize> = rows.iter().map(|r| r.as_ref().len()).collect();
        if lengths.contains(&0) {
            return Err(NetError::Input("empty token sequence".into()));
        }
        let batch = rows.len();
        let steps = *lengths.iter().max().unwrap_or(&0);
        let mut tokens = vec![PAD_INDEX; batch * steps];
        for (b, row) in rows.iter().enumerate() {
            for (t, &tok) in row.as_ref().iter().enumerate() {
                tokens[t * batch + b] = tok;
            }
        }
        Ok(Self { tokens, batch, steps, lengths })
    }

    pub fn single(tokens: &[usize]) -> Result<Self, NetError> {
        Self::from_rows(&[tokens])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    #[inline]
    pub fn get(&self, t: usize, b: usize) -> usize {
        self.tokens[t * self.batch + b]
    }

    /// Whether time-major row `t * batch + b` holds a real token.
    #[inline]
    pub fn is_valid(&self, row: usize) -> bool {
        let (t, b) = (row / self.batch, row % self.batch);
        t < self.lengths[b]
    }

    pub fn valid_count(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub(crate) fn time_major(&self) -> &[usize] {
        &self.tokens
    }

    pub(crate) fn check_vocab(&self, vocab: usize) -> Result<(), NetError> {
        for (row, &tok) in self.tokens.iter().enumerate() {
            if tok >= vocab && self.is_valid(row) {
                return Err(NetError::TokenIndex { token: tok, position: row / self.batch, vocab });
            }
        }
        Ok(())
    }
}
