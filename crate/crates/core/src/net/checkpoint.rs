//! Checkpoint file: a magic/version line, one JSON header line listing every
//! parameter blob, then the raw little-endian `f32` blobs back to back.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numkit::{Dense2D, ParamSet, Parameter};

use super::{attach_classifier_head, ClassifierNetwork, LmNetwork, ModelConfig, NetError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "BSCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lm,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    config: ModelConfig,
    vocab_hash: String,
    lm_head_frozen: bool,
    blob_bytes: usize,
    params: Vec<BlobEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointModel {
    Lm(LmNetwork<f32>),
    Classifier(ClassifierNetwork<f32>),
}

impl CheckpointModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Lm(_) => ModelKind::Lm,
            Self::Classifier(_) => ModelKind::Classifier,
        }
    }

    /// The language model, dropping any class head.
    pub fn into_lm(self) -> LmNetwork<f32> {
        match self {
            Self::Lm(lm) => lm,
            Self::Classifier(c) => {
                let mut lm = c.backbone;
                lm.config.num_classes = 0;
                lm
            }
        }
    }

    fn config(&self) -> ModelConfig {
        match self {
            Self::Lm(lm) => lm.config,
            Self::Classifier(c) => c.backbone.config,
        }
    }

    fn frozen(&self) -> bool {
        matches!(self, Self::Classifier(c) if c.lm_head_frozen)
    }

    fn all_params(&self) -> Vec<&Parameter<f32>> {
        match self {
            Self::Lm(lm) => lm.params(),
            Self::Classifier(c) => {
                let mut v = c.backbone.params();
                v.push(&c.class_linear);
                v.push(&c.class_bias);
                v
            }
        }
    }

    fn all_params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        match self {
            Self::Lm(lm) => lm.params_mut(),
            Self::Classifier(c) => {
                let mut v = c.backbone.params_mut();
                v.push(&mut c.class_linear);
                v.push(&mut c.class_bias);
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_hash: String,
    pub model: CheckpointModel,
}

impl Checkpoint {
    pub fn new(model: CheckpointModel, vocab_hash: impl Into<String>) -> Self {
        Self { format_version: FORMAT_VERSION, vocab_hash: vocab_hash.into(), model }
    }

    pub fn config(&self) -> ModelConfig {
        self.model.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.all_params();
        let mut entries = Vec::with_capacity(params.len());
        let mut offset = 0;
        for p in &params {
            let length = p.len() * 4;
            entries.push(BlobEntry { name: p.name.clone(), rows: p.shape().0, cols: p.shape().1, offset, length });
            offset += length;
        }
        let header = Header {
            format_version: self.format_version,
            kind: self.model.kind(),
            config: self.model.config(),
            vocab_hash: self.vocab_hash.clone(),
            lm_head_frozen: self.model.frozen(),
            blob_bytes: offset,
            params: entries,
        };
        let mut out = format!("{MAGIC} {}\n", self.format_version).into_bytes();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for p in params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let (magic, rest) = split_line(bytes).ok_or_else(|| NetError::Format("missing version line".into()))?;
        let magic = std::str::from_utf8(magic).map_err(|_| NetError::Format("version line is not text".into()))?;
        let version: u32 = magic
            .strip_prefix(MAGIC)
            .map(str::trim)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| NetError::Format(format!("bad magic line {magic:?}")))?;
        if version != FORMAT_VERSION {
            return Err(NetError::Version { found: version, expected: FORMAT_VERSION });
        }
        let (head, blob) = split_line(rest).ok_or_else(|| NetError::Format("missing header line".into()))?;
        let header: Header =
            serde_json::from_slice(head).map_err(|e| NetError::Format(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(NetError::Version { found: header.format_version, expected: FORMAT_VERSION });
        }
        if header.blob_bytes != blob.len() {
            return Err(NetError::Format(format!(
                "header declares {} blob bytes, file holds {}",
                header.blob_bytes,
                blob.len()
            )));
        }
        header.config.validate()?;

        let lm = LmNetwork::<f32>::new(header.config, 0)?;
        let mut model = match header.kind {
            ModelKind::Lm => CheckpointModel::Lm(lm),
            ModelKind::Classifier => {
                let mut c = attach_classifier_head(lm, header.config.num_classes)?;
                c.lm_head_frozen = header.lm_head_frozen;
                CheckpointModel::Classifier(c)
            }
        };
        let entries: HashMap<&str, &BlobEntry> = header.params.iter().map(|e| (e.name.as_str(), e)).collect();
        let targets = model.all_params_mut();
        if targets.len() != entries.len() {
            return Err(NetError::Format(format!("expected {} blobs, header lists {}", targets.len(), entries.len())));
        }
        for p in targets {
            let e = entries.get(p.name.as_str()).ok_or_else(|| NetError::Format(format!("missing blob {}", p.name)))?;
            if (e.rows, e.cols) != p.shape() || e.length != p.len() * 4 {
                return Err(NetError::Format(format!("blob {} has shape {}x{}", e.name, e.rows, e.cols)));
            }
            let raw = blob
                .get(e.offset..e.offset + e.length)
                .ok_or_else(|| NetError::Format(format!("blob {} exceeds file", e.name)))?;
            let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            *p = Parameter::new(p.name.clone(), Dense2D::from_vec(e.rows, e.cols, vals)?);
        }
        Ok(Self { format_version: version, vocab_hash: header.vocab_hash, model })
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

/// Short content id of checkpoint bytes.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Writes the checkpoint and returns its content id.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<String, NetError> {
    let bytes = ckpt.to_bytes();
    fs::write(path, &bytes)?;
    Ok(checkpoint_id(&bytes))
}

/// Reads a checkpoint, refusing it unless it was written against `expected_vocab`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_vocab: &str) -> Result<Checkpoint, NetError> {
    let ckpt = Checkpoint::from_bytes(&fs::read(path)?)?;
    if ckpt.vocab_hash != expected_vocab {
        return Err(NetError::Compatibility { found: ckpt.vocab_hash, expected: expected_vocab.to_string() });
    }
    Ok(ckpt)
}

pub fn load_lm(path: impl AsRef<Path>, expected_vocab: &str) -> Result<LmNetwork<f32>, NetError> {
    Ok(load_checkpoint(path, expected_vocab)?.model.into_lm())
}

pub fn load_classifier(path: impl AsRef<Path>, expected_vocab: &str) -> Result<ClassifierNetwork<f32>, NetError> {
    match load_checkpoint(path, expected_vocab)?.model {
        CheckpointModel::Classifier(c) => Ok(c),
        CheckpointModel::Lm(_) => Err(NetError::Format("checkpoint holds a language model, not a classifier".into())),
    }
}
