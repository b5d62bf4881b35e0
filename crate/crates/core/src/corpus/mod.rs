//! Text pipeline: sentence splitting, tokenization, vocabulary, labeled
//! datasets with stratified splits, batching, and the synthetic generator.

mod batch;
mod dataset;
mod sentence;
mod synth;
mod token;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{make_cls_batches, make_lm_batches, ClsBatch, LmBatch, LmBatches};
pub use dataset::{
    encode_dataset, make_splits, read_jsonl, read_lines, validate_dataset, write_jsonl, DatasetSplit, EncodedSentence,
    LabeledSentence, SplitRatios, ValidationReport,
};
pub use sentence::{split_sentences, split_spans, SentenceSpan, ABBREVIATIONS};
pub use synth::{gen_synthetic, oracle_label, Lexicon, SyntheticCorpus, SyntheticSpec};
pub use token::{tokenize, NUM_TOKEN};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stratification error: class {0} missing from the training partition")]
    Stratification(Label),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The closed five-class taxonomy. Index order is the model's class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Label {
    Unbiased,
    Gender,
    Race,
    Age,
    Ambiguous,
}

impl Label {
    pub const ALL: [Label; 5] = [Label::Unbiased, Label::Gender, Label::Race, Label::Age, Label::Ambiguous];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Unbiased => "UNBIASED",
            Label::Gender => "GENDER",
            Label::Race => "RACE",
            Label::Age => "AGE",
            Label::Ambiguous => "AMBIGUOUS",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.as_str().to_string()).collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "UNBIASED" => Ok(Label::Unbiased),
            "GENDER" => Ok(Label::Gender),
            "RACE" => Ok(Label::Race),
            "AGE" => Ok(Label::Age),
            "AMBIGUOUS" | "NOT_APPROPRIATE" => Ok(Label::Ambiguous),
            _ => Err(CorpusError::Input(format!("unknown label {s:?}"))),
        }
    }
}

impl TryFrom<String> for Label {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubDomain {
    #[serde(rename = "JD")]
    Jd,
    #[serde(rename = "NJD")]
    Njd,
}

impl fmt::Display for SubDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubDomain::Jd => "JD",
            SubDomain::Njd => "NJD",
        })
    }
}
