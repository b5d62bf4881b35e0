//! Document screening: split into sentences, classify each, keep the
//! non-UNBIASED predictions at or above a confidence threshold and order them
//! by confidence.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::{make_cls_batches, split_spans, CorpusError, EncodedSentence, Label, Vocabulary};
use crate::net::{checkpoint_id, Checkpoint, ClassifierNetwork, CheckpointModel, Mode, NetError};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Default cap on screened text, in bytes.
pub const DEFAULT_MAX_BYTES: usize = 1 << 20;
const BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ScreenError {
    #[error("text is {size} bytes, limit is {max}")]
    TooLarge { size: usize, max: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Character offsets into the screened text, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// Class probabilities, serialized as an object in class order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution(pub [f64; Label::COUNT]);

impl Distribution {
    pub fn get(&self, l: Label) -> f64 {
        self.0[l.index()]
    }

    /// Most probable class and its probability; ties go to the earlier class.
    pub fn top(&self) -> (Label, f64) {
        let mut best = 0;
        for i in 1..Label::COUNT {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (Label::ALL[best], self.0[best])
    }
}

impl Serialize for Distribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(Label::COUNT))?;
        for l in Label::ALL {
            m.serialize_entry(l.as_str(), &self.0[l.index()])?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Distribution;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from class name to probability")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Distribution, A::Error> {
                let mut out = [f64::NAN; Label::COUNT];
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    let l: Label = k.parse().map_err(serde::de::Error::custom)?;
                    out[l.index()] = v;
                }
                if out.iter().any(|v| v.is_nan()) {
                    return Err(serde::de::Error::custom("distribution must list every class"));
                }
                Ok(Distribution(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceFinding {
    pub sentence: String,
    pub span: Span,
    pub label: Label,
    /// Largest class probability.
    pub confidence: f64,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    /// sha256 of the screened text, hex.
    pub source_digest: String,
    pub checkpoint_id: String,
    pub threshold: f64,
    pub sentence_count: usize,
    /// Non-increasing confidence; equal confidences keep source order.
    pub findings: Vec<SentenceFinding>,
    /// Wall time of the call. Not serialized, so equal inputs give equal JSON.
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Read-only model plus vocabulary; `screen_text` is safe to call from many
/// threads at once.
#[derive(Debug, Clone)]
pub struct ScreenerEngine {
    model: ClassifierNetwork<f32>,
    vocab: Vocabulary,
    checkpoint_id: String,
    threshold: f64,
    max_bytes: usize,
}

fn check_threshold(t: f64) -> Result<f64, ScreenError> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(ScreenError::Config(format!("threshold {t} not in [0, 1]")))
    }
}

impl ScreenerEngine {
    pub fn new(model: ClassifierNetwork<f32>, vocab: Vocabulary, checkpoint_id: impl Into<String>) -> Result<Self, ScreenError> {
        if model.backbone.config.vocab_size != vocab.len() {
            return Err(ScreenError::Config(format!(
                "model vocabulary {} differs from supplied vocabulary {}",
                model.backbone.config.vocab_size,
                vocab.len()
            )));
        }
        if model.num_classes() != Label::COUNT {
            return Err(ScreenError::Config(format!("model has {} classes, expected {}", model.num_classes(), Label::COUNT)));
        }
        Ok(Self { model, vocab, checkpoint_id: checkpoint_id.into(), threshold: DEFAULT_THRESHOLD, max_bytes: DEFAULT_MAX_BYTES })
    }

    /// Loads a classifier checkpoint, refusing one built over another vocabulary.
    pub fn load(checkpoint: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<Self, ScreenError> {
        let vocab = Vocabulary::load(vocab)?;
        let bytes = std::fs::read(checkpoint.as_ref()).map_err(NetError::from)?;
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        if ckpt.vocab_hash != vocab.digest() {
            return Err(NetError::Compatibility { found: ckpt.vocab_hash, expected: vocab.digest().to_string() }.into());
        }
        let CheckpointModel::Classifier(model) = ckpt.model else {
            return Err(ScreenError::Config("checkpoint holds a language model, not a classifier".into()));
        };
        Self::new(model, vocab, checkpoint_id(&bytes))
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), ScreenError> {
        self.threshold = check_threshold(threshold)?;
        Ok(())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, ScreenError> {
        self.set_threshold(threshold)?;
        Ok(self)
    }

    pub fn with_max_bytes(mut self, max_bytes: usize) -> Self {
        self.max_bytes = max_bytes;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn max_bytes(&self) -> usize {
        self.max_bytes
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.checkpoint_id
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Class distribution for each sentence, in input order.
    pub fn classify<S: AsRef<str>>(&self, sentences: &[S]) -> Result<Vec<Distribution>, ScreenError> {
        let items: Vec<EncodedSentence> = sentences
            .iter()
            .map(|s| EncodedSentence { tokens: self.vocab.encode_sentence(s.as_ref()), label: Label::Unbiased })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for b in make_cls_batches(&items, BATCH) {
            let o = self.model.forward_batch(&b.tokens, Mode::Eval)?;
            for r in 0..o.probs.rows() {
                let mut d = [0.0; Label::COUNT];
                for (slot, &p) in d.iter_mut().zip(o.probs.row(r)) {
                    *slot = p as f64;
                }
                out.push(Distribution(d));
            }
        }
        Ok(out)
    }

    pub fn screen_text(&self, text: &str) -> Result<ScreenResult, ScreenError> {
        self.screen_text_with(text, self.threshold)
    }

    pub fn screen_text_with(&self, text: &str, threshold: f64) -> Result<ScreenResult, ScreenError> {
        let started = Instant::now();
        let threshold = check_threshold(threshold)?;
        if text.len() > self.max_bytes {
            return Err(ScreenError::TooLarge { size: text.len(), max: self.max_bytes });
        }
        let spans = split_spans(text);
        let sentence_count = spans.len();
        let dists = self.classify(&spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>())?;
        let mut findings: Vec<SentenceFinding> = spans
            .into_iter()
            .zip(dists)
            .filter_map(|(s, d)| {
                let (label, confidence) = d.top();
                (label != Label::Unbiased && confidence >= threshold).then(|| SentenceFinding {
                    sentence: s.text,
                    span: Span { start: s.start, end: s.end },
                    label,
                    confidence,
                    distribution: d,
                })
            })
            .collect();
        findings.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(ScreenResult {
            source_digest: hex::encode(Sha256::digest(text.as_bytes())),
            checkpoint_id: self.checkpoint_id.clone(),
            threshold,
            sentence_count,
            findings,
            elapsed: started.elapsed(),
        })
    }
}

/// The `char`-offset span `[start, end)` of `text`.
pub fn extract_span(text: &str, span: Span) -> String {
    text.chars().skip(span.start).take(span.end - span.start).collect()
}
