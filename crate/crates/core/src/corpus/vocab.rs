use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{tokenize, CorpusError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

const HEADER: &str = "#vocab";

/// Bijective token/index map. Specials occupy indices 0..4, content tokens
/// follow by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
    max_size: usize,
    digest: String,
}

impl Vocabulary {
    pub fn build<I, S>(streams: I, min_freq: usize, max_size: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_freq < 1 {
            return Err(CorpusError::Config("min_freq must be at least 1".into()));
        }
        if max_size < SPECIALS.len() {
            return Err(CorpusError::Config(format!("max_size {max_size} below the {} specials", SPECIALS.len())));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for stream in streams {
            for tok in stream {
                let tok = tok.as_ref();
                if !SPECIALS.contains(&tok) {
                    *counts.entry(tok.to_string()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t)).collect();
        Ok(Self::from_tokens(tokens, min_freq, max_size))
    }

    /// Tokenizes every sentence and builds over the result.
    pub fn build_from_sentences<S: AsRef<str>>(sentences: &[S], min_freq: usize, max_size: usize) -> Result<Self, CorpusError> {
        Self::build(sentences.iter().map(|s| tokenize(s.as_ref())), min_freq, max_size)
    }

    fn from_tokens(tokens: Vec<String>, min_freq: usize, max_size: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let digest = digest_of(&tokens, min_freq, max_size);
        Self { tokens, index, min_freq, max_size, digest }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]).to_string()).collect()
    }

    /// `[BOS] tokens [EOS]` for one raw sentence.
    pub fn encode_sentence(&self, sentence: &str) -> Vec<usize> {
        let toks = tokenize(sentence);
        let mut ids = Vec::with_capacity(toks.len() + 2);
        ids.push(BOS);
        ids.extend(toks.iter().map(|t| self.id(t)));
        ids.push(EOS);
        ids
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} min_freq={} max_size={} digest={}\n", self.min_freq, self.max_size, self.digest);
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self, CorpusError> {
        let perr = |line: usize, msg: String| CorpusError::Parse { path: origin.to_string(), line, msg };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty vocabulary file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(HEADER) {
            return Err(perr(1, format!("expected {HEADER} header")));
        }
        let (mut min_freq, mut max_size, mut digest) = (None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("min_freq", v)) => min_freq = v.parse().ok(),
                Some(("max_size", v)) => max_size = v.parse().ok(),
                Some(("digest", v)) => digest = Some(v.to_string()),
                _ => return Err(perr(1, format!("unknown header field {f:?}"))),
            }
        }
        let (Some(min_freq), Some(max_size), Some(digest)) = (min_freq, max_size, digest) else {
            return Err(perr(1, "header needs min_freq, max_size and digest".into()));
        };
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(perr(2, "specials missing from indices 0..4".into()));
        }
        let vocab = Self::from_tokens(tokens, min_freq, max_size);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(perr(2, "duplicate token".into()));
        }
        if vocab.digest != digest {
            return Err(perr(1, format!("digest {digest} does not match contents ({})", vocab.digest)));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

fn digest_of(tokens: &[String], min_freq: usize, max_size: usize) -> String {
    let mut h = Sha256::new();
    h.update(format!("min_freq={min_freq}\nmax_size={max_size}\n"));
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
