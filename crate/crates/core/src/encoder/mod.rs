//! Masked-language-model backends.
//!
//! A backend turns token ids into contextual vectors and, at the mask
//! position, a distribution over its vocabulary. [`MaskedLm`] is the
//! contract the model and trainer program against; [`ToyEncoder`] is a small
//! differentiable implementation that runs anywhere, and [`pretrained`]
//! resolves hub-hosted checkpoints by identifier.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::optim::Parameters;
use crate::promptkit::{self, PromptConfig, CLS, MASK, SEP};

pub mod pretrained;
mod toy;

pub use toy::{toy_encoder, ToyEncoder, ToyParams, ToyTape};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("mask position {position} out of range for {len} tokens")]
    MaskOutOfRange { position: usize, len: usize },
    #[error("input of {len} tokens exceeds the encoder limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {size}")]
    UnknownToken { id: u32, size: usize },
    #[error("empty input")]
    Empty,
    #[error("backend {identifier:?} unavailable: {reason}")]
    BackendUnavailable { identifier: String, reason: String },
    #[error("parameter file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    #[default]
    Toy,
    Pretrained,
}

/// Describes which backend to build. The vocabulary is not part of the spec:
/// toy backends derive it from the corpus, pretrained ones ship their own.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub identifier: String,
    pub max_tokens: usize,
    /// Hidden size `d`.
    pub dim: usize,
    /// Initialization seed for toy parameters.
    pub seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: EncoderKind::Toy,
            identifier: "toy".to_string(),
            max_tokens: 128,
            dim: 16,
            seed: 42,
        }
    }
}

impl EncoderSpec {
    /// The default pretrained backend.
    pub fn bert_base_uncased() -> Self {
        EncoderSpec {
            kind: EncoderKind::Pretrained,
            identifier: "bert-base-uncased".to_string(),
            max_tokens: 512,
            dim: 768,
            seed: 42,
        }
    }
}

/// Hidden states for every token plus vocabulary logits at the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `tokens × d`.
    pub hidden: Array2<f64>,
    pub mask_vocab_logits: Array1<f64>,
    pub d: usize,
}

/// A differentiable masked language model.
///
/// `forward` evaluates the hidden state only at `rows`, the positions the
/// caller will read, and keeps what `backward` needs. Vocabulary logits are
/// produced for `rows[0]`.
pub trait MaskedLm: Send + Sync {
    type Params: Parameters;
    type Tape: Send;

    fn spec(&self) -> &EncoderSpec;
    fn vocab(&self) -> &Vocab;
    fn segmenter(&self) -> &dyn Segmenter;
    fn dim(&self) -> usize;
    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;

    fn forward(&self, tokens: &[u32], rows: &[usize]) -> Result<Self::Tape, EncoderError>;

    /// Hidden state at `rows[i]`.
    fn hidden<'t>(&self, tape: &'t Self::Tape, i: usize) -> &'t Array1<f64>;

    /// Vocabulary logits at `rows[0]`.
    fn logits<'t>(&self, tape: &'t Self::Tape) -> &'t Array1<f64>;

    /// Accumulates parameter gradients into `grads` given upstream gradients
    /// for each requested hidden row and for the logits.
    fn backward(
        &self,
        tape: &Self::Tape,
        d_hidden: &[Array1<f64>],
        d_logits: Option<&Array1<f64>>,
        grads: &mut Self::Params,
    );

    /// Full encoding: hidden states at every position, logits at the mask.
    fn encode(&self, tokens: &[u32], mask_position: usize) -> Result<EncoderOutput, EncoderError> {
        if mask_position >= tokens.len() {
            return Err(EncoderError::MaskOutOfRange {
                position: mask_position,
                len: tokens.len(),
            });
        }
        let mut rows = vec![mask_position];
        rows.extend((0..tokens.len()).filter(|&i| i != mask_position));
        let tape = self.forward(tokens, &rows)?;
        let d = self.dim();
        let mut hidden = Array2::zeros((tokens.len(), d));
        for (i, &r) in rows.iter().enumerate() {
            hidden.row_mut(r).assign(self.hidden(&tape, i));
        }
        Ok(EncoderOutput {
            hidden,
            mask_vocab_logits: self.logits(&tape).clone(),
            d,
        })
    }
}

/// Token string ↔ id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Special tokens first (`[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`, `[MASK]`),
    /// then `tokens` in order with duplicates removed.
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        let specials = [PAD, UNK, CLS, SEP, MASK].map(String::from);
        Vocab::from_ordered(specials.into_iter().chain(tokens))
    }

    fn from_ordered(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len() as u32);
                v.tokens.push(t);
            }
        }
        v
    }

    /// Reads a BERT-style `vocab.txt`, one token per line, id = line number.
    pub fn from_vocab_file(path: &Path) -> Result<Self, EncoderError> {
        let text = fs::read_to_string(path)?;
        let v = Vocab::from_ordered(text.lines().map(|l| l.trim_end_matches('\r').to_string()));
        for sp in [UNK, CLS, SEP, MASK] {
            if v.id(sp).is_none() {
                return Err(EncoderError::Format(format!("{} lacks {sp}", path.display())));
            }
        }
        Ok(v)
    }

    /// Vocabulary for a toy backend: every basic-tokenized piece of the corpus
    /// and of the prompt scaffolding, sorted.
    pub fn for_corpus(corpus: &Corpus, prompt: &PromptConfig, lowercase: bool) -> Self {
        let mut pieces = BTreeSet::new();
        let mut add = |s: &str| {
            for w in s.split_whitespace() {
                pieces.extend(basic_tokenize(w, lowercase));
            }
        };
        for text in [
            &prompt.trigger_template,
            &prompt.event_template,
            &prompt.ontology_trigger,
            &prompt.ontology_event,
        ] {
            add(&text.replace(MASK, " "));
        }
        add(&promptkit::trigger_clause(""));
        for m in corpus.mentions() {
            for w in &m.words {
                add(w);
            }
        }
        Vocab::new(pieces)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn special_id(&self, s: &str) -> Option<u32> {
        if [PAD, UNK, CLS, SEP, MASK].contains(&s) {
            self.id(s)
        } else {
            None
        }
    }

    pub fn unk_id(&self) -> u32 {
        self.id(UNK).expect("vocab has [UNK]")
    }

    pub fn mask_id(&self) -> u32 {
        self.id(MASK).expect("vocab has [MASK]")
    }

    pub fn cls_id(&self) -> u32 {
        self.id(CLS).expect("vocab has [CLS]")
    }

    pub fn sep_id(&self) -> u32 {
        self.id(SEP).expect("vocab has [SEP]")
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vocab::from_ordered(Vec::<String>::deserialize(d)?))
    }
}

/// Splits one surface word into vocabulary ids.
pub trait Segmenter: Send + Sync {
    fn segment(&self, word: &str, vocab: &Vocab) -> Vec<u32>;
}

/// One token per word: the (optionally lowercased) word itself or `[UNK]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Whitespace {
    pub lowercase: bool,
}

impl Segmenter for Whitespace {
    fn segment(&self, word: &str, vocab: &Vocab) -> Vec<u32> {
        let w = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        vec![vocab.id(&w).unwrap_or_else(|| vocab.unk_id())]
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Lowercasing (optional), whitespace and punctuation splitting.
pub fn basic_tokenize(word: &str, lowercase: bool) -> Vec<String> {
    let word = if lowercase {
        word.to_lowercase()
    } else {
        word.to_string()
    };
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in word.chars() {
        if c.is_whitespace() || c.is_control() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Greedy longest-match-first subword segmentation with `##` continuation
/// pieces, after [`basic_tokenize`].
#[derive(Debug, Clone, Copy)]
pub struct WordPiece {
    pub lowercase: bool,
    pub max_chars: usize,
}

impl WordPiece {
    pub fn uncased() -> Self {
        WordPiece {
            lowercase: true,
            max_chars: 100,
        }
    }

    fn pieces(&self, word: &str, vocab: &Vocab, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > self.max_chars {
            out.push(vocab.unk_id());
            return;
        }
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub.insert_str(0, "##");
                }
                if let Some(id) = vocab.id(&sub) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    out.push(vocab.unk_id());
                    return;
                }
            }
        }
        out.extend(ids);
    }
}

impl Segmenter for WordPiece {
    fn segment(&self, word: &str, vocab: &Vocab) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in basic_tokenize(word, self.lowercase) {
            self.pieces(&piece, vocab, &mut out);
        }
        out
    }
}

/// Default location of downloaded model snapshots.
pub fn hub_cache_dir() -> Option<PathBuf> {
    if let Ok(p) = std::env::var(pretrained::HUB_CACHE_ENV) {
        return Some(PathBuf::from(p));
    }
    if let Ok(p) = std::env::var("HF_HOME") {
        return Some(PathBuf::from(p).join("hub"));
    }
    std::env::var("HOME")
        .ok()
        .map(|h| PathBuf::from(h).join(".cache/huggingface/hub"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_tokenize_splits_punctuation() {
        assert_eq!(basic_tokenize("Shouldn't.", true), ["shouldn", "'", "t", "."]);
        assert_eq!(basic_tokenize("word:", false), ["word", ":"]);
    }

    #[test]
    fn wordpiece_longest_match() {
        let v = Vocab::new(["un", "##aff", "##able", "unaff"].map(String::from));
        let ids = WordPiece::uncased().segment("Unaffable", &v);
        assert_eq!(ids, vec![v.id("unaff").unwrap(), v.id("##able").unwrap()]);
        assert_eq!(WordPiece::uncased().segment("xyz", &v), vec![v.unk_id()]);
    }

    #[test]
    fn whitespace_is_identity() {
        let v = Vocab::new(["died".to_string()]);
        let s = Whitespace { lowercase: true };
        assert_eq!(s.segment("Died", &v), vec![v.id("died").unwrap()]);
        assert_eq!(s.segment("lived", &v), vec![v.unk_id()]);
    }

    #[test]
    fn vocab_specials_first() {
        let v = Vocab::new(["a".to_string(), "a".to_string()]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(0), Some(PAD));
        assert_eq!(v.mask_id(), 4);
        assert_eq!(v.special_id("a"), None);
    }
}
