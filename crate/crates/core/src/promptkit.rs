//! Cloze prompt assembly for the two inference steps.
//!
//! The trigger prompt is
//!
//! ```text
//! [CLS] Trigger word is [MASK]. [SEP] <mention> [SEP] <O1> [SEP]
//! ```
//!
//! and the event prompt is
//!
//! ```text
//! [CLS] This is event about [MASK]. [SEP] <mention> [SEP] <O2> [SEP] Trigger word is <t>. [SEP]
//! ```
//!
//! where the segments between the outer separators are joined with
//! [`PromptConfig::inner_separator`] in a configurable order.
//!
//! Besides the text, each [`PromptInstance`] carries a word-level view: the
//! scaffolding is split on whitespace with `[MASK]`, `[CLS]` and `[SEP]`
//! detached from neighbouring punctuation, and every mention word occupies
//! exactly one slot. [`map_words_to_tokens`] turns that view into token ids.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EventMention;
use crate::encoder::{Segmenter, Vocab};

pub const MASK: &str = "[MASK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const TRIGGER_TEMPLATE: &str = "Trigger word is [MASK].";
pub const EVENT_TEMPLATE: &str = "This is event about [MASK].";
pub const TRIGGER_ONTOLOGY: &str =
    "Trigger word: a word that can trigger an event, usually a verb or noun in the sentence.";
pub const EVENT_ONTOLOGY: &str = "Event: which type the sentence or trigger belongs to.";
pub const INNER_SEPARATOR: &str = " [SEP] ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template must contain exactly one [MASK], found {found}: {template:?}")]
    BadTemplate { template: String, found: usize },
    #[error("trigger word is empty")]
    EmptyTrigger,
    #[error("mention has no words")]
    EmptyMention,
    #[error("prompt scaffolding needs {needed} tokens but the encoder accepts {max}")]
    ScaffoldTooLong { needed: usize, max: usize },
    #[error("unknown sequence order {0:?}")]
    UnknownOrder(String),
}

/// Segment order for the trigger prompt body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TriggerOrder {
    #[default]
    #[serde(rename = "M+O")]
    MentionOntology,
    #[serde(rename = "O+M")]
    OntologyMention,
}

impl TriggerOrder {
    pub const ALL: [TriggerOrder; 2] = [TriggerOrder::MentionOntology, TriggerOrder::OntologyMention];

    fn slots(self) -> [Slot; 2] {
        match self {
            TriggerOrder::MentionOntology => [Slot::Mention, Slot::Ontology],
            TriggerOrder::OntologyMention => [Slot::Ontology, Slot::Mention],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TriggerOrder::MentionOntology => "M+O",
            TriggerOrder::OntologyMention => "O+M",
        }
    }
}

/// Segment order for the event prompt body: mention (M), ontology (O) and
/// trigger clause (T).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum EventOrder {
    #[default]
    #[serde(rename = "M+O+T")]
    Mot,
    #[serde(rename = "M+T+O")]
    Mto,
    #[serde(rename = "O+M+T")]
    Omt,
    #[serde(rename = "O+T+M")]
    Otm,
    #[serde(rename = "T+M+O")]
    Tmo,
    #[serde(rename = "T+O+M")]
    Tom,
}

impl EventOrder {
    pub const ALL: [EventOrder; 6] = [
        EventOrder::Mot,
        EventOrder::Mto,
        EventOrder::Omt,
        EventOrder::Otm,
        EventOrder::Tmo,
        EventOrder::Tom,
    ];

    fn slots(self) -> [Slot; 3] {
        use Slot::{Mention as M, Ontology as O, Trigger as T};
        match self {
            EventOrder::Mot => [M, O, T],
            EventOrder::Mto => [M, T, O],
            EventOrder::Omt => [O, M, T],
            EventOrder::Otm => [O, T, M],
            EventOrder::Tmo => [T, M, O],
            EventOrder::Tom => [T, O, M],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventOrder::Mot => "M+O+T",
            EventOrder::Mto => "M+T+O",
            EventOrder::Omt => "O+M+T",
            EventOrder::Otm => "O+T+M",
            EventOrder::Tmo => "T+M+O",
            EventOrder::Tom => "T+O+M",
        }
    }
}

impl fmt::Display for TriggerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for EventOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TriggerOrder {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TriggerOrder::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| PromptError::UnknownOrder(s.to_string()))
    }
}

impl FromStr for EventOrder {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventOrder::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| PromptError::UnknownOrder(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Mention,
    Ontology,
    Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub trigger_template: String,
    pub event_template: String,
    pub ontology_trigger: String,
    pub ontology_event: String,
    pub trigger_order: TriggerOrder,
    pub event_order: EventOrder,
    pub use_ontology: bool,
    pub inner_separator: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            trigger_template: TRIGGER_TEMPLATE.to_string(),
            event_template: EVENT_TEMPLATE.to_string(),
            ontology_trigger: TRIGGER_ONTOLOGY.to_string(),
            ontology_event: EVENT_ONTOLOGY.to_string(),
            trigger_order: TriggerOrder::default(),
            event_order: EventOrder::default(),
            use_ontology: true,
            inner_separator: INNER_SEPARATOR.to_string(),
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        check_template(&self.trigger_template)?;
        check_template(&self.event_template)
    }
}

fn check_template(t: &str) -> Result<(), PromptError> {
    let found = t.matches(MASK).count();
    if found == 1 {
        Ok(())
    } else {
        Err(PromptError::BadTemplate {
            template: t.to_string(),
            found,
        })
    }
}

/// Where a prompt word came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordKind {
    /// `[CLS]`, `[SEP]` or `[MASK]`.
    Special,
    Scaffold,
    /// The mention word with this index.
    Mention(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptWord {
    pub text: String,
    pub kind: WordKind,
}

/// An assembled cloze prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub text: String,
    pub words: Vec<PromptWord>,
    pub mask_word_index: usize,
    /// `mention_word_map[i]` is the prompt word index of mention word `i`.
    pub mention_word_map: Vec<usize>,
}

impl PromptInstance {
    /// Prompt word indices of the mention words, in mention order.
    pub fn candidate_word_indices(&self) -> &[usize] {
        &self.mention_word_map
    }

    pub fn mention_len(&self) -> usize {
        self.mention_word_map.len()
    }
}

/// Incrementally builds the text and word view in lockstep.
struct Builder {
    text: String,
    words: Vec<PromptWord>,
    mention_word_map: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            text: String::new(),
            words: Vec::new(),
            mention_word_map: Vec::new(),
        }
    }

    /// Appends scaffolding text verbatim.
    fn scaffold(&mut self, s: &str) {
        self.text.push_str(s);
        for w in scaffold_words(s) {
            let kind = if is_special(&w) {
                WordKind::Special
            } else {
                WordKind::Scaffold
            };
            self.words.push(PromptWord { text: w, kind });
        }
    }

    fn mention(&mut self, m: &EventMention) {
        self.text.push_str(&m.text());
        for (i, w) in m.words.iter().enumerate() {
            self.mention_word_map.push(self.words.len());
            self.words.push(PromptWord {
                text: w.clone(),
                kind: WordKind::Mention(i),
            });
        }
    }

    fn finish(self) -> PromptInstance {
        let mask_word_index = self
            .words
            .iter()
            .position(|w| w.kind == WordKind::Special && w.text == MASK)
            .expect("template carries a mask");
        PromptInstance {
            text: self.text,
            words: self.words,
            mask_word_index,
            mention_word_map: self.mention_word_map,
        }
    }
}

fn is_special(w: &str) -> bool {
    w == MASK || w == CLS || w == SEP
}

/// Whitespace split that also detaches special markers from adjacent
/// characters, e.g. `[MASK].` becomes `[MASK]`, `.`.
fn scaffold_words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in s.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            let next = [MASK, CLS, SEP]
                .iter()
                .filter_map(|sp| rest.find(sp).map(|at| (at, *sp)))
                .min_by_key(|(at, _)| *at);
            match next {
                Some((0, sp)) => {
                    out.push(sp.to_string());
                    rest = &rest[sp.len()..];
                }
                Some((at, _)) => {
                    out.push(rest[..at].to_string());
                    rest = &rest[at..];
                }
                None => {
                    out.push(rest.to_string());
                    rest = "";
                }
            }
        }
    }
    out
}

fn wrap(template: &str, body: impl FnOnce(&mut Builder)) -> PromptInstance {
    let mut b = Builder::new();
    b.scaffold(CLS);
    b.scaffold(" ");
    b.scaffold(template);
    b.scaffold(" ");
    b.scaffold(SEP);
    b.scaffold(" ");
    body(&mut b);
    b.scaffold(" ");
    b.scaffold(SEP);
    b.finish()
}

/// The clause naming the trigger inside the event prompt.
pub fn trigger_clause(trigger_word: &str) -> String {
    format!("Trigger word is {trigger_word}.")
}

/// Builds the trigger-recognition prompt for `m`.
pub fn assemble_trigger_prompt(m: &EventMention, cfg: &PromptConfig) -> Result<PromptInstance, PromptError> {
    check_template(&cfg.trigger_template)?;
    if m.is_empty() {
        return Err(PromptError::EmptyMention);
    }
    let slots: Vec<Slot> = cfg
        .trigger_order
        .slots()
        .into_iter()
        .filter(|s| cfg.use_ontology || *s != Slot::Ontology)
        .collect();
    Ok(wrap(&cfg.trigger_template, |b| {
        for (i, slot) in slots.iter().enumerate() {
            if i > 0 {
                b.scaffold(&cfg.inner_separator);
            }
            match slot {
                Slot::Mention => b.mention(m),
                Slot::Ontology => b.scaffold(&cfg.ontology_trigger),
                Slot::Trigger => unreachable!(),
            }
        }
    }))
}

/// Builds the event-classification prompt for `m` with the given trigger.
/// With `trigger_word = None` the trigger clause is left out, which is how
/// the model runs without a trigger recognizer.
pub fn assemble_event_prompt(
    m: &EventMention,
    trigger_word: Option<&str>,
    cfg: &PromptConfig,
) -> Result<PromptInstance, PromptError> {
    check_template(&cfg.event_template)?;
    if m.is_empty() {
        return Err(PromptError::EmptyMention);
    }
    if trigger_word.is_some_and(|t| t.trim().is_empty()) {
        return Err(PromptError::EmptyTrigger);
    }
    let slots: Vec<Slot> = cfg
        .event_order
        .slots()
        .into_iter()
        .filter(|s| match s {
            Slot::Ontology => cfg.use_ontology,
            Slot::Trigger => trigger_word.is_some(),
            Slot::Mention => true,
        })
        .collect();
    Ok(wrap(&cfg.event_template, |b| {
        for (i, slot) in slots.iter().enumerate() {
            if i > 0 {
                b.scaffold(&cfg.inner_separator);
            }
            match slot {
                Slot::Mention => b.mention(m),
                Slot::Ontology => b.scaffold(&cfg.ontology_event),
                Slot::Trigger => b.scaffold(&trigger_clause(trigger_word.expect("filtered"))),
            }
        }
    }))
}

/// `[CLS] <mention> [SEP]`: the plain sentence encoding used when the event
/// prompt is ablated. The `[CLS]` word plays the role of the mask.
pub fn assemble_plain_input(m: &EventMention) -> Result<PromptInstance, PromptError> {
    if m.is_empty() {
        return Err(PromptError::EmptyMention);
    }
    let mut b = Builder::new();
    b.scaffold(CLS);
    b.scaffold(" ");
    b.mention(m);
    b.scaffold(" ");
    b.scaffold(SEP);
    Ok(PromptInstance {
        text: b.text,
        words: b.words,
        mask_word_index: 0,
        mention_word_map: b.mention_word_map,
    })
}

/// A prompt at token level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPrompt {
    pub ids: Vec<u32>,
    /// Token position of `[MASK]` (or `[CLS]` for plain inputs).
    pub mask_position: usize,
    /// Token range of each retained mention word.
    pub mention_spans: Vec<std::ops::Range<usize>>,
    /// Mention words removed from the tail to fit the encoder.
    pub truncated_words: usize,
}

impl TokenizedPrompt {
    /// Token id of the first subword of each retained mention word.
    pub fn candidate_token_ids(&self) -> Vec<u32> {
        self.mention_spans.iter().map(|r| self.ids[r.start]).collect()
    }
}

/// Segments every prompt word and records where each mention word lands.
/// When the result exceeds `max_tokens`, mention words are removed from the
/// tail until it fits; scaffolding is never removed, and at least one
/// mention word is always kept.
pub fn map_words_to_tokens<S: Segmenter + ?Sized>(
    p: &PromptInstance,
    segmenter: &S,
    vocab: &Vocab,
    max_tokens: usize,
) -> Result<TokenizedPrompt, PromptError> {
    let pieces: Vec<Vec<u32>> = p
        .words
        .iter()
        .map(|w| match w.kind {
            WordKind::Special => vec![vocab.special_id(&w.text).expect("special token in vocab")],
            _ => {
                let ids = segmenter.segment(&w.text, vocab);
                if ids.is_empty() {
                    vec![vocab.unk_id()]
                } else {
                    ids
                }
            }
        })
        .collect();

    let total: usize = pieces.iter().map(Vec::len).sum();
    let mention_len = p.mention_len();
    let mut keep = mention_len;
    let mut size = total;
    while size > max_tokens && keep > 1 {
        keep -= 1;
        size -= pieces[p.mention_word_map[keep]].len();
    }
    if size > max_tokens {
        return Err(PromptError::ScaffoldTooLong {
            needed: size,
            max: max_tokens,
        });
    }

    let mut ids = Vec::with_capacity(size);
    let mut mask_position = 0;
    let mut mention_spans = Vec::with_capacity(keep);
    for (wi, (w, piece)) in p.words.iter().zip(&pieces).enumerate() {
        if let WordKind::Mention(i) = w.kind {
            if i >= keep {
                continue;
            }
            mention_spans.push(ids.len()..ids.len() + piece.len());
        }
        if wi == p.mask_word_index {
            mask_position = ids.len();
        }
        ids.extend_from_slice(piece);
    }
    Ok(TokenizedPrompt {
        ids,
        mask_position,
        mention_spans,
        truncated_words: mention_len - keep,
    })
}
