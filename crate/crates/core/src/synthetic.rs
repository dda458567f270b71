//! Generated corpora with known structure, for tests and demos.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{Corpus, EventMention};
use crate::sampler;

/// Event types and their keyword triggers.
pub const EVENT_TYPES: [(&str, &str); 12] = [
    ("Conflict.Attack", "attacked"),
    ("Movement.Transport", "traveled"),
    ("Life.Die", "died"),
    ("Life.Marry", "married"),
    ("Personnel.Elect", "elected"),
    ("Justice.Sue", "sued"),
    ("Contact.Meet", "met"),
    ("Justice.Arrest-Jail", "arrested"),
    ("Business.Merge-Org", "merged"),
    ("Life.Injure", "injured"),
    ("Transaction.Transfer-Money", "paid"),
    ("Contact.Phone-Write", "called"),
];

/// Context words carrying no label information.
pub const FILLER: [&str; 40] = [
    "the", "officials", "said", "on", "monday", "in", "city", "report", "local", "group",
    "after", "two", "people", "were", "near", "capital", "according", "to", "police", "week",
    "last", "a", "of", "with", "their", "several", "sources", "north", "village", "early",
    "late", "during", "talks", "news", "region", "army", "company", "leaders", "court",
    "yesterday",
];

/// Trigger shared by every type in the shortcut corpus.
pub const SHARED_TRIGGER: &str = "happened";

fn check_types(n: usize) {
    assert!(
        (1..=EVENT_TYPES.len()).contains(&n),
        "between 1 and {} event types supported",
        EVENT_TYPES.len()
    );
}

fn mention(
    rng: &mut impl Rng,
    filler: &[&str],
    id: String,
    label: &str,
    trigger: &str,
    len: std::ops::RangeInclusive<usize>,
) -> EventMention {
    let n = rng.random_range(len).max(1);
    let at = rng.random_range(0..n);
    let words: Vec<String> = (0..n)
        .map(|i| {
            if i == at {
                trigger.to_string()
            } else {
                filler.choose(rng).expect("filler nonempty").to_string()
            }
        })
        .collect();
    EventMention {
        id,
        words,
        trigger_start: at,
        trigger_end: at + 1,
        trigger: trigger.to_string(),
        label: label.to_string(),
    }
}

/// Each type is signalled by its own keyword; all other words are filler.
#[derive(Debug, Clone)]
pub struct SeparableSpec {
    pub n_types: usize,
    pub per_type: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Number of [`FILLER`] words in use.
    pub filler: usize,
    pub seed: u64,
}

impl Default for SeparableSpec {
    fn default() -> Self {
        SeparableSpec {
            n_types: 8,
            per_type: 32,
            min_len: 6,
            max_len: 14,
            filler: FILLER.len(),
            seed: 7,
        }
    }
}

pub fn separable_corpus(spec: &SeparableSpec) -> Corpus {
    check_types(spec.n_types);
    assert!((1..=FILLER.len()).contains(&spec.filler));
    let mut rng = sampler::rng(spec.seed);
    let mut out = Vec::new();
    for (t, (label, trigger)) in EVENT_TYPES[..spec.n_types].iter().enumerate() {
        for i in 0..spec.per_type {
            out.push(mention(
                &mut rng,
                &FILLER[..spec.filler],
                format!("sep-{t}-{i}"),
                label,
                trigger,
                spec.min_len..=spec.max_len,
            ));
        }
    }
    Corpus::from_mentions(out).0
}

/// Each type has a dominant keyword, and `shared_per_type` mentions of every
/// type use [`SHARED_TRIGGER`] with no other cue. A model that reads the
/// trigger alone classifies the shared mentions at chance.
#[derive(Debug, Clone)]
pub struct ShortcutSpec {
    pub n_types: usize,
    pub per_type: usize,
    pub shared_per_type: usize,
    pub seed: u64,
}

impl Default for ShortcutSpec {
    fn default() -> Self {
        ShortcutSpec {
            n_types: 6,
            per_type: 40,
            shared_per_type: 14,
            seed: 11,
        }
    }
}

pub fn shortcut_corpus(spec: &ShortcutSpec) -> Corpus {
    check_types(spec.n_types);
    assert!(spec.shared_per_type <= spec.per_type);
    let mut rng = sampler::rng(spec.seed);
    let mut out = Vec::new();
    for (t, (label, trigger)) in EVENT_TYPES[..spec.n_types].iter().enumerate() {
        for i in 0..spec.per_type {
            let trig = if i < spec.shared_per_type { SHARED_TRIGGER } else { trigger };
            out.push(mention(&mut rng, &FILLER, format!("cut-{t}-{i}"), label, trig, 6..=12));
        }
    }
    Corpus::from_mentions(out).0
}

/// The running example: "And I agree that we shouldn't send people over
/// there." with trigger "send".
pub fn example_mention() -> EventMention {
    EventMention {
        id: "example".into(),
        words: "And I agree that we shouldn't send people over there."
            .split(' ')
            .map(String::from)
            .collect(),
        trigger_start: 6,
        trigger_end: 7,
        trigger: "send".into(),
        label: "Movement.Transport".into(),
    }
}
