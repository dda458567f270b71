//! Trigger-annotated event mentions: loading, cleaning, statistics and
//! trigger-bias profiling.
//!
//! The on-disk format is JSON Lines, one mention per line:
//!
//! ```json
//! {"id":"m1","words":["He","died","."],"trigger_start":1,"trigger_end":2,"trigger":"died","label":"Life.Die"}
//! ```
//!
//! Records that parse but break a mention invariant (span out of range, span
//! text disagreeing with `trigger`, duplicate id, ...) are dropped and
//! reported in a [`LoadReport`]. Records that do not parse abort loading.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag written into dataset manifests.
pub const FORMAT_VERSION: &str = "fsed-jsonl/1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at {path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus is empty")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
}

/// One annotated sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMention {
    pub id: String,
    pub words: Vec<String>,
    pub trigger_start: usize,
    /// Exclusive.
    pub trigger_end: usize,
    pub trigger: String,
    pub label: String,
}

impl EventMention {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// The mention rendered as a single space-joined string.
    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    /// Words covered by the trigger span. Empty if the span is invalid.
    pub fn trigger_words(&self) -> &[String] {
        self.words
            .get(self.trigger_start..self.trigger_end)
            .unwrap_or(&[])
    }

    /// Index of the word used as the single-word training target: the first
    /// word of the span.
    pub fn gold_trigger_index(&self) -> usize {
        self.trigger_start
    }

    pub fn gold_trigger_word(&self) -> &str {
        &self.words[self.trigger_start]
    }

    /// Case-folded trigger text, the key for trigger histograms and groups.
    pub fn trigger_key(&self) -> String {
        fold(&self.trigger)
    }
}

pub(crate) fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// A broken mention invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    EmptyWords,
    EmptySpan,
    SpanOutOfRange,
    TextMismatch,
    DuplicateId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::EmptyWords => "empty-words",
            Violation::EmptySpan => "empty-span",
            Violation::SpanOutOfRange => "span-out-of-range",
            Violation::TextMismatch => "text-mismatch",
            Violation::DuplicateId => "duplicate-id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub reasons: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.reasons.is_empty()
    }
}

/// Checks the per-mention invariants. Text consistency is only checked when
/// the span itself is well formed.
pub fn validate_mention(m: &EventMention) -> ValidationReport {
    let mut reasons = Vec::new();
    if m.words.is_empty() {
        reasons.push(Violation::EmptyWords);
    }
    if m.trigger_start >= m.trigger_end {
        reasons.push(Violation::EmptySpan);
    }
    if m.trigger_end > m.words.len() {
        reasons.push(Violation::SpanOutOfRange);
    }
    if reasons.is_empty() {
        let span = m.words[m.trigger_start..m.trigger_end].join(" ");
        if fold(&span) != fold(&m.trigger) {
            reasons.push(Violation::TextMismatch);
        }
    }
    ValidationReport { reasons }
}

/// Ordered, duplicate-free set of event-type identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    /// Builds a label space keeping the first occurrence of each label.
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut space = LabelSpace::default();
        for label in labels {
            space.insert(label.into());
        }
        space
    }

    fn insert(&mut self, label: String) -> usize {
        if let Some(&i) = self.index.get(&label) {
            return i;
        }
        let i = self.labels.len();
        self.index.insert(label.clone(), i);
        self.labels.push(label);
        i
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

impl Serialize for LabelSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        let space = LabelSpace::new(labels.iter().cloned());
        if space.len() != labels.len() {
            return Err(serde::de::Error::custom("duplicate label in label space"));
        }
        Ok(space)
    }
}

/// A dropped record and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub line: usize,
    pub id: String,
    pub reasons: Vec<Violation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records_read: usize,
    pub dropped: Vec<DroppedRecord>,
}

impl LoadReport {
    pub fn dropped_count(&self) -> usize {
        self.dropped.len()
    }

    pub fn drop_counts_by_reason(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for d in &self.dropped {
            for r in &d.reasons {
                *out.entry(r.to_string()).or_default() += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub format_version: String,
}

/// A cleaned collection of mentions.
#[derive(Debug, Clone)]
pub struct Corpus {
    mentions: Vec<EventMention>,
    labels: LabelSpace,
    by_id: HashMap<String, usize>,
    provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

impl Corpus {
    /// Builds a corpus from in-memory mentions, dropping invalid ones the same
    /// way the loader does.
    pub fn from_mentions(mentions: impl IntoIterator<Item = EventMention>) -> (Self, LoadReport) {
        let records = mentions.into_iter().enumerate().map(|(i, m)| (i + 1, m));
        let (kept, report) = clean(records);
        let corpus = Corpus::assemble(
            kept,
            Provenance {
                source: PathBuf::from("<memory>"),
                format_version: FORMAT_VERSION.to_string(),
            },
        );
        (corpus, report)
    }

    fn assemble(mentions: Vec<EventMention>, provenance: Provenance) -> Self {
        let labels = LabelSpace::new(mentions.iter().map(|m| m.label.clone()));
        let by_id = mentions
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
        Corpus {
            mentions,
            labels,
            by_id,
            provenance,
        }
    }

    pub fn mentions(&self) -> &[EventMention] {
        &self.mentions
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EventMention> {
        self.by_id.get(id).map(|&i| &self.mentions[i])
    }

    /// Mentions for the given ids, in the given order. Unknown ids are skipped.
    pub fn select<'a, I, S>(&'a self, ids: I) -> Vec<&'a EventMention>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        ids.into_iter()
            .filter_map(|id| self.get(id.as_ref()))
            .collect()
    }

    /// Mention indices grouped by label, in label-space order, each group in
    /// corpus order.
    pub fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.labels.len()];
        for (i, m) in self.mentions.iter().enumerate() {
            groups[self.labels.position(&m.label).expect("label indexed")].push(i);
        }
        groups
    }
}

/// Reads a corpus, dropping semantically invalid records.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<(Corpus, LoadReport), CorpusError> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path),
    }
}

fn load_jsonl(path: &Path) -> Result<(Corpus, LoadReport), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let m: EventMention =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push((i + 1, m));
    }

    let (kept, report) = clean(records);
    let corpus = Corpus::assemble(
        kept,
        Provenance {
            source: path.to_path_buf(),
            format_version: FORMAT_VERSION.to_string(),
        },
    );
    Ok((corpus, report))
}

/// Splits records into valid mentions and a drop report.
fn clean(records: impl IntoIterator<Item = (usize, EventMention)>) -> (Vec<EventMention>, LoadReport) {
    let mut report = LoadReport::default();
    let mut kept = Vec::new();
    let mut seen = HashSet::new();
    for (line, m) in records {
        report.records_read += 1;
        let mut v = validate_mention(&m);
        if !seen.insert(m.id.clone()) {
            v.reasons.push(Violation::DuplicateId);
        }
        if v.is_valid() {
            kept.push(m);
        } else {
            log::warn!("dropping record {} at line {line}: {:?}", m.id, v.reasons);
            report.dropped.push(DroppedRecord {
                line,
                id: m.id,
                reasons: v.reasons,
            });
        }
    }
    (kept, report)
}

/// Writes mentions in canonical JSONL form (compact, field order fixed).
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> io::Result<()> {
    for m in corpus.mentions() {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Records where a cleaned corpus came from and what cleaning removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: PathBuf,
    pub format_version: String,
    pub records_read: usize,
    pub mentions_kept: usize,
    pub dropped: usize,
    pub drop_reasons: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn new(corpus: &Corpus, report: &LoadReport) -> Self {
        DatasetManifest {
            source: corpus.provenance.source.clone(),
            format_version: corpus.provenance.format_version.clone(),
            records_read: report.records_read,
            mentions_kept: corpus.len(),
            dropped: report.dropped_count(),
            drop_reasons: report.drop_counts_by_reason(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_types: usize,
    pub n_mentions: usize,
    pub mean_mentions_per_type: f64,
    pub mean_mention_length: f64,
    pub mean_trigger_length: f64,
    pub per_type_counts: BTreeMap<String, usize>,
}

pub fn corpus_stats(c: &Corpus) -> Result<CorpusStats, CorpusError> {
    if c.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut per_type_counts = BTreeMap::new();
    let mut words = 0usize;
    let mut trigger_words = 0usize;
    for m in c.mentions() {
        *per_type_counts.entry(m.label.clone()).or_insert(0) += 1;
        words += m.len();
        trigger_words += m.trigger_end - m.trigger_start;
    }
    let n = c.len() as f64;
    let n_types = per_type_counts.len();
    Ok(CorpusStats {
        n_types,
        n_mentions: c.len(),
        mean_mentions_per_type: n / n_types as f64,
        mean_mention_length: words as f64 / n,
        mean_trigger_length: trigger_words as f64 / n,
        per_type_counts,
    })
}

/// Long-tail co-occurrence statistics between triggers and event types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub k: usize,
    pub per_type_trigger_hist: BTreeMap<String, BTreeMap<String, usize>>,
    pub per_trigger_type_hist: BTreeMap<String, BTreeMap<String, usize>>,
    pub topk_trigger_share: BTreeMap<String, f64>,
    pub topk_type_share: BTreeMap<String, f64>,
}

/// Share of the `k` largest counts in a histogram.
pub fn topk_share<'a>(counts: impl IntoIterator<Item = &'a usize>, k: usize) -> f64 {
    let mut v: Vec<usize> = counts.into_iter().copied().collect();
    let total: usize = v.iter().sum();
    if total == 0 {
        return 0.0;
    }
    v.sort_unstable_by(|a, b| b.cmp(a));
    let top: usize = v.iter().take(k).sum();
    top as f64 / total as f64
}

pub fn trigger_bias_profile(c: &Corpus, k: usize) -> Result<BiasProfile, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroK);
    }
    if c.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut per_type: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut per_trigger: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for m in c.mentions() {
        let t = m.trigger_key();
        *per_type
            .entry(m.label.clone())
            .or_default()
            .entry(t.clone())
            .or_default() += 1;
        *per_trigger
            .entry(t)
            .or_default()
            .entry(m.label.clone())
            .or_default() += 1;
    }
    let topk_trigger_share = per_type
        .iter()
        .map(|(l, h)| (l.clone(), topk_share(h.values(), k)))
        .collect();
    let topk_type_share = per_trigger
        .iter()
        .map(|(t, h)| (t.clone(), topk_share(h.values(), k)))
        .collect();
    Ok(BiasProfile {
        k,
        per_type_trigger_hist: per_type,
        per_trigger_type_hist: per_trigger,
        topk_trigger_share,
        topk_type_share,
    })
}
