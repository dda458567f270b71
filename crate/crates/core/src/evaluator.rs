//! Inference, metrics, and evaluation breakdowns.
//!
//! Weighted metrics average per-label precision, recall and F1 with gold
//! supports as weights. A ratio with a zero denominator counts as 0. Labels
//! without gold support carry weight 0.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{fold, Corpus, EventMention, LabelSpace};
use crate::encoder::MaskedLm;
use crate::model::{Model, ModelError, Prediction};
use crate::sampler::{self, FewShotSplit, ProbeMethod, SkippedLabel, TestPool};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    Empty,
    #[error("no prediction for mention {0:?}")]
    MissingPrediction(String),
    #[error("{predictions} predictions for {golds} gold mentions")]
    Misaligned { predictions: usize, golds: usize },
    #[error("gold label {0:?} is not in the label space")]
    UnknownLabel(String),
    #[error("interval ({lo}, {hi}] is empty or overlaps another")]
    BadInterval { lo: usize, hi: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Predictions for `mentions`, in input order. Batches of `batch_size` are
/// evaluated in parallel; each mention is scored independently, so the
/// result does not depend on the batch size.
pub fn predict<E: MaskedLm>(
    model: &Model<E>,
    mentions: &[&EventMention],
    batch_size: usize,
) -> Result<Vec<Prediction>, ModelError> {
    let batch_size = batch_size.max(1);
    let mut out = Vec::with_capacity(mentions.len());
    for batch in mentions.chunks(batch_size) {
        let preds: Result<Vec<Prediction>, ModelError> = batch.par_iter().map(|m| model.predict(m)).collect();
        out.extend(preds?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub trigger_accuracy: f64,
    pub per_label: Vec<LabelMetrics>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Metrics from a confusion matrix with rows = gold and columns = predicted.
/// `trigger_accuracy` is left at 0.
pub fn metrics_from_confusion(confusion: &[Vec<u64>], labels: &LabelSpace) -> Result<EvalReport, EvalError> {
    let n_labels = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let correct: u64 = (0..n_labels).map(|i| confusion[i][i]).sum();
    let mut per_label = Vec::with_capacity(n_labels);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for i in 0..n_labels {
        let tp = confusion[i][i] as f64;
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let w = support as f64;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_label.push(LabelMetrics {
            label: labels.get(i).map(str::to_string).unwrap_or_else(|| i.to_string()),
            support: support as usize,
            precision,
            recall,
            f1,
        });
    }
    let t = total as f64;
    Ok(EvalReport {
        n: total as usize,
        accuracy: correct as f64 / t,
        weighted_precision: wp / t,
        weighted_recall: wr / t,
        weighted_f1: wf / t,
        trigger_accuracy: 0.0,
        per_label,
    })
}

/// Counts gold (row) against predicted (column) label indices.
pub fn confusion_matrix(
    preds: &[Prediction],
    golds: &[&EventMention],
    labels: &LabelSpace,
) -> Result<Vec<Vec<u64>>, EvalError> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if preds.len() != golds.len() {
        return Err(EvalError::Misaligned {
            predictions: preds.len(),
            golds: golds.len(),
        });
    }
    let n = labels.len();
    let mut cm = vec![vec![0u64; n]; n];
    for g in golds {
        let p = by_id.get(g.id.as_str()).ok_or_else(|| EvalError::MissingPrediction(g.id.clone()))?;
        let gi = labels.position(&g.label).ok_or_else(|| EvalError::UnknownLabel(g.label.clone()))?;
        let pi = labels
            .position(&p.predicted_label)
            .ok_or_else(|| EvalError::UnknownLabel(p.predicted_label.clone()))?;
        cm[gi][pi] += 1;
    }
    Ok(cm)
}

/// The predicted trigger is correct if it matches any word of the gold span,
/// ignoring case.
pub fn trigger_correct(pred: &Prediction, gold: &EventMention) -> bool {
    let w = fold(&pred.predicted_trigger.word);
    gold.trigger_words().iter().any(|g| fold(g) == w)
}

pub fn compute_metrics(
    preds: &[Prediction],
    golds: &[&EventMention],
    labels: &LabelSpace,
) -> Result<EvalReport, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::Empty);
    }
    let cm = confusion_matrix(preds, golds, labels)?;
    let mut report = metrics_from_confusion(&cm, labels)?;
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let hits = golds.iter().filter(|g| trigger_correct(by_id[g.id.as_str()], g)).count();
    report.trigger_accuracy = hits as f64 / golds.len() as f64;
    Ok(report)
}

/// Predicts and scores `mentions` in one call.
pub fn evaluate<E: MaskedLm>(
    model: &Model<E>,
    mentions: &[&EventMention],
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    if mentions.is_empty() {
        return Err(EvalError::Empty);
    }
    let preds = predict(model, mentions, batch_size)?;
    compute_metrics(&preds, mentions, &model.labels)
}

/// Length intervals `(lo, hi]` in words.
pub const DEFAULT_INTERVALS: [(usize, usize); 5] = [(10, 20), (20, 30), (30, 40), (40, 50), (50, 60)];

/// Index of the interval containing `len`.
pub fn bucket_of(len: usize, intervals: &[(usize, usize)]) -> Option<usize> {
    intervals.iter().position(|&(lo, hi)| lo < len && len <= hi)
}

fn check_intervals(intervals: &[(usize, usize)]) -> Result<(), EvalError> {
    for (i, &(lo, hi)) in intervals.iter().enumerate() {
        if lo >= hi {
            return Err(EvalError::BadInterval { lo, hi });
        }
        for &(lo2, hi2) in &intervals[..i] {
            if lo < hi2 && lo2 < hi {
                return Err(EvalError::BadInterval { lo, hi });
            }
        }
    }
    Ok(())
}

/// Splits mentions by word count. Returns one group per interval and the
/// mentions outside every interval.
pub fn bucket_mentions<'a>(
    mentions: &[&'a EventMention],
    intervals: &[(usize, usize)],
) -> Result<(Vec<Vec<&'a EventMention>>, Vec<&'a EventMention>), EvalError> {
    check_intervals(intervals)?;
    let mut buckets = vec![Vec::new(); intervals.len()];
    let mut outside = Vec::new();
    for m in mentions {
        match bucket_of(m.len(), intervals) {
            Some(b) => buckets[b].push(*m),
            None => outside.push(*m),
        }
    }
    Ok((buckets, outside))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    /// Absent when the bucket is empty.
    pub report: Option<EvalReport>,
}

pub fn length_bucket_eval<E: MaskedLm>(
    model: &Model<E>,
    mentions: &[&EventMention],
    intervals: &[(usize, usize)],
    batch_size: usize,
) -> Result<Vec<BucketReport>, EvalError> {
    let (buckets, _) = bucket_mentions(mentions, intervals)?;
    buckets
        .iter()
        .zip(intervals)
        .map(|(b, &(lo, hi))| {
            let report = if b.is_empty() {
                None
            } else {
                Some(evaluate(model, b, batch_size)?)
            };
            Ok(BucketReport {
                lo,
                hi,
                count: b.len(),
                report,
            })
        })
        .collect()
}

/// Full test pool or a sampled subset of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DebiasMethod {
    #[serde(rename = "Full-Test")]
    FullTest,
    #[serde(rename = "IUS")]
    Ius,
    #[serde(rename = "TUS")]
    Tus,
    #[serde(rename = "COS")]
    Cos,
}

impl DebiasMethod {
    pub const ALL: [DebiasMethod; 4] = [DebiasMethod::FullTest, DebiasMethod::Ius, DebiasMethod::Tus, DebiasMethod::Cos];

    pub fn name(self) -> &'static str {
        match self {
            DebiasMethod::FullTest => "Full-Test",
            DebiasMethod::Ius => "IUS",
            DebiasMethod::Tus => "TUS",
            DebiasMethod::Cos => "COS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasEntry {
    pub method: DebiasMethod,
    pub size: usize,
    /// Absent when sampling failed; see `error`.
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedLabel>,
}

/// Scores the full test pool and the IUS, TUS and COS subsets. A sampler
/// failure marks that entry unavailable without affecting the others.
pub fn debias_eval<E: MaskedLm>(
    model: &Model<E>,
    corpus: &Corpus,
    split: &FewShotSplit,
    k: usize,
    seed: u64,
    batch_size: usize,
) -> Result<Vec<DebiasEntry>, EvalError> {
    let pool = TestPool::from_split(corpus, split);
    let full: Vec<&EventMention> = pool.mentions().collect();
    let mut out = Vec::with_capacity(4);
    for method in DebiasMethod::ALL {
        let subset = match method {
            DebiasMethod::FullTest => Ok((full.clone(), Vec::new())),
            DebiasMethod::Ius | DebiasMethod::Tus | DebiasMethod::Cos => {
                let s = match method {
                    DebiasMethod::Ius => sampler::sample_ius(&pool, k, seed),
                    DebiasMethod::Tus => sampler::sample_tus(&pool, k, seed),
                    _ => sampler::sample_cos(&pool, corpus, k, seed),
                };
                s.map(|s| (corpus.select(&s.ids), s.skipped))
            }
        };
        out.push(match subset {
            Ok((ms, skipped)) => DebiasEntry {
                method,
                size: ms.len(),
                report: Some(evaluate(model, &ms, batch_size)?),
                error: None,
                skipped,
            },
            Err(e) => DebiasEntry {
                method,
                size: 0,
                report: None,
                error: Some(e.to_string()),
                skipped: Vec::new(),
            },
        });
    }
    Ok(out)
}

impl From<ProbeMethod> for DebiasMethod {
    fn from(p: ProbeMethod) -> Self {
        match p {
            ProbeMethod::Ius => DebiasMethod::Ius,
            ProbeMethod::Tus => DebiasMethod::Tus,
            ProbeMethod::Cos => DebiasMethod::Cos,
        }
    }
}

/// Aligned plain-text table, one row per report, metrics in percent.
pub fn render_table(title: &str, rows: &[(String, Option<&EvalReport>)]) -> String {
    let head = ["Acc", "W-P", "W-R", "W-F1", "Trigger"];
    let width = rows.iter().map(|(n, _)| n.len()).chain([title.len()]).max().unwrap_or(0);
    let mut s = format!("{title:<width$}");
    for h in head {
        let _ = write!(s, "  {h:>7}");
    }
    s.push('\n');
    for (name, r) in rows {
        let _ = write!(s, "{name:<width$}");
        match r {
            Some(r) => {
                for v in [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1, r.trigger_accuracy] {
                    let _ = write!(s, "  {:>7.2}", v * 100.0);
                }
            }
            None => {
                for _ in head {
                    let _ = write!(s, "  {:>7}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TriggerGuess;

    fn labels() -> LabelSpace {
        LabelSpace::new(["A", "B"])
    }

    fn mention(id: &str, label: &str, words: &[&str], trig: usize) -> EventMention {
        EventMention {
            id: id.into(),
            words: words.iter().map(|w| w.to_string()).collect(),
            trigger_start: trig,
            trigger_end: trig + 1,
            trigger: words[trig].into(),
            label: label.into(),
        }
    }

    fn pred(id: &str, label: &str, word: &str) -> Prediction {
        Prediction {
            id: id.into(),
            predicted_trigger: TriggerGuess {
                index: 0,
                word: word.into(),
            },
            predicted_label: label.into(),
            label_index: if label == "A" { 0 } else { 1 },
            distribution: vec![0.5, 0.5],
        }
    }

    #[test]
    fn weighted_f1_hand_example() {
        let cm = vec![vec![3, 0], vec![1, 0]];
        let r = metrics_from_confusion(&cm, &labels()).unwrap();
        assert!((r.weighted_f1 - 0.642857).abs() < 1e-6);
        assert!((r.per_label[0].f1 - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(r.per_label[1].f1, 0.0);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn perfect_predictions() {
        let golds = [mention("1", "A", &["x", "hit"], 1), mention("2", "B", &["go"], 0)];
        let refs: Vec<&EventMention> = golds.iter().collect();
        let preds = [pred("2", "B", "Go"), pred("1", "A", "hit")];
        let r = compute_metrics(&preds, &refs, &labels()).unwrap();
        for v in [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1, r.trigger_accuracy] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn multiword_span_any_word_counts() {
        let mut g = mention("1", "A", &["they", "blew", "up", "it"], 1);
        g.trigger_end = 3;
        g.trigger = "blew up".into();
        assert!(trigger_correct(&pred("1", "A", "up"), &g));
        assert!(!trigger_correct(&pred("1", "A", "it"), &g));
    }

    #[test]
    fn empty_and_missing() {
        assert!(matches!(compute_metrics(&[], &[], &labels()), Err(EvalError::Empty)));
        let g = mention("1", "A", &["x"], 0);
        assert!(matches!(
            compute_metrics(&[pred("9", "A", "x")], &[&g], &labels()),
            Err(EvalError::MissingPrediction(_))
        ));
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucket_of(20, &DEFAULT_INTERVALS), Some(0));
        assert_eq!(bucket_of(21, &DEFAULT_INTERVALS), Some(1));
        assert_eq!(bucket_of(10, &DEFAULT_INTERVALS), None);
        assert_eq!(bucket_of(61, &DEFAULT_INTERVALS), None);
        let ms: Vec<EventMention> = [15, 25, 35]
            .iter()
            .map(|&n| mention(&n.to_string(), "A", &vec!["w"; n], 0))
            .collect();
        let refs: Vec<&EventMention> = ms.iter().collect();
        let (b, out) = bucket_mentions(&refs, &DEFAULT_INTERVALS).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 1, 0, 0]);
        assert!(out.is_empty());
        assert!(bucket_mentions(&refs, &[(0, 10), (5, 15)]).is_err());
        assert!(bucket_mentions(&refs, &[(3, 3)]).is_err());
    }

    #[test]
    fn table_layout() {
        let cm = vec![vec![3, 0], vec![1, 0]];
        let r = metrics_from_confusion(&cm, &labels()).unwrap();
        let t = render_table("Variant", &[("M+O".into(), Some(&r)), ("COS".into(), None)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("75.00"));
        assert!(lines[2].trim_end().ends_with('-'));
        assert_eq!(lines[0].len(), lines[1].len());
    }
}
