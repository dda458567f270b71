//! K-shot train/valid/test partitions and the IUS/TUS/COS probing subsets.
//!
//! All sampling draws from a seeded [`ChaCha8Rng`]; labels are visited in
//! label-space order, so a `(corpus, k, seed)` triple always yields the same
//! partition.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EventMention, LabelSpace};

/// Name and version of the generator recorded in every split artifact.
pub const RNG_NAME: &str = "chacha8/rand_chacha-0.9";

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no event type has more than 2k = {} mentions", 2 * .k)]
    NoLabelSurvives { k: usize },
    #[error("corpus of {n} mentions is too small for an 8:1:1 split (need at least 10)")]
    TooSmall { n: usize },
    #[error("label {label} has {available} mentions, fewer than k = {k}")]
    InsufficientMentions {
        label: String,
        available: usize,
        k: usize,
    },
    #[error("no label has at least k = {k} mentions with confusing triggers")]
    NoConfusingTriggers { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMethod {
    TrueFewShot,
    FullData,
}

/// A train/valid/test partition of mention ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub method: SplitMethod,
    /// Shots per type; zero for full-data splits.
    pub k: usize,
    pub seed: u64,
    pub rng: String,
    pub kept_labels: LabelSpace,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl FewShotSplit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Samples `k` training and `k` validation mentions per event type; the rest
/// form the test set. Types with `<= 2k` mentions are dropped first.
pub fn make_true_fewshot_split(c: &Corpus, k: usize, seed: u64) -> Result<FewShotSplit, SamplerError> {
    if k == 0 {
        return Err(SamplerError::ZeroK);
    }
    let groups = c.indices_by_label();
    let mut rng = rng(seed);
    let mut kept = Vec::new();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut in_test = vec![false; c.len()];

    for (label, idx) in c.labels().iter().zip(&groups) {
        if idx.len() <= 2 * k {
            continue;
        }
        kept.push(label.to_string());
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        train.extend(shuffled[..k].iter().map(|&i| c.mentions()[i].id.clone()));
        valid.extend(shuffled[k..2 * k].iter().map(|&i| c.mentions()[i].id.clone()));
        for &i in &shuffled[2 * k..] {
            in_test[i] = true;
        }
    }
    if kept.is_empty() {
        return Err(SamplerError::NoLabelSurvives { k });
    }
    let test = c
        .mentions()
        .iter()
        .zip(&in_test)
        .filter(|(_, &t)| t)
        .map(|(m, _)| m.id.clone())
        .collect();

    Ok(FewShotSplit {
        method: SplitMethod::TrueFewShot,
        k,
        seed,
        rng: RNG_NAME.to_string(),
        kept_labels: LabelSpace::new(kept),
        train,
        valid,
        test,
    })
}

/// Global sizes for an 8:1:1 split of `n` items: valid and test each take
/// `ceil(n / 10)`, train takes the rest.
pub fn fulldata_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = n.div_ceil(10);
    (n - 2 * tenth, tenth, tenth)
}

/// Largest-remainder apportionment of `total` across groups in proportion to
/// `weights`, never exceeding `caps`. Ties go to the earlier group.
fn apportion(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let mut alloc: Vec<usize> = weights
        .iter()
        .zip(caps)
        .map(|(&w, &cap)| ((w * total) / sum).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder of w * total / sum, compared exactly as integers
    order.sort_by(|&a, &b| {
        let ra = (weights[a] * total) % sum;
        let rb = (weights[b] * total) % sum;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - alloc.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &g in &order {
            if left == 0 {
                break;
            }
            if alloc[g] < caps[g] {
                alloc[g] += 1;
                left -= 1;
            }
        }
        assert!(left < before, "apportionment capacity exhausted");
    }
    alloc
}

/// 8:1:1 partition over every mention, stratified by label.
pub fn make_fulldata_split(c: &Corpus, seed: u64) -> Result<FewShotSplit, SamplerError> {
    let n = c.len();
    if n < 10 {
        return Err(SamplerError::TooSmall { n });
    }
    let (_, n_valid, n_test) = fulldata_sizes(n);
    let groups = c.indices_by_label();
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let valid_alloc = apportion(n_valid, &counts, &counts);
    let rest: Vec<usize> = counts.iter().zip(&valid_alloc).map(|(c, v)| c - v).collect();
    let test_alloc = apportion(n_test, &counts, &rest);

    let mut rng = rng(seed);
    let mut part = vec![0u8; n];
    for (g, idx) in groups.iter().enumerate() {
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..valid_alloc[g]] {
            part[i] = 1;
        }
        for &i in &shuffled[valid_alloc[g]..valid_alloc[g] + test_alloc[g]] {
            part[i] = 2;
        }
    }
    let ids = |p: u8| -> Vec<String> {
        c.mentions()
            .iter()
            .zip(&part)
            .filter(|(_, &q)| q == p)
            .map(|(m, _)| m.id.clone())
            .collect()
    };
    Ok(FewShotSplit {
        method: SplitMethod::FullData,
        k: 0,
        seed,
        rng: RNG_NAME.to_string(),
        kept_labels: c.labels().clone(),
        train: ids(0),
        valid: ids(1),
        test: ids(2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProbeMethod {
    #[serde(rename = "IUS")]
    Ius,
    #[serde(rename = "TUS")]
    Tus,
    #[serde(rename = "COS")]
    Cos,
}

impl fmt::Display for ProbeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeMethod::Ius => "IUS",
            ProbeMethod::Tus => "TUS",
            ProbeMethod::Cos => "COS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    NoConfusingTrigger,
    TooFewConfusing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLabel {
    pub label: String,
    pub reason: SkipReason,
    pub available: usize,
}

/// A debiasing test subset drawn from a split's test pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSubset {
    pub method: ProbeMethod,
    pub k: usize,
    pub seed: u64,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedLabel>,
}

/// Test mentions grouped by label, labels in label-space order.
#[derive(Debug, Clone)]
pub struct TestPool<'a> {
    groups: Vec<(String, Vec<&'a EventMention>)>,
}

impl<'a> TestPool<'a> {
    pub fn new(labels: &LabelSpace, mentions: impl IntoIterator<Item = &'a EventMention>) -> Self {
        let mut groups: Vec<(String, Vec<&EventMention>)> =
            labels.iter().map(|l| (l.to_string(), Vec::new())).collect();
        for m in mentions {
            if let Some(i) = labels.position(&m.label) {
                groups[i].1.push(m);
            }
        }
        TestPool { groups }
    }

    /// The test part of a split.
    pub fn from_split(corpus: &'a Corpus, split: &FewShotSplit) -> Self {
        TestPool::new(&split.kept_labels, corpus.select(&split.test))
    }

    pub fn groups(&self) -> &[(String, Vec<&'a EventMention>)] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mentions(&self) -> impl Iterator<Item = &'a EventMention> + '_ {
        self.groups.iter().flat_map(|(_, g)| g.iter().copied())
    }
}

fn check_k(k: usize) -> Result<(), SamplerError> {
    if k == 0 {
        Err(SamplerError::ZeroK)
    } else {
        Ok(())
    }
}

/// Instance uniform sampling: `k` random mentions per type.
pub fn sample_ius(pool: &TestPool<'_>, k: usize, seed: u64) -> Result<TestSubset, SamplerError> {
    check_k(k)?;
    for (label, g) in pool.groups() {
        if g.len() < k {
            return Err(SamplerError::InsufficientMentions {
                label: label.clone(),
                available: g.len(),
                k,
            });
        }
    }
    let mut rng = rng(seed);
    let mut ids = Vec::new();
    for (_, g) in pool.groups() {
        let mut g = g.clone();
        g.shuffle(&mut rng);
        ids.extend(g[..k].iter().map(|m| m.id.clone()));
    }
    Ok(TestSubset {
        method: ProbeMethod::Ius,
        k,
        seed,
        ids,
        skipped: Vec::new(),
    })
}

/// Draws `k` mentions round-robin over trigger groups. Group order and the
/// order within each group are shuffled first.
fn round_robin<'a>(mentions: &[&'a EventMention], k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a EventMention> {
    let mut groups: BTreeMap<String, Vec<&EventMention>> = BTreeMap::new();
    for &m in mentions {
        groups.entry(m.trigger_key()).or_default().push(m);
    }
    let mut groups: Vec<Vec<&EventMention>> = groups.into_values().collect();
    groups.shuffle(rng);
    for g in &mut groups {
        g.shuffle(rng);
    }
    let mut taken = Vec::with_capacity(k);
    let mut depth = 0;
    while taken.len() < k {
        let before = taken.len();
        for g in &groups {
            if taken.len() == k {
                break;
            }
            if let Some(&m) = g.get(depth) {
                taken.push(m);
            }
        }
        assert!(taken.len() > before, "round robin ran out of mentions");
        depth += 1;
    }
    taken
}

/// Trigger uniform sampling: `k` mentions per type spread evenly over the
/// type's distinct triggers.
pub fn sample_tus(pool: &TestPool<'_>, k: usize, seed: u64) -> Result<TestSubset, SamplerError> {
    check_k(k)?;
    for (label, g) in pool.groups() {
        if g.len() < k {
            return Err(SamplerError::InsufficientMentions {
                label: label.clone(),
                available: g.len(),
                k,
            });
        }
    }
    let mut rng = rng(seed);
    let mut ids = Vec::new();
    for (_, g) in pool.groups() {
        ids.extend(round_robin(g, k, &mut rng).into_iter().map(|m| m.id.clone()));
    }
    Ok(TestSubset {
        method: ProbeMethod::Tus,
        k,
        seed,
        ids,
        skipped: Vec::new(),
    })
}

/// Case-folded triggers attested under at least two event types.
pub fn confusing_triggers<'a>(mentions: impl IntoIterator<Item = &'a EventMention>) -> HashSet<String> {
    let mut labels_of: HashMap<String, HashSet<&str>> = HashMap::new();
    for m in mentions {
        labels_of.entry(m.trigger_key()).or_default().insert(&m.label);
    }
    labels_of
        .into_iter()
        .filter(|(_, ls)| ls.len() >= 2)
        .map(|(t, _)| t)
        .collect()
}

/// Confusion sampling: like TUS but restricted to triggers shared with other
/// types in `corpus`. Types without `k` such mentions are skipped and listed
/// in [`TestSubset::skipped`].
pub fn sample_cos(
    pool: &TestPool<'_>,
    corpus: &Corpus,
    k: usize,
    seed: u64,
) -> Result<TestSubset, SamplerError> {
    check_k(k)?;
    let confusing = confusing_triggers(corpus.mentions());
    let mut rng = rng(seed);
    let mut ids = Vec::new();
    let mut skipped = Vec::new();
    let mut sampled_labels = 0;
    for (label, g) in pool.groups() {
        let eligible: Vec<&EventMention> = g
            .iter()
            .copied()
            .filter(|m| confusing.contains(&m.trigger_key()))
            .collect();
        if eligible.len() < k {
            skipped.push(SkippedLabel {
                label: label.clone(),
                reason: if eligible.is_empty() {
                    SkipReason::NoConfusingTrigger
                } else {
                    SkipReason::TooFewConfusing
                },
                available: eligible.len(),
            });
            continue;
        }
        sampled_labels += 1;
        ids.extend(round_robin(&eligible, k, &mut rng).into_iter().map(|m| m.id.clone()));
    }
    if sampled_labels == 0 {
        return Err(SamplerError::NoConfusingTriggers { k });
    }
    Ok(TestSubset {
        method: ProbeMethod::Cos,
        k,
        seed,
        ids,
        skipped,
    })
}
