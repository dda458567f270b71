//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use fsed::evaluator::DEFAULT_INTERVALS;
use fsed::sampler::DEFAULT_SEED;
use fsed::{EncoderSpec, PromptConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: PathBuf,
    /// Shots per type.
    pub k: usize,
    pub split_seed: u64,
    /// Use the 8:1:1 full-data split instead of K-shot sampling.
    pub full_data: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: PathBuf::from("data/toy/corpus.jsonl"),
            k: 4,
            split_seed: DEFAULT_SEED,
            full_data: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Per-type sample size for the debiasing probes.
    pub debias_k: usize,
    pub length_intervals: Vec<(usize, usize)>,
    /// `k` of the top-k trigger share in bias profiles.
    pub bias_top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            debias_k: 4,
            length_intervals: DEFAULT_INTERVALS.to_vec(),
            bias_top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderSpec,
    pub prompt: PromptConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Reads `path` (or starts from defaults), applies overrides in order and
/// validates the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, String> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            text.parse::<toml::Table>().map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| e.to_string())?;
    if cfg.data.k == 0 && !cfg.data.full_data {
        return Err("data.k must be positive".into());
    }
    cfg.train.validate()?;
    cfg.prompt.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// `a.b.c=value`, where value is read as a TOML literal and falls back to a
/// plain string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), String> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("override {item:?} is not key=value"))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("bad override key {key:?}"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("override {key:?} descends into a non-table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// First 12 hex digits of the SHA-256 of `parts` in canonical JSON.
pub fn hash12<T: Serialize>(parts: &T) -> String {
    let json = serde_json::to_vec(parts).expect("config serializes");
    hex::encode(Sha256::digest(json))[..12].to_string()
}
