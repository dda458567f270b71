//! Resolution of pretrained checkpoints from a local model-hub cache.
//!
//! Snapshots follow the hub layout
//! `<cache>/models--<org>--<name>/snapshots/<revision>/`. Only the
//! vocabulary is consumed here; it yields a [`WordPiece`] segmenter that
//! matches the pretrained tokenizer so prompts can be mapped to token ids.
//! No transformer forward pass ships with this crate, so
//! [`load_pretrained`] reports [`EncoderError::BackendUnavailable`] once the
//! snapshot is found.

use std::fs;
use std::path::PathBuf;

use super::{hub_cache_dir, EncoderError, EncoderKind, EncoderSpec, Vocab, WordPiece};

/// Overrides the hub cache location.
pub const HUB_CACHE_ENV: &str = "FSED_HUB_CACHE";

/// Directory of the newest snapshot for `identifier`.
pub fn resolve_snapshot(identifier: &str) -> Result<PathBuf, EncoderError> {
    let unavailable = |reason: String| EncoderError::BackendUnavailable {
        identifier: identifier.to_string(),
        reason,
    };
    let cache = hub_cache_dir().ok_or_else(|| unavailable("no hub cache directory".into()))?;
    let snapshots = cache
        .join(format!("models--{}", identifier.replace('/', "--")))
        .join("snapshots");
    let mut entries: Vec<PathBuf> = fs::read_dir(&snapshots)
        .map_err(|e| unavailable(format!("{}: {e}", snapshots.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    entries
        .pop()
        .ok_or_else(|| unavailable(format!("no snapshot under {}", snapshots.display())))
}

/// Vocabulary and segmenter of a pretrained snapshot.
pub fn load_tokenizer(identifier: &str) -> Result<(Vocab, WordPiece), EncoderError> {
    let dir = resolve_snapshot(identifier)?;
    let vocab = Vocab::from_vocab_file(&dir.join("vocab.txt"))?;
    let segmenter = WordPiece {
        lowercase: identifier.contains("uncased"),
        max_chars: 100,
    };
    Ok((vocab, segmenter))
}

/// Loads a pretrained backend. Always fails: only the tokenizer side of
/// pretrained snapshots is supported.
pub fn load_pretrained(spec: &EncoderSpec) -> Result<std::convert::Infallible, EncoderError> {
    debug_assert_eq!(spec.kind, EncoderKind::Pretrained);
    resolve_snapshot(&spec.identifier)?;
    Err(EncoderError::BackendUnavailable {
        identifier: spec.identifier.clone(),
        reason: "transformer weights are not executable by this build".into(),
    })
}
