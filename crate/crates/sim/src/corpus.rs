//! Episode corpora: a header line followed by one episode spec per line.

use std::path::Path;

use keysel_core::env::{Episode, EpisodeSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{atomic_write, from_jsonl, read_text, to_jsonl};

pub const FORMAT: &str = "keysel-corpus";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub count: usize,
}

pub fn write(path: &Path, seed: u64, specs: &[EpisodeSpec]) -> Result<()> {
    let header = CorpusHeader {
        format: FORMAT.into(),
        version: VERSION,
        seed,
        count: specs.len(),
    };
    let mut text = serde_json::to_string(&header).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    text.push_str(&to_jsonl(specs).map_err(|e| CliError::format(path, e))?);
    atomic_write(path, text.as_bytes())
}

pub fn read(path: &Path) -> Result<(CorpusHeader, Vec<EpisodeSpec>)> {
    let text = read_text(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let header: CorpusHeader =
        serde_json::from_str(first).map_err(|e| CliError::format(path, format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(CliError::format(path, format!("not a {FORMAT} v{VERSION} file")));
    }
    let specs: Vec<EpisodeSpec> = from_jsonl(path, rest)?;
    if specs.len() != header.count {
        return Err(CliError::format(
            path,
            format!("header announces {} episodes, found {}", header.count, specs.len()),
        ));
    }
    Ok((header, specs))
}

/// Rebuild the episodes of a corpus.
pub fn regenerate(specs: &[EpisodeSpec]) -> Result<Vec<Episode>> {
    Ok(specs
        .iter()
        .map(EpisodeSpec::generate)
        .collect::<keysel_core::Result<_>>()?)
}
