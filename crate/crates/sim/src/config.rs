//! Run configuration: one TOML file with `env`, `rewards`, `grpo`, `eval`
//! and `io` sections.

use std::path::{Path, PathBuf};

use keysel_core::env::EnvConfig;
use keysel_core::grpo::GrpoConfig;
use keysel_core::rewards::RewardWeights;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out episodes used by `eval` when no corpus is given.
    pub corpus_size: usize,
    /// Seed of the held-out corpus.
    pub seed: u64,
    /// Boundary tolerance of the F measure, in pixels.
    pub f_tolerance: usize,
    /// Evaluate on the held-out corpus every this many training iterations
    /// (0 turns it off).
    pub every: usize,
    /// Held-out episodes used during training.
    pub heldout_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            corpus_size: 200,
            seed: 20_240_601,
            f_tolerance: 1,
            every: 0,
            heldout_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub rewards: RewardWeights,
    pub grpo: GrpoConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides` of the
    /// form `section.key=value`; the result is validated.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let origin = path.map_or_else(|| PathBuf::from("<defaults>"), Path::to_path_buf);
        let mut table = match path {
            Some(p) => {
                let text = crate::io::read_text(p)?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config {
                    path: origin.clone(),
                    message: e.to_string(),
                })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config {
                path: origin.clone(),
                message: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: PathBuf::from("<string>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.rewards.validate()?;
        self.grpo.validate()?;
        let bad = |key: &str, reason: &str| {
            Err(CliError::Core(keysel_core::Error::InvalidConfig {
                key: key.into(),
                reason: reason.into(),
            }))
        };
        if self.eval.corpus_size == 0 {
            return bad("eval.corpus_size", "must be at least 1");
        }
        if self.eval.f_tolerance > 16 {
            return bad("eval.f_tolerance", "must lie in 0..=16");
        }
        if self.eval.every > 0 && self.eval.heldout_size == 0 {
            return bad("eval.heldout_size", "must be at least 1 when eval.every is set");
        }
        if self.io.out_dir.as_os_str().is_empty() {
            return bad("io.out_dir", "must not be empty");
        }
        Ok(())
    }
}

/// Set `section.key` (or deeper) in `table`. The value is read as TOML and
/// falls back to a plain string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Override(spec.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Override(spec.into()));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| CliError::Override(spec.into()))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[grpo]\ngroup_sise = 8\n").unwrap_err();
        assert!(err.to_string().contains("group_sise"), "{err}");
        assert!(RunConfig::from_toml_str("[optimizer]\nlr = 1\n").is_err());
    }

    #[test]
    fn ranges_are_checked_with_the_key_named() {
        let err = RunConfig::from_toml_str("[grpo]\nclip_eps = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("grpo.clip_eps"), "{err}");
        let err = RunConfig::from_toml_str("[env]\nobjects_max = 9\n").unwrap_err();
        assert!(err.to_string().contains("env.objects"), "{err}");
    }

    #[test]
    fn overrides_beat_the_file() {
        let mut t = "[grpo]\nbeta = 0.5\n".parse::<toml::Table>().unwrap();
        apply_override(&mut t, "grpo.beta=0").unwrap();
        apply_override(&mut t, "io.out_dir=some/dir").unwrap();
        apply_override(&mut t, "env.colors=[\"red\", \"teal\"]").unwrap();
        let cfg: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.grpo.beta, 0.0);
        assert_eq!(cfg.io.out_dir, PathBuf::from("some/dir"));
        assert_eq!(cfg.env.colors, ["red", "teal"]);
        assert!(apply_override(&mut toml::Table::new(), "beta").is_err());
        assert!(apply_override(&mut toml::Table::new(), "beta=1").is_err());
    }
}
