//! The four subcommands. Each takes a resolved configuration and writes its
//! outputs under `out`.

use std::path::{Path, PathBuf};

use keysel_core::env::{generate_episode, EnvConfig, Episode, EpisodeSpec};
use keysel_core::grpo::{init_params, run_training_with, TrainingRecord};
use keysel_core::metrics::{evaluate, EvalReport, EvalSettings, Selector};
use keysel_core::policy::{PolicyParams, PolicyShape};
use keysel_core::seed::{child_seed, Stream};

use crate::audit::{run_audit, AuditReport, Fault};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{atomic_write, to_jsonl};
use crate::{checkpoint, corpus};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const AUDIT_FILE: &str = "audit_report.json";

/// Specs of `count` episodes derived from `seed`.
pub fn corpus_specs(env: &EnvConfig, seed: u64, count: usize) -> Vec<EpisodeSpec> {
    (0..count)
        .map(|i| EpisodeSpec {
            seed: child_seed(seed, Stream::Env, i as u64),
            config: env.clone(),
        })
        .collect()
}

/// Held-out episodes at the inference frame count.
pub fn heldout_corpus(env: &EnvConfig, seed: u64, count: usize) -> Result<Vec<Episode>> {
    let env = env.for_inference();
    Ok((0..count)
        .map(|i| generate_episode(&env, child_seed(seed, Stream::Eval, i as u64)))
        .collect::<keysel_core::Result<_>>()?)
}

/// Generate `count` episode specs and write them to `<out>/corpus.jsonl`.
pub fn gen(cfg: &RunConfig, seed: u64, count: usize, out: &Path) -> Result<PathBuf> {
    let specs = corpus_specs(&cfg.env, seed, count);
    // every spec must regenerate before anything is written
    corpus::regenerate(&specs)?;
    let path = out.join(CORPUS_FILE);
    corpus::write(&path, seed, &specs)?;
    Ok(path)
}

/// Train from a seeded initialization; writes the checkpoint, the log and the
/// resolved configuration.
pub fn train(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<TrainingRecord>> {
    let init = init_params(&cfg.grpo, seed)?;
    let heldout = if cfg.eval.every > 0 {
        heldout_corpus(&cfg.env, cfg.eval.seed, cfg.eval.heldout_size)?
    } else {
        Vec::new()
    };
    let settings = EvalSettings {
        env: &cfg.env.for_inference(),
        weights: &cfg.rewards,
        f_tolerance: cfg.eval.f_tolerance,
    };
    let run = run_training_with(&cfg.env, &cfg.rewards, &init, &cfg.grpo, seed, |it, params| {
        if cfg.eval.every == 0 || heldout.is_empty() || (it + 1) % cfg.eval.every != 0 {
            return Ok(None);
        }
        Ok(Some(evaluate(params, &heldout, &settings, Selector::Greedy)?.jf_mean))
    })?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let log = to_jsonl(&run.log).map_err(|e| CliError::format(&log_path, e))?;
    atomic_write(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    atomic_write(&log_path, log.as_bytes())?;
    checkpoint::save(&out.join(CHECKPOINT_FILE), &run.params, &cfg.env.colors)?;
    Ok(run.log)
}

/// Evaluate `selector`. The checkpoint is read first, so a bad one stops the
/// command before any output exists. Without a corpus file the held-out
/// corpus of `eval_seed` is used.
pub fn eval(
    cfg: &RunConfig,
    eval_seed: u64,
    checkpoint_path: Option<&Path>,
    corpus_path: Option<&Path>,
    selector: Selector,
    out: &Path,
) -> Result<EvalReport> {
    let shape = PolicyShape::new(cfg.grpo.k_max);
    let params = match (checkpoint_path, selector) {
        (Some(p), _) => checkpoint::load(p, shape, &cfg.env.colors)?,
        (None, Selector::Greedy) => checkpoint::load(&out.join(CHECKPOINT_FILE), shape, &cfg.env.colors)?,
        (None, _) => PolicyParams::zeros(shape),
    };
    let episodes = match corpus_path {
        Some(p) => {
            let (_, specs) = corpus::read(p)?;
            let specs: Vec<EpisodeSpec> = specs
                .into_iter()
                .map(|s| EpisodeSpec {
                    seed: s.seed,
                    config: s.config.for_inference(),
                })
                .collect();
            corpus::regenerate(&specs)?
        }
        None => heldout_corpus(&cfg.env, eval_seed, cfg.eval.corpus_size)?,
    };
    let settings = EvalSettings {
        env: &cfg.env.for_inference(),
        weights: &cfg.rewards,
        f_tolerance: cfg.eval.f_tolerance,
    };
    let report = evaluate(&params, &episodes, &settings, selector)?;
    crate::report::write(out, &report)?;
    Ok(report)
}

/// Run the oracle audit and write `<out>/audit_report.json`. Fails with
/// [`CliError::AuditFailed`] after writing if any property fails.
pub fn audit(cfg: &RunConfig, seed: u64, cases: usize, fault: Option<Fault>, out: &Path) -> Result<AuditReport> {
    let report = run_audit(&cfg.rewards, seed, cases, fault);
    let path = out.join(AUDIT_FILE);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::format(&path, e))?;
    atomic_write(&path, format!("{text}\n").as_bytes())?;
    Ok(report)
}
