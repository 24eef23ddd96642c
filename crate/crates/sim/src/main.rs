use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use keysel::audit::Fault;
use keysel::commands;
use keysel::config::RunConfig;
use keysel::CliError;
use keysel_core::metrics::Selector;

#[derive(Parser)]
#[command(name = "keysel", version, about = "Keyframe-selection policy simulator")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: io.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set grpo.beta=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a corpus of episode specs.
    Gen {
        /// Episodes to generate (default: eval.corpus_size).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the policy with GRPO.
    Train,
    /// Score a checkpoint or a baseline selector.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus written by `gen` (default: the held-out corpus).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SelectorArg::Greedy)]
        selector: SelectorArg,
    },
    /// Check the library against brute-force oracles.
    Audit {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Greedy,
    Uniform,
    Oracle,
}

impl From<SelectorArg> for Selector {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Greedy => Selector::Greedy,
            SelectorArg::Uniform => Selector::Uniform,
            SelectorArg::Oracle => Selector::Oracle,
        }
    }
}

fn run(cli: Cli) -> keysel::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.io.out_dir.clone());
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen { count } => {
            let path = commands::gen(&cfg, seed, count.unwrap_or(cfg.eval.corpus_size), &out)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let log = commands::train(&cfg, seed, &out)?;
            if let Some(last) = log.last() {
                println!(
                    "iteration {} mean_reward {:.4} mean_kl {:.5}",
                    last.iteration, last.mean_reward, last.mean_kl
                );
            }
            println!("wrote {}", out.join(commands::CHECKPOINT_FILE).display());
        }
        Command::Eval {
            checkpoint,
            corpus,
            selector,
        } => {
            let eval_seed = cli.seed.unwrap_or(cfg.eval.seed);
            let r = commands::eval(
                &cfg,
                eval_seed,
                checkpoint.as_deref(),
                corpus.as_deref(),
                selector.into(),
                &out,
            )?;
            println!(
                "episodes {} J {:.4} F {:.4} J&F {:.4}",
                r.episodes.len(),
                r.j_mean,
                r.f_mean,
                r.jf_mean
            );
        }
        Command::Audit { cases, inject_fault } => {
            let report = commands::audit(&cfg, seed, cases, inject_fault, &out)?;
            for p in &report.properties {
                let verdict = if p.passed { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {} max_error={:.3e} tolerance={:.1e}",
                    p.name, p.max_error, p.tolerance
                );
            }
            let failed = report.failures();
            if failed > 0 {
                return Err(CliError::AuditFailed { failed });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
