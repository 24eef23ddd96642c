//! Evaluation report files.

use std::path::Path;

use keysel_core::metrics::{EvalReport, Selector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{atomic_write, to_jsonl};

pub const FORMAT: &str = "keysel-eval-report";
pub const VERSION: u32 = 1;

/// Aggregate part of an evaluation; the per-episode records go to a
/// separate line-delimited file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub format: String,
    pub version: u32,
    pub selector: Selector,
    pub episodes: usize,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub multi_segment_episodes: usize,
    pub multi_segment_hit_rate: f64,
}

impl ReportSummary {
    pub fn of(report: &EvalReport) -> ReportSummary {
        let (rate, multi) = report.multi_segment_hit_rate();
        ReportSummary {
            format: FORMAT.into(),
            version: VERSION,
            selector: report.selector,
            episodes: report.episodes.len(),
            j_mean: report.j_mean,
            f_mean: report.f_mean,
            jf_mean: report.jf_mean,
            multi_segment_episodes: multi,
            multi_segment_hit_rate: rate,
        }
    }
}

/// Write `<dir>/eval_report.json` and `<dir>/eval_episodes.jsonl`.
pub fn write(dir: &Path, report: &EvalReport) -> Result<()> {
    let summary_path = dir.join("eval_report.json");
    let episodes_path = dir.join("eval_episodes.jsonl");
    let summary =
        serde_json::to_string_pretty(&ReportSummary::of(report)).map_err(|e| CliError::format(&summary_path, e))?;
    let episodes = to_jsonl(&report.episodes).map_err(|e| CliError::format(&episodes_path, e))?;
    atomic_write(&episodes_path, episodes.as_bytes())?;
    atomic_write(&summary_path, format!("{summary}\n").as_bytes())
}
