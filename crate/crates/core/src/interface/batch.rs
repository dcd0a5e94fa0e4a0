//! Headless execution of scripted scenarios.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::SessionConfig;
use crate::trials::{self, log, run_trial, Outcome, Scenario, SessionSummary, TrialError, TrialRecord};
use crate::Condition;

pub const SUMMARY_FILE: &str = "session_summary.csv";
pub const STATS_FILE: &str = "session_stats.csv";

#[derive(Debug)]
pub struct BatchReport {
    /// One record per scenario, in input order. Traces and events are
    /// dropped once written to disk.
    pub records: Vec<TrialRecord>,
    pub summary: Option<SessionSummary>,
    pub aborted: usize,
}

impl BatchReport {
    /// Process exit status: nonzero when any trial aborted.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.aborted > 0)
    }
}

/// Trial id for the `index`th scenario of a batch.
pub fn trial_id(index: usize, scenario: &str) -> String {
    let name: String = scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{name}")
}

/// Load every scenario, then run them in parallel. Scenario `i` uses
/// `seed + i` unless it pins its own seed. Writes one trace and event log per
/// trial plus the session summary and statistics into `out`.
pub fn run_batch(
    scenario_paths: &[PathBuf],
    config: &SessionConfig,
    condition: Condition,
    seed: u64,
    out: &Path,
) -> Result<BatchReport, TrialError> {
    config.validate()?;
    let scenarios = scenario_paths
        .iter()
        .map(|p| Scenario::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).map_err(|source| TrialError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let settings = config.settings();

    let records = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let id = trial_id(i, &s.name);
            let mut record = run_trial(s, &settings, condition, seed.wrapping_add(i as u64), &id)?;
            log::write_trial(out, &record)?;
            tracing::info!(
                trial = %id,
                outcome = record.outcome.as_str(),
                score = record.score.value(),
                "trial finished"
            );
            record.trace = Vec::new();
            record.events = Vec::new();
            Ok(record)
        })
        .collect::<Result<Vec<_>, TrialError>>()?;

    log::write_session_summary(&out.join(SUMMARY_FILE), &records)?;
    let summary = trials::summarize(&records);
    if let Some(s) = &summary {
        log::write_session_stats(&out.join(STATS_FILE), s)?;
    }
    let aborted = records.iter().filter(|r| r.outcome == Outcome::Aborted).count();
    Ok(BatchReport {
        records,
        summary,
        aborted,
    })
}
