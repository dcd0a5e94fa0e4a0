//! Trial and session log files.
//!
//! * `trial_<id>.csv`: one [`TraceRow`] per tick.
//! * `trial_<id>.events.jsonl`: one [`TrialEvent`] per line.
//! * `session_summary.csv`: one row per trial.
//! * `session_stats.csv`: mean and sample variance of each metric.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{SessionSummary, TraceRow, TrialError, TrialEvent, TrialRecord, TRACE_COLUMNS};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrialError + '_ {
    move |source| TrialError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> TrialError {
    TrialError::Log(format!("{}: {e}", path.display()))
}

pub fn trace_path(dir: &Path, trial_id: &str) -> PathBuf {
    dir.join(format!("trial_{trial_id}.csv"))
}

pub fn events_path(dir: &Path, trial_id: &str) -> PathBuf {
    dir.join(format!("trial_{trial_id}.events.jsonl"))
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), TrialError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(TRACE_COLUMNS).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Read a trace file, checking the header, row shape and tick order.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, TrialError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().from_reader(BufReader::new(file));
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(TrialError::Log(format!(
            "{}: unexpected header `{}`",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in r.deserialize() {
        let row: TraceRow = rec.map_err(|e| csv_err(path, e))?;
        if let Some(prev) = rows.last() {
            if row.tick <= prev.tick {
                return Err(TrialError::Log(format!(
                    "{}: tick {} follows tick {}",
                    path.display(),
                    row.tick,
                    prev.tick
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_events(path: &Path, events: &[TrialEvent]) -> Result<(), TrialError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(|e| TrialError::Log(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_events(path: &Path) -> Result<Vec<TrialEvent>, TrialError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| TrialError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Write the trace and event files of one trial into `dir`.
pub fn write_trial(dir: &Path, record: &TrialRecord) -> Result<(), TrialError> {
    write_trace(&trace_path(dir, &record.trial_id), &record.trace)?;
    write_events(&events_path(dir, &record.trial_id), &record.events)
}

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "trial_id",
    "scenario",
    "condition",
    "seed",
    "outcome",
    "score",
    "time_remaining",
    "exploration_contacts",
    "exploration_contact_rate",
    "fast_slips",
    "fast_slip_rate",
    "dropped",
    "final_status",
];

pub fn write_session_summary(path: &Path, records: &[TrialRecord]) -> Result<(), TrialError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(SUMMARY_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.trial_id.clone(),
            r.scenario.clone(),
            r.condition.to_string(),
            r.seed.to_string(),
            r.outcome.as_str().to_string(),
            r.score.value().to_string(),
            r.time_remaining.to_string(),
            r.exploration_contacts.to_string(),
            r.exploration_contact_rate.to_string(),
            r.fast_slips.to_string(),
            r.fast_slip_rate.to_string(),
            r.dropped.to_string(),
            r.final_status.as_str().to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_session_stats(path: &Path, summary: &SessionSummary) -> Result<(), TrialError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["metric", "mean", "variance", "n", "variance_defined"])
        .map_err(|e| csv_err(path, e))?;
    for (name, s) in summary.metrics() {
        w.write_record([
            name.to_string(),
            s.mean.to_string(),
            s.variance.to_string(),
            s.n.to_string(),
            s.variance_defined.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}
