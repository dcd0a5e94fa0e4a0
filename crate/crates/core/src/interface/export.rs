//! Plot-ready export of a trial trace: closing command, aperture, pressure,
//! contact location, tactor current, and the object's distance from the end
//! bin and height.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tactile::ContactSide;
use crate::trials::{log, EventKind, Milestone, TraceRow, TrialError, TrialEvent};
use crate::tick_to_seconds;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{path}: integrity error: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error(transparent)]
    Trial(#[from] TrialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(format!("unknown export format `{other}` (expected csv|svg)")),
        }
    }
}

pub const EXPORT_COLUMNS: [&str; 9] = ["t", "u_c", "a", "p", "x", "side", "I", "D", "H"];

/// Time-aligned channel arrays, one entry per tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Channels {
    pub t: Vec<f64>,
    pub u_c: Vec<f64>,
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub x: Vec<Option<f64>>,
    pub side: Vec<ContactSide>,
    pub i: Vec<f64>,
    pub d: Vec<f64>,
    pub h: Vec<f64>,
    /// Time the object was placed, if it was.
    pub placed_at: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExportRow {
    t: f64,
    u_c: f64,
    a: f64,
    p: f64,
    x: Option<f64>,
    side: ContactSide,
    #[serde(rename = "I")]
    i: f64,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "H")]
    h: f64,
}

impl Channels {
    pub fn from_trace(rows: &[TraceRow]) -> Self {
        let mut c = Channels::default();
        for r in rows {
            c.t.push(tick_to_seconds(r.tick));
            c.u_c.push(r.u_c);
            c.a.push(r.aperture);
            c.p.push(r.p);
            c.x.push(r.x);
            c.side.push(r.side);
            c.i.push(r.tactor_current);
            c.d.push(r.d);
            c.h.push(r.h);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrialError> {
        let log_err = |e: csv::Error| TrialError::Log(format!("{}: {e}", path.display()));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(log_err)?;
        w.write_record(EXPORT_COLUMNS).map_err(log_err)?;
        for k in 0..self.len() {
            w.serialize(ExportRow {
                t: self.t[k],
                u_c: self.u_c[k],
                a: self.a[k],
                p: self.p[k],
                x: self.x[k],
                side: self.side[k],
                i: self.i[k],
                d: self.d[k],
                h: self.h[k],
            })
            .map_err(log_err)?;
        }
        w.flush().map_err(|source| TrialError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self, ExportError> {
        let integrity = |message: String| ExportError::Integrity {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| integrity(e.to_string()))?;
        let header = r.headers().map_err(|e| integrity(e.to_string()))?;
        if header.iter().ne(EXPORT_COLUMNS) {
            return Err(integrity(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut c = Channels::default();
        for row in r.deserialize() {
            let row: ExportRow = row.map_err(|e| integrity(e.to_string()))?;
            c.t.push(row.t);
            c.u_c.push(row.u_c);
            c.a.push(row.a);
            c.p.push(row.p);
            c.x.push(row.x);
            c.side.push(row.side);
            c.i.push(row.i);
            c.d.push(row.d);
            c.h.push(row.h);
        }
        Ok(c)
    }

    /// Stacked line plots, one panel per channel group.
    pub fn to_svg(&self) -> String {
        const W: f64 = 900.0;
        const PANEL_H: f64 = 90.0;
        const GAP: f64 = 18.0;
        const LEFT: f64 = 70.0;
        let panels: [(&str, Vec<Option<f64>>); 7] = [
            ("u_c", self.u_c.iter().copied().map(Some).collect()),
            ("a (m)", self.a.iter().copied().map(Some).collect()),
            ("p", self.p.iter().copied().map(Some).collect()),
            ("x", self.x.clone()),
            ("I (A)", self.i.iter().copied().map(Some).collect()),
            ("D (m)", self.d.iter().copied().map(Some).collect()),
            ("H (m)", self.h.iter().copied().map(Some).collect()),
        ];
        let height = panels.len() as f64 * (PANEL_H + GAP) + GAP + 20.0;
        let t_end = self.t.last().copied().unwrap_or(0.0).max(1e-3);
        let sx = |t: f64| LEFT + t / t_end * (W - LEFT - 10.0);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (n, (label, values)) in panels.iter().enumerate() {
            let top = GAP + n as f64 * (PANEL_H + GAP);
            let (lo, hi) = value_range(values);
            let sy = |v: f64| top + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;
            let _ = writeln!(
                svg,
                r##"<rect x="{LEFT}" y="{top}" width="{}" height="{PANEL_H}" fill="none" stroke="#999"/>"##,
                W - LEFT - 10.0
            );
            let _ = writeln!(svg, r#"<text x="4" y="{}">{label}</text>"#, top + PANEL_H / 2.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 4.0, top + 10.0, fmt_tick(hi));
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 4.0, top + PANEL_H, fmt_tick(lo));
            for run in polyline_runs(&self.t, values) {
                let pts: Vec<String> = run.iter().map(|&(t, v)| format!("{:.1},{:.1}", sx(t), sy(v))).collect();
                let _ = writeln!(
                    svg,
                    r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{}"/>"##,
                    pts.join(" ")
                );
            }
        }
        if let Some(tp) = self.placed_at {
            let x = sx(tp);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.1}" y1="{GAP}" x2="{x:.1}" y2="{}" stroke="#000" stroke-dasharray="3,3"/>"##,
                height - 20.0 - GAP
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">t (s), 0 to {t_end:.3}</text>"#,
            (W + LEFT) / 2.0,
            height - 6.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

fn value_range(values: &[Option<f64>]) -> (f64, f64) {
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Contiguous defined stretches of a channel, reduced to at most about 2000
/// points each by keeping the minimum and maximum of every bucket.
fn polyline_runs(t: &[f64], values: &[Option<f64>]) -> Vec<Vec<(f64, f64)>> {
    const MAX_POINTS: usize = 2000;
    let bucket = (values.len() / (MAX_POINTS / 2)).max(1);
    let mut runs = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let mut start = 0;
    while start < values.len() {
        let end = (start + bucket).min(values.len());
        let chunk: Vec<(f64, f64)> = (start..end).filter_map(|k| values[k].map(|v| (t[k], v))).collect();
        if chunk.len() < end - start && !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
        if let (Some(lo), Some(hi)) = (
            chunk.iter().min_by(|a, b| a.1.total_cmp(&b.1)),
            chunk.iter().max_by(|a, b| a.1.total_cmp(&b.1)),
        ) {
            if lo.0 <= hi.0 {
                current.extend([*lo, *hi]);
            } else {
                current.extend([*hi, *lo]);
            }
        }
        start = end;
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

/// Event log written next to a trace (`trial_<id>.csv` -> `trial_<id>.events.jsonl`).
pub fn events_path_for(trace: &Path) -> PathBuf {
    let stem = trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trace.with_file_name(format!("{stem}.events.jsonl"))
}

/// Default output path for an export of `trace`.
pub fn default_output(trace: &Path, format: ExportFormat) -> PathBuf {
    let stem = trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match format {
        ExportFormat::Csv => trace.with_file_name(format!("{stem}.export.csv")),
        ExportFormat::Svg => trace.with_file_name(format!("{stem}.svg")),
    }
}

/// Read a trial trace and, when present, its event log, checking that the
/// ticks start at zero without gaps and that the log agrees on the length.
pub fn load_trial(trace: &Path) -> Result<Channels, ExportError> {
    let integrity = |message: String| ExportError::Integrity {
        path: trace.to_path_buf(),
        message,
    };
    let rows = log::read_trace(trace).map_err(|e| match e {
        TrialError::Log(m) => integrity(m),
        other => ExportError::Trial(other),
    })?;
    if let Some((k, r)) = rows.iter().enumerate().find(|(k, r)| r.tick != *k as u64) {
        return Err(integrity(format!("row {k} has tick {}, expected {k}", r.tick)));
    }
    if let Some(r) = rows.iter().find(|r| !row_is_finite(r)) {
        return Err(integrity(format!("non-finite value at tick {}", r.tick)));
    }
    let mut channels = Channels::from_trace(&rows);

    let events_path = events_path_for(trace);
    if events_path.exists() {
        let events = log::read_events(&events_path)?;
        check_events(&events, rows.len()).map_err(integrity)?;
        channels.placed_at = events.iter().find_map(|e| match e.kind {
            EventKind::Milestone { milestone: Milestone::Placed } => Some(tick_to_seconds(e.tick)),
            _ => None,
        });
    }
    Ok(channels)
}

fn row_is_finite(r: &TraceRow) -> bool {
    [r.u_c, r.u_o, r.voltage, r.aperture, r.p, r.tactor_current, r.carrier_f, r.d, r.h]
        .iter()
        .chain(r.x.iter())
        .all(|v| v.is_finite())
}

fn check_events(events: &[TrialEvent], rows: usize) -> Result<(), String> {
    let ended = events
        .iter()
        .rev()
        .find(|e| matches!(e.kind, EventKind::TrialEnded { .. }))
        .ok_or("event log has no trial_ended event")?;
    if ended.tick != rows as u64 {
        return Err(format!(
            "trace has {rows} rows but the trial ended after {} ticks",
            ended.tick
        ));
    }
    Ok(())
}

/// Export `trace` to `out` (or the default path) and return the path written.
pub fn export_trial(trace: &Path, format: ExportFormat, out: Option<&Path>) -> Result<PathBuf, ExportError> {
    let channels = load_trial(trace)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| default_output(trace, format));
    match format {
        ExportFormat::Csv => channels.write_csv(&out)?,
        ExportFormat::Svg => std::fs::write(&out, channels.to_svg()).map_err(|source| TrialError::Io {
            path: out.clone(),
            source,
        })?,
    }
    Ok(out)
}
