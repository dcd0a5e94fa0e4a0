//! Score, time and rate metrics recomputed from the raw event log, and
//! per-session aggregation.

use serde::{Deserialize, Serialize};

use super::{EventKind, Milestone, Score, TrialEvent, TrialRecord};
use crate::tactile::ContactSide;

/// Shortest contact run counted as an exploration contact (20 ms).
pub const EXPLORATION_MIN_TICKS: u64 = 20;

/// Remaining time floor for a completed trial, s.
pub const MIN_TIME_REMAINING_S: f64 = 0.1;

/// Score from milestone events. Milestones only count in order, so a later
/// one without its predecessors adds nothing.
pub fn score(events: &[TrialEvent]) -> Score {
    let has = |m: Milestone| {
        events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Milestone { milestone } if milestone == m))
    };
    let reached = [Milestone::Lifted, Milestone::NearEndBin, Milestone::Placed]
        .into_iter()
        .take_while(|m| has(*m))
        .count();
    Score::from_milestones(reached)
}

/// Seconds left on the clock. `completion_s` is `None` for a failed trial.
pub fn time_remaining(completion_s: Option<f64>, time_limit_s: f64) -> f64 {
    match completion_s {
        Some(t) => (time_limit_s - t).max(MIN_TIME_REMAINING_S),
        None => 0.0,
    }
}

/// Contact episodes of at least [`EXPLORATION_MIN_TICKS`] whose onset precedes
/// the first grasp. Either finger face counts; a change of face without a gap
/// continues the episode. An episode still open at the end of the log is
/// closed at the `trial_ended` tick.
pub fn count_exploration_contacts(events: &[TrialEvent]) -> u32 {
    let first_grasp = events
        .iter()
        .find(|e| matches!(e.kind, EventKind::GraspDetected))
        .map(|e| e.tick)
        .unwrap_or(u64::MAX);
    let end = events
        .iter()
        .rev()
        .find(|e| matches!(e.kind, EventKind::TrialEnded { .. }))
        .map(|e| e.tick);

    let mut count = 0;
    let mut onset: Option<u64> = None;
    let mut close = |start: u64, stop: u64| {
        if stop - start >= EXPLORATION_MIN_TICKS && start < first_grasp {
            count += 1;
        }
    };
    for e in events {
        if let EventKind::ContactChange { side, .. } = e.kind {
            match (onset, side) {
                (None, ContactSide::Palmar | ContactSide::Dorsal) => onset = Some(e.tick),
                (Some(start), ContactSide::None) => {
                    close(start, e.tick);
                    onset = None;
                }
                _ => {}
            }
        }
    }
    if let (Some(start), Some(stop)) = (onset, end) {
        close(start, stop);
    }
    count
}

pub fn count_fast_slips(events: &[TrialEvent]) -> u32 {
    events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Slip { kind: super::SlipKind::Fast, .. }))
        .count() as u32
}

pub fn exploration_contact_rate(events: &[TrialEvent], trial_time_s: f64) -> f64 {
    count_exploration_contacts(events) as f64 / trial_time_s
}

pub fn fast_slip_rate(events: &[TrialEvent], trial_time_s: f64) -> f64 {
    count_fast_slips(events) as f64 / trial_time_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample variance; 0 when only one trial was run.
    pub variance: f64,
    pub n: usize,
    /// False when `n == 1` and the variance is undefined.
    pub variance_defined: bool,
}

impl MetricStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let (variance, defined) = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64, true)
        } else {
            (0.0, false)
        };
        Self {
            mean,
            variance,
            n,
            variance_defined: defined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub score: MetricStats,
    pub time_remaining: MetricStats,
    pub exploration_contact_rate: MetricStats,
    pub fast_slip_rate: MetricStats,
}

impl SessionSummary {
    pub fn metrics(&self) -> [(&'static str, &MetricStats); 4] {
        [
            ("score", &self.score),
            ("time_remaining", &self.time_remaining),
            ("exploration_contact_rate", &self.exploration_contact_rate),
            ("fast_slip_rate", &self.fast_slip_rate),
        ]
    }
}

/// Per-metric mean and sample variance across trials; `None` for no trials.
pub fn summarize(records: &[TrialRecord]) -> Option<SessionSummary> {
    if records.is_empty() {
        return None;
    }
    let col = |f: fn(&TrialRecord) -> f64| -> MetricStats {
        MetricStats::of(&records.iter().map(f).collect::<Vec<_>>())
    };
    Some(SessionSummary {
        score: col(|r| r.score.value()),
        time_remaining: col(|r| r.time_remaining),
        exploration_contact_rate: col(|r| r.exploration_contact_rate),
        fast_slip_rate: col(|r| r.fast_slip_rate),
    })
}
