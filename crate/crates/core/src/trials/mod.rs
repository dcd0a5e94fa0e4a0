//! Trial protocol: scripted runs, milestones, scoring, metrics and logs.

mod engine;
pub mod log;
mod metrics;
pub mod scenario;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use engine::{run_trial, TickInput, TickReport, TrialEngine, TrialSettings, TrialSetup};
pub use metrics::{
    count_exploration_contacts, count_fast_slips, exploration_contact_rate, fast_slip_rate, score,
    summarize, time_remaining, MetricStats, SessionSummary, EXPLORATION_MIN_TICKS,
};
pub use scenario::Scenario;

use crate::emg::{EmgCalibration, EmgError};
use crate::plant::ObjectStatus;
use crate::tactile::{ContactSide, TactileError};
use crate::Condition;

#[derive(Debug, thiserror::Error)]
pub enum TrialError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario {0}")]
    InvalidScenario(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Emg(#[from] EmgError),
    #[error(transparent)]
    Tactile(#[from] TactileError),
    #[error("trial already finished")]
    Finished,
    #[error("{0}")]
    Log(String),
}

/// Task score: one third per milestone reached in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub enum Score {
    Zero,
    OneThird,
    TwoThirds,
    One,
}

impl Score {
    pub fn from_milestones(count: usize) -> Self {
        match count {
            0 => Score::Zero,
            1 => Score::OneThird,
            2 => Score::TwoThirds,
            _ => Score::One,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Score::Zero => 0.0,
            Score::OneThird => 1.0 / 3.0,
            Score::TwoThirds => 2.0 / 3.0,
            Score::One => 1.0,
        }
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.value()
    }
}

impl TryFrom<f64> for Score {
    type Error = String;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        [Score::Zero, Score::OneThird, Score::TwoThirds, Score::One]
            .into_iter()
            .find(|s| (s.value() - v).abs() < 1e-9)
            .ok_or_else(|| format!("{v} is not a valid score"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Milestone {
    /// Object bottom cleared the start-bin wall while in the hand.
    Lifted,
    NearEndBin,
    Placed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Timeout,
    Aborted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Timeout => "timeout",
            Outcome::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipKind {
    Fast,
    Slow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    TrialStarted {
        scenario: String,
        condition: Condition,
        seed: u64,
    },
    Calibrated {
        calibration: EmgCalibration,
    },
    Perturbation {
        kind: scenario::PerturbationKind,
        magnitude: f64,
    },
    Rezero {
        accepted: bool,
    },
    EmgTraceExhausted,
    ContactChange {
        side: ContactSide,
        x: Option<f64>,
    },
    GraspDetected,
    GraspReleased,
    /// Rising edge of a slip detector; `actuated` when a reflex pulse started.
    Slip {
        kind: SlipKind,
        actuated: bool,
    },
    StatusChange {
        from: ObjectStatus,
        to: ObjectStatus,
    },
    ObjectDropped {
        status: ObjectStatus,
    },
    Milestone {
        milestone: Milestone,
    },
    /// `tick` of this event is the number of ticks run.
    TrialEnded {
        outcome: Outcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One row of the per-tick trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub u_c: f64,
    pub u_o: f64,
    pub voltage: f64,
    pub aperture: f64,
    pub p: f64,
    pub side: ContactSide,
    pub x: Option<f64>,
    pub tactor_current: f64,
    pub carrier_f: f64,
    /// Horizontal distance of the object from the end-bin centre, m.
    #[serde(rename = "D")]
    pub d: f64,
    /// Height of the object bottom above the plate, m.
    #[serde(rename = "H")]
    pub h: f64,
    pub status: ObjectStatus,
}

pub const TRACE_COLUMNS: [&str; 13] = [
    "tick",
    "u_c",
    "u_o",
    "voltage",
    "aperture",
    "p",
    "side",
    "x",
    "tactor_current",
    "carrier_f",
    "D",
    "H",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub scenario: String,
    pub condition: Condition,
    pub seed: u64,
    pub outcome: Outcome,
    pub score: Score,
    pub time_remaining: f64,
    /// Divisor of the rate metrics, s.
    pub trial_time: f64,
    pub exploration_contacts: u32,
    pub exploration_contact_rate: f64,
    pub fast_slips: u32,
    pub fast_slip_rate: f64,
    /// Object fell or was ejected from the hand before placement.
    pub dropped: bool,
    pub final_status: ObjectStatus,
    pub events: Vec<TrialEvent>,
    pub trace: Vec<TraceRow>,
}

impl TrialRecord {
    pub fn milestones(&self) -> Vec<Milestone> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Milestone { milestone } => Some(milestone),
                _ => None,
            })
            .collect()
    }
}
