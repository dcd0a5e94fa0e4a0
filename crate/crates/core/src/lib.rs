//! Sensorimotor control stack for a 1-DoF myoelectric prosthetic hand.
//!
//! The crate is organised around one fixed 1 kHz tick:
//!
//! * [`emg`] turns surrogate (or replayed) sEMG into normalized flexor/extensor
//!   activations.
//! * [`tactile`] models the thumb pressure sensor and the finger contact-location
//!   sensor.
//! * [`control`] runs the volitional laws, the over-grasp modulation and the
//!   slip reflexes, and arbitrates a single motor command.
//! * [`feedback`] renders the vibrotactile contact-location signal.
//! * [`plant`] is a reduced-order model of the hand, the object and the bins.
//! * [`trials`] runs scripted trials, scores them and writes logs.
//! * [`interface`] holds configuration, batch execution, trace export and the
//!   live session service.

pub mod control;
pub mod emg;
pub mod feedback;
pub mod interface;
pub mod plant;
pub mod tactile;
pub mod trials;

/// Control rate of the whole stack.
pub const TICK_RATE_HZ: u32 = 1000;

/// Tick period in seconds.
pub const DT: f64 = 1.0 / TICK_RATE_HZ as f64;

/// Convert a tick index to seconds of session time.
#[inline]
pub fn tick_to_seconds(tick: u64) -> f64 {
    tick as f64 * DT
}

/// Number of ticks covering `ms` milliseconds.
#[inline]
pub const fn ms_to_ticks(ms: u32) -> u32 {
    ms * TICK_RATE_HZ / 1000
}

/// Condition of a trial: the standard myoelectric hand, or the hand with
/// contact-location feedback and tactile reflexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Standard,
    Tactile,
}

impl Condition {
    pub fn reflexes_enabled(self) -> bool {
        matches!(self, Condition::Tactile)
    }

    pub fn feedback_enabled(self) -> bool {
        matches!(self, Condition::Tactile)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Standard => "standard",
            Condition::Tactile => "tactile",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Condition::Standard),
            "tactile" => Ok(Condition::Tactile),
            other => Err(format!("unknown condition `{other}` (expected standard|tactile)")),
        }
    }
}
