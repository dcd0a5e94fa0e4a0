//! Session configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlGains;
use crate::emg::EmgSourceSpec;
use crate::plant::SceneSpec;
use crate::tactile::TactileConfig;
use crate::trials::{TrialError, TrialSettings};
use crate::{Condition, TICK_RATE_HZ};

/// Default telemetry decimation: 1000 Hz / 20 = 50 Hz.
pub const DEFAULT_DECIMATION: u32 = 20;

/// Everything a batch run or live session needs. Omitted fields take their
/// defaults, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub condition: Condition,
    pub gains: ControlGains,
    pub tactile: TactileConfig,
    pub scene: SceneSpec,
    pub emg: EmgSourceSpec,
    /// Must be 1000; present so a config states the rate it was written for.
    pub tick_rate_hz: u32,
    /// Control ticks per telemetry frame.
    pub decimation: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            condition: Condition::Tactile,
            gains: ControlGains::default(),
            tactile: TactileConfig::default(),
            scene: SceneSpec::default(),
            emg: EmgSourceSpec::default(),
            tick_rate_hz: TICK_RATE_HZ,
            decimation: DEFAULT_DECIMATION,
        }
    }
}

impl SessionConfig {
    pub fn settings(&self) -> TrialSettings {
        TrialSettings {
            gains: self.gains,
            tactile: self.tactile,
            scene: self.scene,
            emg: self.emg.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), TrialError> {
        if self.tick_rate_hz != TICK_RATE_HZ {
            return Err(TrialError::InvalidSettings(format!(
                "tick_rate_hz must be {TICK_RATE_HZ}, got {}",
                self.tick_rate_hz
            )));
        }
        if self.decimation == 0 {
            return Err(TrialError::InvalidSettings("decimation must be at least 1".into()));
        }
        self.settings().validate()
    }

    /// Telemetry frames per second of session time.
    pub fn telemetry_rate_hz(&self) -> f64 {
        TICK_RATE_HZ as f64 / self.decimation as f64
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, TrialError> {
        let cfg: SessionConfig = serde_json::from_str(text).map_err(|e| TrialError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrialError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrialError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text, path)
    }
}
