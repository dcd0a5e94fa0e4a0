//! Scenario files: arm waypoints, intent script, perturbations and scene
//! overrides for one scripted trial.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emg::Intent;
use crate::plant::{Perturbation, SceneSpec, Vec3};
use crate::TICK_RATE_HZ;

use super::TrialError;

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_TIME_LIMIT_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub tick: u64,
    pub pos: Vec3,
}

/// Intent held from `tick` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSegment {
    pub tick: u64,
    pub flexion: f64,
    pub extension: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    MassMultiplier,
    FrictionMultiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEvent {
    pub tick: u64,
    pub kind: PerturbationKind,
    pub magnitude: f64,
}

impl PerturbationEvent {
    pub fn to_plant(self) -> Perturbation {
        match self.kind {
            PerturbationKind::MassMultiplier => Perturbation::MassMultiplier(self.magnitude),
            PerturbationKind::FrictionMultiplier => Perturbation::FrictionMultiplier(self.magnitude),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub v: u32,
    pub name: String,
    /// Overrides the seed given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub wrist_start: Vec3,
    /// Piecewise-linear wrist path; the wrist holds after the last waypoint.
    #[serde(default)]
    pub arm: Vec<Waypoint>,
    /// Piecewise-constant operator intent; rest before the first segment.
    #[serde(default)]
    pub intent: Vec<IntentSegment>,
    /// Replay this `tick,flexor_v,extensor_v` trace instead of synthesizing
    /// EMG from the intent script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emg_trace: Option<PathBuf>,
    /// Calibration file to use instead of running the calibration protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationEvent>,
    /// Ticks at which offsets are re-zeroed from the preceding 500 ms.
    #[serde(default)]
    pub rezero: Vec<u64>,
    /// Partial scene object merged over the configured scene.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_s: Option<f64>,
}

impl Scenario {
    pub fn time_limit_s(&self) -> f64 {
        self.time_limit_s.unwrap_or(DEFAULT_TIME_LIMIT_S)
    }

    pub fn time_limit_ticks(&self) -> u64 {
        (self.time_limit_s() * TICK_RATE_HZ as f64).round() as u64
    }

    pub fn validate(&self) -> Result<(), TrialError> {
        let bad = |msg: String| Err(TrialError::InvalidScenario(format!("{}: {msg}", self.name)));
        if self.v != SCENARIO_VERSION {
            return bad(format!("unsupported version {} (expected {SCENARIO_VERSION})", self.v));
        }
        let limit = self.time_limit_s();
        if !(limit > 0.0 && limit <= DEFAULT_TIME_LIMIT_S) {
            return bad(format!("time limit must be in (0, 60] s, got {limit}"));
        }
        if !self.wrist_start.iter().all(|v| v.is_finite()) {
            return bad("wrist_start must be finite".into());
        }
        if self.arm.windows(2).any(|w| w[1].tick <= w[0].tick) {
            return bad("arm waypoint ticks must be strictly increasing".into());
        }
        if self.arm.iter().any(|w| !w.pos.iter().all(|v| v.is_finite())) {
            return bad("arm waypoints must be finite".into());
        }
        if self.intent.windows(2).any(|w| w[1].tick <= w[0].tick) {
            return bad("intent segment ticks must be strictly increasing".into());
        }
        if self
            .intent
            .iter()
            .any(|s| !(0.0..=1.0).contains(&s.flexion) || !(0.0..=1.0).contains(&s.extension))
        {
            return bad("intent levels must lie in [0, 1]".into());
        }
        if self.perturbations.iter().any(|p| !(p.magnitude > 0.0 && p.magnitude.is_finite())) {
            return bad("perturbation magnitudes must be positive".into());
        }
        Ok(())
    }

    /// Scripted wrist position at `tick`.
    pub fn wrist_at(&self, tick: u64) -> Vec3 {
        let mut prev = Waypoint {
            tick: 0,
            pos: self.wrist_start,
        };
        for w in &self.arm {
            if tick < w.tick {
                let span = (w.tick - prev.tick) as f64;
                let f = if span > 0.0 {
                    (tick.saturating_sub(prev.tick)) as f64 / span
                } else {
                    1.0
                };
                let lerp = |i: usize| prev.pos[i] + (w.pos[i] - prev.pos[i]) * f;
                return [lerp(0), lerp(1), lerp(2)];
            }
            prev = *w;
        }
        prev.pos
    }

    pub fn intent_at(&self, tick: u64) -> Intent {
        self.intent
            .iter()
            .take_while(|s| s.tick <= tick)
            .last()
            .map(|s| Intent::new(s.flexion, s.extension))
            .unwrap_or(Intent::REST)
    }

    /// Scene with this scenario's overrides merged over `base`.
    pub fn resolve_scene(&self, base: &SceneSpec) -> Result<SceneSpec, TrialError> {
        let Some(patch) = &self.scene else {
            return Ok(*base);
        };
        let mut value = serde_json::to_value(base).expect("scene serializes");
        merge_json(&mut value, patch);
        let scene: SceneSpec = serde_json::from_value(value)
            .map_err(|e| TrialError::InvalidScenario(format!("{}: scene override: {e}", self.name)))?;
        scene
            .validate()
            .map_err(|e| TrialError::InvalidScenario(format!("{}: {e}", self.name)))?;
        Ok(scene)
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, TrialError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| TrialError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, TrialError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrialError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut s = Self::from_json_str(&text, path)?;
        // relative trace paths are resolved against the scenario file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut s.emg_trace, &mut s.calibration].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

// Scripted scenario generators. Geometry assumes the default scene.

const S: u64 = TICK_RATE_HZ as u64;
const GRASP_Z: f64 = 0.08;
const CARRY_Z: f64 = 0.19;
const PLACE_Z: f64 = GRASP_Z;
const APPROACH_Y: f64 = -0.20;

/// Wrist pose at the start of a generated or live trial, in front of the start bin.
pub const DEFAULT_WRIST_START: Vec3 = [0.0, APPROACH_Y, GRASP_Z];
/// Brisk closing that brings the fingers near the object before the grip.
const PRESHAPE_INTENT: f64 = 0.6;
const PRESHAPE_TICKS: u64 = 600;

fn wrist_y_for_arc(arc: f64, scene: &SceneSpec) -> f64 {
    -scene.hand.palm_offset - arc * scene.hand.finger_length
}

fn seg(tick: u64, flexion: f64, extension: f64) -> IntentSegment {
    IntentSegment {
        tick,
        flexion,
        extension,
    }
}

fn wp(tick: u64, pos: Vec3) -> Waypoint {
    Waypoint { tick, pos }
}

struct PickPlacePlan {
    arc: f64,
    grip_intent: f64,
    close_ticks: u64,
    approach_ticks: u64,
    lift_ticks: u64,
    carry_ticks: u64,
    settle_ticks: u64,
}

fn pick_and_place_script(name: String, seed: u64, plan: &PickPlacePlan) -> Scenario {
    let scene = SceneSpec::default();
    let y = wrist_y_for_arc(plan.arc, &scene);
    let start = scene.start_bin.center;
    let end = scene.end_bin.center;
    let t_reach = plan.approach_ticks;
    let t_closed = t_reach + plan.close_ticks;
    let t_lifted = t_closed + plan.settle_ticks + plan.lift_ticks;
    let t_carried = t_lifted + plan.carry_ticks;
    let t_lowered = t_carried + plan.lift_ticks;
    let t_open = t_lowered + plan.settle_ticks;
    let lower_z = PLACE_Z - 0.002;
    Scenario {
        v: SCENARIO_VERSION,
        name,
        seed: Some(seed),
        wrist_start: [start[0], APPROACH_Y, GRASP_Z],
        arm: vec![
            wp(t_reach, [start[0], start[1] + y, GRASP_Z]),
            wp(t_closed + plan.settle_ticks, [start[0], start[1] + y, GRASP_Z]),
            wp(t_lifted, [start[0], start[1] + y, CARRY_Z]),
            wp(t_carried, [end[0], end[1] + y, CARRY_Z]),
            wp(t_lowered, [end[0], end[1] + y, lower_z]),
            wp(t_open + S / 2, [end[0], end[1] + y, lower_z]),
            wp(t_open + S, [end[0], APPROACH_Y, lower_z]),
        ],
        intent: vec![
            seg(t_reach, PRESHAPE_INTENT, 0.0),
            seg(t_reach + PRESHAPE_TICKS, plan.grip_intent, 0.0),
            seg(t_closed, 0.0, 0.0),
            seg(t_open, 0.0, 1.0),
            seg(t_open + S / 2, 0.0, 0.0),
        ],
        emg_trace: None,
        calibration: None,
        perturbations: vec![],
        rezero: vec![],
        scene: None,
        time_limit_s: None,
    }
}

/// A clean pick-and-place with seed-dependent timing and grip level.
pub fn pick_and_place(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = PickPlacePlan {
        arc: rng.random_range(0.4..0.6),
        grip_intent: rng.random_range(0.28..0.38),
        close_ticks: 1600,
        approach_ticks: rng.random_range(1000..2000),
        lift_ticks: rng.random_range(800..1200),
        carry_ticks: rng.random_range(1500..2500),
        settle_ticks: 300,
    };
    pick_and_place_script(format!("pick_place_{seed:04}"), seed, &plan)
}

/// Full-strength closing with the object near the fingertips.
pub fn aggressive_off_center_close(seed: u64) -> Scenario {
    let scene = SceneSpec::default();
    let start = scene.start_bin.center;
    let y = start[1] + wrist_y_for_arc(0.8, &scene);
    Scenario {
        v: SCENARIO_VERSION,
        name: format!("overgrasp_{seed:04}"),
        seed: Some(seed),
        wrist_start: [start[0], y, GRASP_Z],
        arm: vec![],
        intent: vec![seg(200, 1.0, 0.0)],
        emg_trace: None,
        calibration: None,
        perturbations: vec![],
        rezero: vec![],
        scene: None,
        time_limit_s: Some(4.0),
    }
}

/// Pick-and-place with a friction or mass perturbation while the object is
/// carried above the start bin.
pub fn anti_slip(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_511b);
    let mut s = pick_and_place(seed);
    s.name = format!("anti_slip_{seed:04}");
    let lifted = s.arm[2].tick;
    let tick = lifted + rng.random_range(0..S / 2);
    // size the perturbation by the grip force it demands
    let scene = SceneSpec::default();
    let weight = scene.object_mass() * scene.gravity;
    let needed = rng.random_range(20.0..30.0);
    let (kind, magnitude) = if rng.random_bool(0.5) {
        let mu = weight / (2.0 * needed);
        (PerturbationKind::FrictionMultiplier, mu / scene.friction)
    } else {
        let w = 2.0 * scene.friction * needed;
        (PerturbationKind::MassMultiplier, w / weight)
    };
    s.perturbations.push(PerturbationEvent {
        tick,
        kind,
        magnitude,
    });
    s
}
