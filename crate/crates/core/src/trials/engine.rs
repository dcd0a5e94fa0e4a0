//! The per-tick pipeline shared by batch trials, the live session and the C
//! bindings.

use std::collections::VecDeque;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{self, EXPLORATION_MIN_TICKS};
use super::scenario::{PerturbationEvent, Scenario};
use super::{
    EventKind, Milestone, Outcome, SlipKind, TraceRow, TrialError, TrialEvent, TrialRecord,
};
use crate::control::{self, ControlGains, MotorCommand, ReflexState, TickInputs};
use crate::emg::{
    self, EmgCalibration, EmgError, EmgSource, EmgSourceMode, EmgSourceSpec, EnvelopeFilter,
    Intent, NormalizedEmgPair, RawEmgSample, CALIBRATION_WINDOW_TICKS, MIN_REZERO_TICKS,
};
use crate::feedback::{self, SweepState, TactorDrive, CARRIER_HZ};
use crate::plant::{
    apply_perturbation, classify_region, HandState, ObjectState, ObjectStatus, Plant, Region,
    SceneSpec, Vec3,
};
use crate::tactile::{ContactReading, ContactSide, TactileConfig, TactileFrame, TactileProcessor};
use crate::{tick_to_seconds, Condition, DT};

/// Models and gains for a trial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSettings {
    pub gains: ControlGains,
    pub tactile: TactileConfig,
    pub scene: SceneSpec,
    pub emg: EmgSourceSpec,
}

impl TrialSettings {
    pub fn validate(&self) -> Result<(), TrialError> {
        let bad = |e: String| TrialError::InvalidSettings(e);
        self.gains.validate().map_err(|e| bad(e.to_string()))?;
        self.tactile.validate().map_err(|e| bad(e.to_string()))?;
        self.scene.validate().map_err(|e| bad(e.to_string()))?;
        if !matches!(self.emg.mode, EmgSourceMode::Replay { .. }) {
            self.emg.validate().map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }
}

/// Independent seeds for the EMG surrogate and the tactile sensor noise.
fn sub_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

/// Everything a [`TrialEngine`] needs besides the settings.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub trial_id: String,
    pub scenario: String,
    pub condition: Condition,
    pub seed: u64,
    pub scene: SceneSpec,
    pub wrist_start: Vec3,
    pub time_limit_ticks: u64,
    /// Replay samples; synthesized from the intent when `None`.
    pub emg_trace: Option<Vec<RawEmgSample>>,
    /// Skip the calibration protocol and use this calibration.
    pub calibration: Option<EmgCalibration>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickInput {
    pub intent: Intent,
    pub arm_vel: Vec3,
    pub rezero: bool,
    pub perturbations: Vec<PerturbationEvent>,
}

/// State after one tick, for telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub row: TraceRow,
    pub emg: NormalizedEmgPair,
    pub command: MotorCommand,
    pub hand: HandState,
    pub object: ObjectState,
    pub contact: ContactReading,
    pub drive: TactorDrive,
    pub grasped: bool,
    pub milestones: [bool; 3],
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Default)]
struct Tracking {
    side: ContactSide,
    grasped: bool,
    fast: bool,
    slow: bool,
    first_grasp: Option<u64>,
    episode_onset: Option<u64>,
    exploration_contacts: u32,
    fast_slips: u32,
    lifted: bool,
    near: bool,
    placed: Option<u64>,
    dropped: bool,
    emg_exhausted: bool,
}

/// One trial in progress.
pub struct TrialEngine {
    setup: TrialSetup,
    gains: ControlGains,
    feedback_on: bool,
    emg: EmgSource,
    envelope: EnvelopeFilter,
    calibration: EmgCalibration,
    rezero_window: VecDeque<RawEmgSample>,
    tactile: TactileProcessor,
    reflex: ReflexState,
    sweep: SweepState,
    plant: Plant,
    tick: u64,
    track: Tracking,
    events: Vec<TrialEvent>,
    trace: Vec<TraceRow>,
    outcome: Option<Outcome>,
}

impl TrialEngine {
    pub fn new(settings: &TrialSettings, setup: TrialSetup) -> Result<Self, TrialError> {
        settings.validate()?;
        setup
            .scene
            .validate()
            .map_err(|e| TrialError::InvalidSettings(e.to_string()))?;
        let (emg_seed, tactile_seed) = sub_seeds(setup.seed);
        let mut emg = match &setup.emg_trace {
            Some(samples) => EmgSource::from_samples(samples.clone()),
            None => EmgSource::new(EmgSourceSpec {
                mode: EmgSourceMode::Synthetic,
                seed: emg_seed,
                ..settings.emg.clone()
            })?,
        };
        let calibration = match setup.calibration {
            Some(c) => {
                c.validate()?;
                c
            }
            None => emg.run_calibration_protocol(CALIBRATION_WINDOW_TICKS)?,
        };
        let gains = ControlGains {
            reflexes_enabled: settings.gains.reflexes_enabled && setup.condition.reflexes_enabled(),
            ..settings.gains
        };
        let mut engine = Self {
            gains,
            feedback_on: setup.condition.feedback_enabled(),
            emg,
            envelope: EnvelopeFilter::default(),
            calibration,
            rezero_window: VecDeque::with_capacity(MIN_REZERO_TICKS),
            tactile: TactileProcessor::new(settings.tactile, settings.gains.p_g, tactile_seed),
            reflex: ReflexState::default(),
            sweep: SweepState::default(),
            plant: Plant::new(setup.scene, setup.wrist_start),
            tick: 0,
            track: Tracking::default(),
            events: Vec::new(),
            trace: Vec::new(),
            outcome: None,
            setup,
        };
        engine.push_event(EventKind::TrialStarted {
            scenario: engine.setup.scenario.clone(),
            condition: engine.setup.condition,
            seed: engine.setup.seed,
        });
        engine.push_event(EventKind::Calibrated { calibration });
        Ok(engine)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn calibration(&self) -> &EmgCalibration {
        &self.calibration
    }

    pub fn condition(&self) -> Condition {
        self.setup.condition
    }

    pub fn events(&self) -> &[TrialEvent] {
        &self.events
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    fn push_event(&mut self, kind: EventKind) {
        self.events.push(TrialEvent {
            tick: self.tick,
            kind,
        });
    }

    /// Run one tick. Sensors read the plant state left by the previous tick;
    /// the command computed here drives this tick's plant update.
    pub fn step(&mut self, input: &TickInput) -> Result<TickReport, TrialError> {
        if self.outcome.is_some() {
            return Err(TrialError::Finished);
        }
        let t = self.tick;

        for p in &input.perturbations {
            apply_perturbation(&mut self.plant.object, p.to_plant());
            self.push_event(EventKind::Perturbation {
                kind: p.kind,
                magnitude: p.magnitude,
            });
        }

        let raw = match self.emg.next_sample(Some(input.intent)) {
            Ok(s) => s,
            Err(EmgError::EndOfTrace) => {
                if !self.track.emg_exhausted {
                    self.track.emg_exhausted = true;
                    self.push_event(EventKind::EmgTraceExhausted);
                }
                RawEmgSample {
                    tick: t,
                    flexor_v: self.calibration.flexor_offset,
                    extensor_v: self.calibration.extensor_offset,
                }
            }
            Err(e) => return Err(e.into()),
        };
        if self.rezero_window.len() == MIN_REZERO_TICKS {
            self.rezero_window.pop_front();
        }
        self.rezero_window.push_back(raw);
        if input.rezero {
            let window: Vec<_> = self.rezero_window.iter().copied().collect();
            let accepted = match emg::rezero(&self.calibration, &window) {
                Ok(c) => {
                    self.calibration = c;
                    true
                }
                Err(_) => false,
            };
            self.push_event(EventKind::Rezero { accepted });
        }
        let s = emg::normalize(&self.envelope.process(&raw), &self.calibration);

        let g = self.plant.geometry;
        let frame = match self.tactile.process(t, g.grip_force, g.surface, g.touching) {
            Ok(f) => f,
            Err(e) => return Ok(self.abort(format!("tactile fault: {e}"), s)),
        };
        let out = control::tick(
            &TickInputs { emg: s, tactile: frame },
            self.reflex,
            &self.gains,
            t,
            self.setup.scene.hand.v_max,
        );
        self.reflex = out.state;

        let drive = if self.feedback_on {
            let (d, sweep) = feedback::render(&frame.contact, frame.grasped, &self.sweep, t);
            self.sweep = sweep;
            d
        } else {
            TactorDrive::silent(CARRIER_HZ)
        };

        let before = self.plant.object.status;
        self.plant.step(out.command.voltage, input.arm_vel);
        if !self.plant.is_finite() || !out.command.voltage.is_finite() {
            return Ok(self.abort("non-finite plant state".into(), s));
        }

        self.track_events(&frame, &out, before);
        let row = self.trace_row(t, &out.command, &frame, &drive);
        self.trace.push(row);
        self.tick += 1;

        if self.track.placed.is_some() {
            self.finish(Outcome::Completed, None);
        } else if self.tick >= self.setup.time_limit_ticks {
            self.finish(Outcome::Timeout, None);
        }

        Ok(TickReport {
            tick: t,
            row,
            emg: s,
            command: out.command,
            hand: self.plant.hand,
            object: self.plant.object,
            contact: frame.contact,
            drive,
            grasped: frame.grasped,
            milestones: self.milestones(),
            outcome: self.outcome,
        })
    }

    fn milestones(&self) -> [bool; 3] {
        [self.track.lifted, self.track.near, self.track.placed.is_some()]
    }

    fn trace_row(&self, t: u64, cmd: &MotorCommand, frame: &TactileFrame, drive: &TactorDrive) -> TraceRow {
        let scene = &self.setup.scene;
        let obj = &self.plant.object;
        TraceRow {
            tick: t,
            u_c: cmd.u_c,
            u_o: cmd.u_o,
            voltage: cmd.voltage,
            aperture: self.plant.hand.aperture,
            p: frame.pressure.p,
            side: frame.contact.side(),
            x: frame.contact.x(),
            tactor_current: drive.current,
            carrier_f: drive.carrier_f,
            d: obj.displacement_from_end_bin(scene),
            h: obj.bottom(scene),
            status: obj.status,
        }
    }

    fn track_events(&mut self, frame: &TactileFrame, out: &control::TickOutput, before: ObjectStatus) {
        let t = self.tick;
        let side = frame.contact.side();
        if side != self.track.side {
            self.push_event(EventKind::ContactChange {
                side,
                x: frame.contact.x(),
            });
            match (self.track.episode_onset, side) {
                (None, ContactSide::Palmar | ContactSide::Dorsal) => self.track.episode_onset = Some(t),
                (Some(onset), ContactSide::None) => {
                    self.close_episode(onset, t);
                    self.track.episode_onset = None;
                }
                _ => {}
            }
            self.track.side = side;
        }

        if frame.grasped != self.track.grasped {
            if frame.grasped {
                self.track.first_grasp.get_or_insert(t);
                self.push_event(EventKind::GraspDetected);
            } else {
                self.push_event(EventKind::GraspReleased);
            }
            self.track.grasped = frame.grasped;
        }

        if out.fast_slip && !self.track.fast {
            self.track.fast_slips += 1;
            let actuated = out.state.last_fast_slip_tick == Some(t);
            self.push_event(EventKind::Slip {
                kind: SlipKind::Fast,
                actuated,
            });
        }
        if out.slow_slip && !self.track.slow {
            let actuated = out.state.last_slow_slip_tick == Some(t);
            self.push_event(EventKind::Slip {
                kind: SlipKind::Slow,
                actuated,
            });
        }
        self.track.fast = out.fast_slip;
        self.track.slow = out.slow_slip;

        let scene = self.setup.scene;
        let obj = self.plant.object;
        if obj.status != before {
            self.push_event(EventKind::StatusChange {
                from: before,
                to: obj.status,
            });
            let lost = matches!(obj.status, ObjectStatus::FreeFall | ObjectStatus::Ejected);
            if lost && self.track.placed.is_none() {
                self.track.dropped = true;
                self.push_event(EventKind::ObjectDropped { status: obj.status });
            }
        }

        if !self.track.lifted
            && obj.status.is_gripped()
            && obj.bottom(&scene) > scene.start_bin.wall_height
        {
            self.track.lifted = true;
            self.push_event(EventKind::Milestone {
                milestone: Milestone::Lifted,
            });
        }
        let region = classify_region(&obj, &scene);
        if self.track.lifted
            && !self.track.near
            && obj.status != ObjectStatus::Ejected
            && matches!(region, Region::NearEndBin | Region::InEndBin)
        {
            self.track.near = true;
            self.push_event(EventKind::Milestone {
                milestone: Milestone::NearEndBin,
            });
        }
        if self.track.near && self.track.placed.is_none() && region == Region::InEndBin {
            self.track.placed = Some(t);
            self.push_event(EventKind::Milestone {
                milestone: Milestone::Placed,
            });
        }
    }

    fn close_episode(&mut self, onset: u64, end: u64) {
        let before_grasp = self.track.first_grasp.is_none_or(|g| onset < g);
        if end - onset >= EXPLORATION_MIN_TICKS && before_grasp {
            self.track.exploration_contacts += 1;
        }
    }

    fn finish(&mut self, outcome: Outcome, reason: Option<String>) {
        if let Some(onset) = self.track.episode_onset.take() {
            self.close_episode(onset, self.tick);
        }
        self.push_event(EventKind::TrialEnded { outcome, reason });
        self.outcome = Some(outcome);
    }

    fn abort(&mut self, reason: String, s: NormalizedEmgPair) -> TickReport {
        tracing::warn!(trial = %self.setup.trial_id, tick = self.tick, %reason, "trial aborted");
        self.finish(Outcome::Aborted, Some(reason));
        let frame = TactileFrame::default();
        let row = self.trace.last().copied().unwrap_or_else(|| {
            self.trace_row(self.tick, &MotorCommand::default(), &frame, &TactorDrive::silent(CARRIER_HZ))
        });
        TickReport {
            tick: self.tick,
            row,
            emg: s,
            command: MotorCommand::default(),
            hand: self.plant.hand,
            object: self.plant.object,
            contact: ContactReading::none(),
            drive: TactorDrive::silent(CARRIER_HZ),
            grasped: false,
            milestones: self.milestones(),
            outcome: self.outcome,
        }
    }

    /// End the trial early (operator abort or disconnect).
    pub fn abort_with(&mut self, reason: &str) {
        if self.outcome.is_none() {
            self.finish(Outcome::Aborted, Some(reason.to_string()));
        }
    }

    /// Close the trial and compute its record. An unfinished trial is recorded
    /// as aborted.
    pub fn into_record(mut self) -> TrialRecord {
        if self.outcome.is_none() {
            self.finish(Outcome::Aborted, Some("ended before completion".into()));
        }
        let outcome = self.outcome.expect("finished");
        let limit_s = tick_to_seconds(self.setup.time_limit_ticks);
        let completion = self.track.placed.map(|t| tick_to_seconds(t + 1));
        let trial_time = completion.unwrap_or(limit_s);
        debug_assert_eq!(
            self.track.exploration_contacts,
            metrics::count_exploration_contacts(&self.events)
        );
        TrialRecord {
            trial_id: self.setup.trial_id,
            scenario: self.setup.scenario,
            condition: self.setup.condition,
            seed: self.setup.seed,
            outcome,
            score: metrics::score(&self.events),
            time_remaining: metrics::time_remaining(completion, limit_s),
            trial_time,
            exploration_contacts: self.track.exploration_contacts,
            exploration_contact_rate: self.track.exploration_contacts as f64 / trial_time,
            fast_slips: self.track.fast_slips,
            fast_slip_rate: self.track.fast_slips as f64 / trial_time,
            dropped: self.track.dropped,
            final_status: self.plant.object.status,
            events: self.events,
            trace: self.trace,
        }
    }
}

/// Run a scripted scenario to completion or timeout.
pub fn run_trial(
    scenario: &Scenario,
    settings: &TrialSettings,
    condition: Condition,
    seed: u64,
    trial_id: &str,
) -> Result<TrialRecord, TrialError> {
    scenario.validate()?;
    let scene = scenario.resolve_scene(&settings.scene)?;
    let emg_trace = scenario
        .emg_trace
        .as_deref()
        .map(emg::read_trace)
        .transpose()?;
    let calibration = scenario
        .calibration
        .as_deref()
        .map(EmgCalibration::load)
        .transpose()?;
    let setup = TrialSetup {
        trial_id: trial_id.to_string(),
        scenario: scenario.name.clone(),
        condition,
        seed: scenario.seed.unwrap_or(seed),
        scene,
        wrist_start: scenario.wrist_start,
        time_limit_ticks: scenario.time_limit_ticks(),
        emg_trace,
        calibration,
    };
    let mut engine = TrialEngine::new(settings, setup)?;
    let mut perturbations = scenario.perturbations.clone();
    perturbations.sort_by_key(|p| p.tick);
    let mut next_perturbation = 0;

    while engine.outcome().is_none() {
        let t = engine.tick();
        let start = next_perturbation;
        while next_perturbation < perturbations.len() && perturbations[next_perturbation].tick <= t {
            next_perturbation += 1;
        }
        let wrist = engine.plant().hand.wrist_pos;
        let target = scenario.wrist_at(t + 1);
        let input = TickInput {
            intent: scenario.intent_at(t),
            arm_vel: [
                (target[0] - wrist[0]) / DT,
                (target[1] - wrist[1]) / DT,
                (target[2] - wrist[2]) / DT,
            ],
            rezero: scenario.rezero.contains(&t),
            perturbations: perturbations[start..next_perturbation].to_vec(),
        };
        engine.step(&input)?;
    }
    Ok(engine.into_record())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trials::scenario::{aggressive_off_center_close, anti_slip, pick_and_place};
    use crate::trials::Score;

    fn settings() -> TrialSettings {
        TrialSettings::default()
    }

    #[test]
    fn clean_pick_and_place_scores_one() {
        for condition in [Condition::Standard, Condition::Tactile] {
            let s = pick_and_place(1);
            let r = run_trial(&s, &settings(), condition, 0, "t").unwrap();
            assert_eq!(r.outcome, Outcome::Completed, "{condition}: {:?}", r.final_status);
            assert_eq!(r.score, Score::One);
            assert!(!r.dropped);
            assert!(r.time_remaining > 40.0);
            assert_eq!(r.trace.len() as f64 * DT, r.trial_time);
        }
    }

    #[test]
    fn standard_condition_is_silent() {
        let r = run_trial(&pick_and_place(2), &settings(), Condition::Standard, 0, "t").unwrap();
        assert!(r.trace.iter().all(|row| row.tactor_current == 0.0));
        let r = run_trial(&pick_and_place(2), &settings(), Condition::Tactile, 0, "t").unwrap();
        assert!(r.trace.iter().any(|row| row.tactor_current != 0.0));
    }

    #[test]
    fn never_lifted_scores_zero() {
        let mut s = pick_and_place(3);
        s.intent.clear();
        s.time_limit_s = Some(5.0);
        let r = run_trial(&s, &settings(), Condition::Tactile, 0, "t").unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.score, Score::Zero);
        assert_eq!(r.time_remaining, 0.0);
        assert_eq!(r.trial_time, 5.0);
    }

    #[test]
    fn overgrasp_ejects_without_reflexes() {
        let s = aggressive_off_center_close(0);
        let r = run_trial(&s, &settings(), Condition::Standard, 0, "t").unwrap();
        assert_eq!(r.final_status, ObjectStatus::Ejected);
        let r = run_trial(&s, &settings(), Condition::Tactile, 0, "t").unwrap();
        assert_eq!(r.final_status, ObjectStatus::Held);
    }

    #[test]
    fn online_metrics_match_recount() {
        let r = run_trial(&anti_slip(4), &settings(), Condition::Tactile, 0, "t").unwrap();
        assert_eq!(r.exploration_contacts, metrics::count_exploration_contacts(&r.events));
        assert_eq!(r.fast_slips, metrics::count_fast_slips(&r.events));
    }

    #[test]
    fn replay_exhaustion_continues_at_rest() {
        let cal = EmgCalibration {
            flexor_offset: 0.05,
            extensor_offset: 0.04,
            flexor_upper: 0.5,
            flexor_lower: 0.05,
            extensor_upper: 0.4,
            extensor_lower: 0.04,
        };
        let samples: Vec<_> = (0..100)
            .map(|t| RawEmgSample { tick: t, flexor_v: 0.05, extensor_v: 0.04 })
            .collect();
        let setup = TrialSetup {
            trial_id: "r".into(),
            scenario: "replay".into(),
            condition: Condition::Tactile,
            seed: 0,
            scene: SceneSpec::default(),
            wrist_start: [0.0, -0.3, 0.1],
            time_limit_ticks: 300,
            emg_trace: Some(samples),
            calibration: Some(cal),
        };
        let mut e = TrialEngine::new(&settings(), setup).unwrap();
        while e.outcome().is_none() {
            e.step(&TickInput::default()).unwrap();
        }
        let r = e.into_record();
        assert_eq!(r.trace.len(), 300);
        let exhausted: Vec<_> = r
            .events
            .iter()
            .filter(|ev| ev.kind == EventKind::EmgTraceExhausted)
            .collect();
        assert_eq!(exhausted.len(), 1);
        assert_eq!(exhausted[0].tick, 100);
    }
}
