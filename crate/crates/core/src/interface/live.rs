//! Live session protocol and the synchronous session core.
//!
//! Every message is one JSON object per WebSocket text frame with a `v`
//! version field and a `type` tag. The operator sends [`ClientMessage`]s; the
//! service answers with [`ServerMessage`]s. [`LiveSession`] holds no I/O: the
//! server feeds it messages between ticks and calls [`LiveSession::step`] once
//! per tick.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use crate::control::MotorCommand;
use crate::emg::{EmgCalibration, EmgSource, Intent, CALIBRATION_WINDOW_TICKS};
use crate::feedback::TactorDrive;
use crate::plant::{HandState, ObjectStatus, Vec3};
use crate::tactile::ContactReading;
use crate::trials::scenario::{DEFAULT_TIME_LIMIT_S, DEFAULT_WRIST_START};
use crate::trials::{log, Outcome, Score, TickInput, TickReport, TrialEngine, TrialSetup};
use crate::{tick_to_seconds, Condition, TICK_RATE_HZ};

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest accepted wrist speed, m/s. Faster requests are scaled down.
pub const ARM_SPEED_LIMIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentMessage {
    pub flexion: f64,
    pub extension: f64,
    #[serde(default)]
    pub arm_vel: Vec3,
    #[serde(default)]
    pub rezero: bool,
    /// Client timestamp, echoed back in telemetry.
    #[serde(default)]
    pub t_client: f64,
}

impl IntentMessage {
    /// Clamp drive levels to `[0, 1]` and the arm speed to
    /// [`ARM_SPEED_LIMIT`]. Non-finite fields are rejected.
    pub fn sanitized(mut self) -> Result<Self, String> {
        let all = [self.flexion, self.extension, self.t_client]
            .into_iter()
            .chain(self.arm_vel);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err("intent fields must be finite".into());
        }
        self.flexion = self.flexion.clamp(0.0, 1.0);
        self.extension = self.extension.clamp(0.0, 1.0);
        let speed = self.arm_vel.iter().map(|v| v * v).sum::<f64>().sqrt();
        if speed > ARM_SPEED_LIMIT {
            let scale = ARM_SPEED_LIMIT / speed;
            self.arm_vel = self.arm_vel.map(|v| v * scale);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Intent(IntentMessage),
    StartTrial {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        time_limit_s: Option<f64>,
    },
    Abort,
    SetCondition {
        condition: Condition,
    },
    Recalibrate,
}

/// Parse one client frame, checking the protocol version.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, String> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object_mut().ok_or("message must be a JSON object")?;
    match obj.remove("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(format!("unsupported protocol version {v}")),
        None => return Err("missing protocol version `v`".into()),
    }
    serde_json::from_value(value).map_err(|e| format!("invalid message: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentEcho {
    pub t_client: f64,
    /// Trial tick that was next to run when the intent arrived.
    pub received_tick: u64,
    /// Trial tick that first used the intent.
    pub applied_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MilestoneFlags {
    pub lifted: bool,
    pub near_end_bin: bool,
    pub placed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub trial_id: String,
    pub tick: u64,
    /// Trial clock, s.
    pub trial_time: f64,
    pub hand: HandState,
    pub object_status: ObjectStatus,
    pub object_pos: Vec3,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub p: f64,
    pub contact: ContactReading,
    pub grasped: bool,
    pub command: MotorCommand,
    pub tactor: TactorDrive,
    pub milestones: MilestoneFlags,
    pub score: f64,
    pub intent_echo: Option<IntentEcho>,
    /// Frames dropped so far because the client fell behind.
    pub dropped_frames: u64,
}

impl TelemetryFrame {
    fn from_report(trial_id: &str, r: &TickReport, echo: Option<IntentEcho>) -> Self {
        let [lifted, near_end_bin, placed] = r.milestones;
        let reached = r.milestones.iter().take_while(|m| **m).count();
        Self {
            trial_id: trial_id.to_string(),
            tick: r.tick,
            trial_time: tick_to_seconds(r.tick),
            hand: r.hand,
            object_status: r.object.status,
            object_pos: r.object.pos,
            d: r.row.d,
            h: r.row.h,
            p: r.row.p,
            contact: r.contact,
            grasped: r.grasped,
            command: r.command,
            tactor: r.drive,
            milestones: MilestoneFlags {
                lifted,
                near_end_bin,
                placed,
            },
            score: Score::from_milestones(reached).value(),
            intent_echo: echo,
            dropped_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerMessage {
    Hello {
        condition: Condition,
        tick_rate_hz: u32,
        decimation: u32,
    },
    Telemetry(TelemetryFrame),
    TrialStarted {
        trial_id: String,
        condition: Condition,
        seed: u64,
    },
    TrialEnded {
        trial_id: String,
        outcome: Outcome,
        score: f64,
        time_remaining: f64,
        dropped: bool,
    },
    Calibrated {
        calibration: EmgCalibration,
    },
    ConditionSet {
        condition: Condition,
    },
    Error {
        message: String,
    },
}

#[derive(Serialize)]
struct Versioned<'a> {
    v: u32,
    #[serde(flatten)]
    msg: &'a ServerMessage,
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Versioned {
            v: PROTOCOL_VERSION,
            msg: self,
        })
        .expect("server messages serialize")
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error {
            message: message.into(),
        }
    }

    pub fn is_telemetry(&self) -> bool {
        matches!(self, ServerMessage::Telemetry(_))
    }
}

struct LiveTrial {
    id: String,
    engine: TrialEngine,
}

/// One operator's session: a sequence of live trials.
pub struct LiveSession {
    config: SessionConfig,
    condition: Condition,
    out_dir: Option<PathBuf>,
    trial: Option<LiveTrial>,
    calibration: Option<EmgCalibration>,
    trials_started: u64,
    intent: IntentMessage,
    pending_echo: Option<(f64, u64)>,
    last_echo: Option<IntentEcho>,
    rezero_pending: bool,
}

impl LiveSession {
    /// Trial logs go to `out_dir` when one is given.
    pub fn new(config: SessionConfig, out_dir: Option<PathBuf>) -> Self {
        Self {
            condition: config.condition,
            config,
            out_dir,
            trial: None,
            calibration: None,
            trials_started: 0,
            intent: IntentMessage::default(),
            pending_echo: None,
            last_echo: None,
            rezero_pending: false,
        }
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            condition: self.condition,
            tick_rate_hz: TICK_RATE_HZ,
            decimation: self.config.decimation,
        }
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn is_running(&self) -> bool {
        self.trial.is_some()
    }

    /// The tick the running trial will execute next.
    pub fn next_tick(&self) -> Option<u64> {
        self.trial.as_ref().map(|t| t.engine.tick())
    }

    /// Apply a client message between ticks.
    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        let next = self.next_tick();
        self.handle_received(msg, next)
    }

    /// Like [`handle`](Self::handle), with the tick that was next to run when
    /// the message reached the service.
    pub fn handle_received(&mut self, msg: ClientMessage, received_tick: Option<u64>) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Intent(m) => match m.sanitized() {
                Ok(m) => {
                    self.intent = m;
                    self.rezero_pending |= m.rezero;
                    if let Some(t) = received_tick.or(self.next_tick()) {
                        self.pending_echo = Some((m.t_client, t));
                    }
                    vec![]
                }
                Err(e) => vec![ServerMessage::error(e)],
            },
            ClientMessage::StartTrial { seed, time_limit_s } => self.start_trial(seed, time_limit_s),
            ClientMessage::Abort => match self.trial.take() {
                Some(mut t) => {
                    t.engine.abort_with("operator abort");
                    vec![self.finish(t)]
                }
                None => vec![ServerMessage::error("no trial running")],
            },
            ClientMessage::SetCondition { condition } => {
                if self.is_running() {
                    return vec![ServerMessage::error("cannot change condition during a trial")];
                }
                self.condition = condition;
                vec![ServerMessage::ConditionSet { condition }]
            }
            ClientMessage::Recalibrate => {
                if self.is_running() {
                    return vec![ServerMessage::error("cannot recalibrate during a trial")];
                }
                match self.recalibrate() {
                    Ok(c) => vec![ServerMessage::Calibrated { calibration: c }],
                    Err(e) => vec![ServerMessage::error(e)],
                }
            }
        }
    }

    fn recalibrate(&mut self) -> Result<EmgCalibration, String> {
        let mut spec = self.config.emg.clone();
        spec.seed = spec.seed.wrapping_add(self.trials_started);
        let mut source = EmgSource::new(spec).map_err(|e| e.to_string())?;
        let cal = source
            .run_calibration_protocol(CALIBRATION_WINDOW_TICKS)
            .map_err(|e| e.to_string())?;
        self.calibration = Some(cal);
        Ok(cal)
    }

    fn start_trial(&mut self, seed: Option<u64>, time_limit_s: Option<f64>) -> Vec<ServerMessage> {
        if self.is_running() {
            return vec![ServerMessage::error("a trial is already running")];
        }
        let limit = time_limit_s.unwrap_or(DEFAULT_TIME_LIMIT_S);
        if !(limit.is_finite() && limit > 0.0) {
            return vec![ServerMessage::error("time_limit_s must be positive")];
        }
        let seed = seed.unwrap_or(self.trials_started);
        let id = format!("live_{:03}", self.trials_started);
        let setup = TrialSetup {
            trial_id: id.clone(),
            scenario: "live".into(),
            condition: self.condition,
            seed,
            scene: self.config.scene,
            wrist_start: DEFAULT_WRIST_START,
            time_limit_ticks: (limit * TICK_RATE_HZ as f64).round() as u64,
            emg_trace: None,
            calibration: self.calibration,
        };
        match TrialEngine::new(&self.config.settings(), setup) {
            Ok(engine) => {
                self.trials_started += 1;
                self.intent = IntentMessage::default();
                self.pending_echo = None;
                self.last_echo = None;
                self.rezero_pending = false;
                tracing::info!(trial = %id, condition = %self.condition, seed, "live trial started");
                self.trial = Some(LiveTrial { id: id.clone(), engine });
                vec![ServerMessage::TrialStarted {
                    trial_id: id,
                    condition: self.condition,
                    seed,
                }]
            }
            Err(e) => vec![ServerMessage::error(e.to_string())],
        }
    }

    /// Run one tick of the current trial. Emits a telemetry frame every
    /// `decimation` ticks, starting at tick 0, and the trial summary when it
    /// ends.
    pub fn step(&mut self) -> Vec<ServerMessage> {
        let Some(trial) = self.trial.as_mut() else {
            return vec![];
        };
        let t = trial.engine.tick();
        let input = TickInput {
            intent: Intent::new(self.intent.flexion, self.intent.extension),
            arm_vel: self.intent.arm_vel,
            rezero: std::mem::take(&mut self.rezero_pending),
            perturbations: vec![],
        };
        if let Some((t_client, received_tick)) = self.pending_echo.take() {
            self.last_echo = Some(IntentEcho {
                t_client,
                received_tick,
                applied_tick: t,
            });
        }
        let mut out = Vec::new();
        match trial.engine.step(&input) {
            Ok(report) => {
                if report.tick % self.config.decimation as u64 == 0 {
                    out.push(ServerMessage::Telemetry(TelemetryFrame::from_report(
                        &trial.id,
                        &report,
                        self.last_echo,
                    )));
                }
            }
            Err(e) => {
                tracing::error!(trial = %trial.id, error = %e, "live trial failed");
                trial.engine.abort_with(&e.to_string());
                out.push(ServerMessage::error(e.to_string()));
            }
        }
        if trial.engine.outcome().is_some() {
            let trial = self.trial.take().expect("running");
            out.push(self.finish(trial));
        }
        out
    }

    /// The operator went away: abort any running trial and log it.
    pub fn disconnect(&mut self) -> Option<ServerMessage> {
        let mut t = self.trial.take()?;
        t.engine.abort_with("operator disconnected");
        Some(self.finish(t))
    }

    fn finish(&mut self, trial: LiveTrial) -> ServerMessage {
        let record = trial.engine.into_record();
        tracing::info!(
            trial = %record.trial_id,
            outcome = record.outcome.as_str(),
            score = record.score.value(),
            "live trial ended"
        );
        if let Some(dir) = &self.out_dir {
            let written = std::fs::create_dir_all(dir)
                .map_err(|e| e.to_string())
                .and_then(|_| log::write_trial(dir, &record).map_err(|e| e.to_string()));
            if let Err(e) = written {
                tracing::error!(trial = %record.trial_id, error = %e, "could not write trial log");
            }
        }
        ServerMessage::TrialEnded {
            trial_id: record.trial_id,
            outcome: record.outcome,
            score: record.score.value(),
            time_remaining: record.time_remaining,
            dropped: record.dropped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(decimation: u32) -> LiveSession {
        LiveSession::new(
            SessionConfig {
                decimation,
                ..SessionConfig::default()
            },
            None,
        )
    }

    fn start(s: &mut LiveSession) {
        let out = s.handle(ClientMessage::StartTrial {
            seed: Some(1),
            time_limit_s: None,
        });
        assert!(matches!(out[..], [ServerMessage::TrialStarted { .. }]), "{out:?}");
    }

    fn frames(msgs: Vec<ServerMessage>) -> Vec<TelemetryFrame> {
        msgs.into_iter()
            .filter_map(|m| match m {
                ServerMessage::Telemetry(f) => Some(f),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn parses_versioned_messages() {
        let m = parse_client_message(r#"{"v":1,"type":"intent","flexion":0.5,"extension":0}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Intent(IntentMessage {
                flexion: 0.5,
                ..IntentMessage::default()
            })
        );
        assert_eq!(parse_client_message(r#"{"v":1,"type":"abort"}"#).unwrap(), ClientMessage::Abort);
        assert!(parse_client_message(r#"{"type":"abort"}"#).unwrap_err().contains("version"));
        assert!(parse_client_message(r#"{"v":2,"type":"abort"}"#).unwrap_err().contains("version 2"));
        assert!(parse_client_message(r#"{"v":1,"type":"jump"}"#).is_err());
        assert!(parse_client_message("[1,2").unwrap_err().contains("malformed"));
    }

    #[test]
    fn server_messages_carry_version_and_type() {
        let text = ServerMessage::ConditionSet {
            condition: Condition::Standard,
        }
        .to_json();
        assert_eq!(text, r#"{"v":1,"type":"condition_set","condition":"standard"}"#);
    }

    #[test]
    fn intent_is_clamped() {
        let m = IntentMessage {
            flexion: 1.7,
            extension: -0.2,
            arm_vel: [3.0, 4.0, 0.0],
            ..IntentMessage::default()
        }
        .sanitized()
        .unwrap();
        assert_eq!((m.flexion, m.extension), (1.0, 0.0));
        assert!((m.arm_vel[0] - 0.15).abs() < 1e-12 && (m.arm_vel[1] - 0.2).abs() < 1e-12);
        let bad = IntentMessage {
            flexion: f64::NAN,
            ..IntentMessage::default()
        };
        assert!(bad.sanitized().is_err());
    }

    #[test]
    fn telemetry_is_decimated_and_starts_at_zero() {
        let mut s = session(20);
        start(&mut s);
        let mut all = Vec::new();
        for _ in 0..1000 {
            all.extend(frames(s.step()));
        }
        assert_eq!(all.len(), 50);
        assert_eq!(all[0].tick, 0);
        assert_eq!(all[0].trial_time, 0.0);
        for w in all.windows(2) {
            assert_eq!(w[1].tick - w[0].tick, 20);
        }
    }

    #[test]
    fn intent_applies_on_next_tick() {
        let mut s = session(1);
        start(&mut s);
        for _ in 0..5 {
            s.step();
        }
        let msg = ClientMessage::Intent(IntentMessage {
            flexion: 1.0,
            t_client: 12.5,
            ..IntentMessage::default()
        });
        assert!(s.handle(msg).is_empty());
        let f = frames(s.step()).pop().unwrap();
        assert_eq!(f.tick, 5);
        assert_eq!(
            f.intent_echo,
            Some(IntentEcho {
                t_client: 12.5,
                received_tick: 5,
                applied_tick: 5
            })
        );
    }

    #[test]
    fn lifecycle_errors_keep_the_session() {
        let mut s = session(20);
        assert!(matches!(s.handle(ClientMessage::Abort)[..], [ServerMessage::Error { .. }]));
        start(&mut s);
        let again = s.handle(ClientMessage::StartTrial {
            seed: None,
            time_limit_s: None,
        });
        assert!(matches!(again[..], [ServerMessage::Error { .. }]));
        let cond = s.handle(ClientMessage::SetCondition {
            condition: Condition::Standard,
        });
        assert!(matches!(cond[..], [ServerMessage::Error { .. }]));
        assert!(matches!(s.handle(ClientMessage::Recalibrate)[..], [ServerMessage::Error { .. }]));
        s.step();
        match &s.handle(ClientMessage::Abort)[..] {
            [ServerMessage::TrialEnded { outcome, .. }] => assert_eq!(*outcome, Outcome::Aborted),
            other => panic!("{other:?}"),
        }
        assert!(!s.is_running());
        assert!(matches!(s.handle(ClientMessage::Recalibrate)[..], [ServerMessage::Calibrated { .. }]));
        let cond = s.handle(ClientMessage::SetCondition {
            condition: Condition::Standard,
        });
        assert!(matches!(cond[..], [ServerMessage::ConditionSet { .. }]));
        assert_eq!(s.condition(), Condition::Standard);
    }

    #[test]
    fn disconnect_aborts_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = LiveSession::new(SessionConfig::default(), Some(dir.path().to_path_buf()));
        start(&mut s);
        for _ in 0..30 {
            s.step();
        }
        match s.disconnect() {
            Some(ServerMessage::TrialEnded { outcome, .. }) => assert_eq!(outcome, Outcome::Aborted),
            other => panic!("{other:?}"),
        }
        let rows = log::read_trace(&log::trace_path(dir.path(), "live_000")).unwrap();
        assert_eq!(rows.len(), 30);
        let events = log::read_events(&log::events_path(dir.path(), "live_000")).unwrap();
        assert!(matches!(
            events.last().unwrap().kind,
            crate::trials::EventKind::TrialEnded {
                outcome: Outcome::Aborted,
                ..
            }
        ));
        assert!(s.disconnect().is_none());
    }

    #[test]
    fn short_trial_times_out() {
        let mut s = session(20);
        s.handle(ClientMessage::StartTrial {
            seed: Some(0),
            time_limit_s: Some(0.1),
        });
        let mut ended = None;
        for _ in 0..200 {
            for m in s.step() {
                if let ServerMessage::TrialEnded { outcome, .. } = m {
                    ended = Some(outcome);
                }
            }
        }
        assert_eq!(ended, Some(Outcome::Timeout));
        assert!(!s.is_running());
    }
}
