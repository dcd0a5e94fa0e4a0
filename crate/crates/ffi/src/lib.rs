//! C ABI for the control stack and simulator.
//!
//! Functions return a [`ThStatus`]; on failure the message is available from
//! [`th_last_error_message`] on the same thread until the next call. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use tactile_hand::control::{self, ControlGains};
use tactile_hand::emg::{Intent, NormalizedEmgPair};
use tactile_hand::interface::SessionConfig;
use tactile_hand::plant::ObjectStatus;
use tactile_hand::tactile::{ContactReading, ContactSide, PressureReading};
use tactile_hand::trials::scenario::{Scenario, DEFAULT_TIME_LIMIT_S, DEFAULT_WRIST_START};
use tactile_hand::trials::{
    log, run_trial, Outcome, TickInput, TrialEngine, TrialError, TrialRecord, TrialSetup,
};
use tactile_hand::{Condition, TICK_RATE_HZ};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Finished = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThCondition {
    Standard = 0,
    Tactile = 1,
}

impl From<ThCondition> for Condition {
    fn from(c: ThCondition) -> Self {
        match c {
            ThCondition::Standard => Condition::Standard,
            ThCondition::Tactile => Condition::Tactile,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThContactSide {
    None = 0,
    Palmar = 1,
    Dorsal = 2,
}

impl From<ContactSide> for ThContactSide {
    fn from(s: ContactSide) -> Self {
        match s {
            ContactSide::None => ThContactSide::None,
            ContactSide::Palmar => ThContactSide::Palmar,
            ContactSide::Dorsal => ThContactSide::Dorsal,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThObjectStatus {
    InStartBin = 0,
    Held = 1,
    Slipping = 2,
    FreeFall = 3,
    SettledOut = 4,
    InEndBin = 5,
    Ejected = 6,
}

impl From<ObjectStatus> for ThObjectStatus {
    fn from(s: ObjectStatus) -> Self {
        match s {
            ObjectStatus::InStartBin => Self::InStartBin,
            ObjectStatus::Held => Self::Held,
            ObjectStatus::Slipping => Self::Slipping,
            ObjectStatus::FreeFall => Self::FreeFall,
            ObjectStatus::SettledOut => Self::SettledOut,
            ObjectStatus::InEndBin => Self::InEndBin,
            ObjectStatus::Ejected => Self::Ejected,
        }
    }
}

/// Trial outcome; `Running` while the trial is in progress.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThOutcome {
    Running = 0,
    Completed = 1,
    Timeout = 2,
    Aborted = 3,
}

impl From<Option<Outcome>> for ThOutcome {
    fn from(o: Option<Outcome>) -> Self {
        match o {
            None => Self::Running,
            Some(Outcome::Completed) => Self::Completed,
            Some(Outcome::Timeout) => Self::Timeout,
            Some(Outcome::Aborted) => Self::Aborted,
        }
    }
}

/// State after one tick. `x` is NaN when nothing is touched.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThTickState {
    pub tick: u64,
    pub u_c: f64,
    pub u_o: f64,
    pub voltage: f64,
    pub aperture: f64,
    pub grip_force: f64,
    pub p: f64,
    pub side: ThContactSide,
    pub x: f64,
    pub tactor_current: f64,
    pub carrier_f: f64,
    pub d: f64,
    pub h: f64,
    pub status: ThObjectStatus,
    pub grasped: bool,
    pub outcome: ThOutcome,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThTrialSummary {
    pub outcome: ThOutcome,
    pub score: f64,
    pub time_remaining: f64,
    pub trial_time: f64,
    pub exploration_contacts: u32,
    pub exploration_contact_rate: f64,
    pub fast_slips: u32,
    pub fast_slip_rate: f64,
    pub dropped: bool,
    pub final_status: ThObjectStatus,
}

impl From<&TrialRecord> for ThTrialSummary {
    fn from(r: &TrialRecord) -> Self {
        Self {
            outcome: Some(r.outcome).into(),
            score: r.score.value(),
            time_remaining: r.time_remaining,
            trial_time: r.trial_time,
            exploration_contacts: r.exploration_contacts,
            exploration_contact_rate: r.exploration_contact_rate,
            fast_slips: r.fast_slips,
            fast_slip_rate: r.fast_slip_rate,
            dropped: r.dropped,
            final_status: r.final_status.into(),
        }
    }
}

/// A live trial driven one tick at a time.
pub struct ThEngine {
    engine: TrialEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ThStatus, String);

impl From<TrialError> for Failure {
    fn from(e: TrialError) -> Self {
        let status = match &e {
            TrialError::Parse { .. } => ThStatus::Parse,
            TrialError::Io { .. } => ThStatus::Io,
            TrialError::Finished => ThStatus::Finished,
            _ => ThStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ThStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ThStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ThStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(ThStatus::NullPointer, "null pointer argument".into())
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(s: *const c_char) -> Result<Option<&'a str>, Failure> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(ThStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

/// # Safety
/// `s` must be a valid NUL-terminated string.
unsafe fn req_str<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    opt_str(s)?.ok_or_else(null)
}

fn parse_config(json: Option<&str>) -> Result<SessionConfig, Failure> {
    match json {
        Some(text) => Ok(SessionConfig::from_json_str(text, Path::new("<config>"))?),
        None => Ok(SessionConfig::default()),
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn th_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Control rate in Hz.
#[no_mangle]
pub extern "C" fn th_tick_rate_hz() -> u32 {
    TICK_RATE_HZ
}

/// Closing/opening commands from normalized activations.
///
/// # Safety
/// `u_c` and `u_o` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn th_volitional(s_f: f64, s_x: f64, u_c: *mut f64, u_o: *mut f64) -> ThStatus {
    guard(|| {
        if u_c.is_null() || u_o.is_null() {
            return Err(null());
        }
        let cmd = control::volitional(NormalizedEmgPair::new(s_f, s_x), 1.0);
        *u_c = cmd.u_c;
        *u_o = cmd.u_o;
        Ok(())
    })
}

/// Closing command after over-grasp modulation.
#[no_mangle]
pub extern "C" fn th_overgrasp(u_c: f64, p: f64, k: f64, p_g: f64, palmar: bool) -> f64 {
    let gains = ControlGains {
        k_overgrasp: k,
        p_g,
        ..ControlGains::default()
    };
    let cmd = control::volitional(NormalizedEmgPair::new(u_c, 0.0), 1.0);
    let contact = if palmar {
        ContactReading::touching(ContactSide::Palmar, 0.5)
    } else {
        ContactReading::none()
    };
    let reading = PressureReading { p, dp_dt: 0.0, tick: 0 };
    control::overgrasp_modulate(cmd, &reading, &contact, &gains).u_c
}

/// Start a live trial. `config_json` may be null for defaults. A
/// non-positive `time_limit_s` selects the default limit.
///
/// # Safety
/// `config_json` must be null or a valid string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn th_engine_new(
    config_json: *const c_char,
    condition: ThCondition,
    seed: u64,
    time_limit_s: f64,
    out: *mut *mut ThEngine,
) -> ThStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let cfg = parse_config(opt_str(config_json)?)?;
        let limit = if time_limit_s > 0.0 { time_limit_s } else { DEFAULT_TIME_LIMIT_S };
        let setup = TrialSetup {
            trial_id: format!("ffi_{seed}"),
            scenario: "ffi".into(),
            condition: condition.into(),
            seed,
            scene: cfg.scene,
            wrist_start: DEFAULT_WRIST_START,
            time_limit_ticks: (limit * TICK_RATE_HZ as f64).round() as u64,
            emg_trace: None,
            calibration: None,
        };
        let engine = TrialEngine::new(&cfg.settings(), setup)?;
        *out = Box::into_raw(Box::new(ThEngine { engine }));
        Ok(())
    })
}

/// Run one tick with the given intent and wrist velocity (m/s).
///
/// # Safety
/// `engine` must come from [`th_engine_new`]; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn th_engine_step(
    engine: *mut ThEngine,
    flexion: f64,
    extension: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    rezero: bool,
    out: *mut ThTickState,
) -> ThStatus {
    guard(|| {
        let h = engine.as_mut().ok_or_else(null)?;
        if ![flexion, extension, vx, vy, vz].iter().all(|v| v.is_finite()) {
            return Err(Failure(ThStatus::InvalidArgument, "inputs must be finite".into()));
        }
        let input = TickInput {
            intent: Intent::new(flexion, extension),
            arm_vel: [vx, vy, vz],
            rezero,
            perturbations: vec![],
        };
        let r = h.engine.step(&input)?;
        if let Some(out) = out.as_mut() {
            *out = ThTickState {
                tick: r.tick,
                u_c: r.command.u_c,
                u_o: r.command.u_o,
                voltage: r.command.voltage,
                aperture: r.hand.aperture,
                grip_force: r.hand.grip_force,
                p: r.row.p,
                side: r.contact.side().into(),
                x: r.contact.x().unwrap_or(f64::NAN),
                tactor_current: r.drive.current,
                carrier_f: r.drive.carrier_f,
                d: r.row.d,
                h: r.row.h,
                status: r.object.status.into(),
                grasped: r.grasped,
                outcome: r.outcome.into(),
            };
        }
        Ok(())
    })
}

/// Abort the trial if it is still running.
///
/// # Safety
/// `engine` must come from [`th_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn th_engine_abort(engine: *mut ThEngine) -> ThStatus {
    guard(|| {
        engine.as_mut().ok_or_else(null)?.engine.abort_with("aborted by caller");
        Ok(())
    })
}

/// Close the trial, optionally write its logs into `log_dir`, fill `out`
/// and release the handle. The handle is released even on failure.
///
/// # Safety
/// `engine` must come from [`th_engine_new`] and is invalid afterwards;
/// `log_dir` may be null; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn th_engine_finish(
    engine: *mut ThEngine,
    log_dir: *const c_char,
    out: *mut ThTrialSummary,
) -> ThStatus {
    guard(|| {
        if engine.is_null() {
            return Err(null());
        }
        let h = Box::from_raw(engine);
        let record = h.engine.into_record();
        if let Some(out) = out.as_mut() {
            *out = ThTrialSummary::from(&record);
        }
        if let Some(dir) = opt_str(log_dir)? {
            log::write_trial(Path::new(dir), &record)?;
        }
        Ok(())
    })
}

/// Release a handle without recording anything. Null is ignored.
///
/// # Safety
/// `engine` must be null or come from [`th_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn th_engine_free(engine: *mut ThEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Run a scenario file to completion.
///
/// # Safety
/// `scenario_path` must be a valid string; `config_json` and `log_dir` may be
/// null; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn th_run_scenario(
    scenario_path: *const c_char,
    config_json: *const c_char,
    condition: ThCondition,
    seed: u64,
    log_dir: *const c_char,
    out: *mut ThTrialSummary,
) -> ThStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let path = PathBuf::from(req_str(scenario_path)?);
        let cfg = parse_config(opt_str(config_json)?)?;
        let scenario = Scenario::load(&path)?;
        let record = run_trial(&scenario, &cfg.settings(), condition.into(), seed, &scenario.name)?;
        if let Some(dir) = opt_str(log_dir)? {
            log::write_trial(Path::new(dir), &record)?;
        }
        *out = ThTrialSummary::from(&record);
        Ok(())
    })
}
