//! Surrogate sEMG acquisition, calibration and normalization.
//!
//! Two channels are used: the wrist flexor and the wrist extensor. Raw samples
//! are full-wave rectified and smoothed by a 50 ms moving average
//! ([`EnvelopeFilter`]) before [`normalize`] maps them onto `[0, 1]` using the
//! thresholds found by [`calibrate`].

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{DT, TICK_RATE_HZ};

/// Default length of the baseline and MVC windows (5 s).
pub const CALIBRATION_WINDOW_TICKS: usize = 5 * TICK_RATE_HZ as usize;

/// Shortest quiescent window accepted by [`rezero`] (500 ms).
pub const MIN_REZERO_TICKS: usize = TICK_RATE_HZ as usize / 2;

/// Moving-average length of the envelope filter (50 ms).
pub const ENVELOPE_TICKS: usize = 50;

/// Fraction of the flexion MVC mean used as the upper threshold.
const UPPER_FRACTION: f64 = 0.5;
/// Floor of the lower threshold as a fraction of the MVC mean.
const LOWER_FLOOR_FRACTION: f64 = 0.05;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmgError {
    #[error("calibration input: {0}")]
    CalibrationInput(String),
    #[error("degenerate calibration on {channel} channel: upper {upper} V <= lower {lower} V")]
    DegenerateCalibration {
        channel: Channel,
        upper: f64,
        lower: f64,
    },
    #[error("rezero window of {got} samples is shorter than the required {required}")]
    WindowTooShort { got: usize, required: usize },
    #[error("end of EMG trace")]
    EndOfTrace,
    #[error("EMG trace {path}: {message}")]
    Trace { path: PathBuf, message: String },
    #[error("calibration file {path}: {message}")]
    CalibrationFile { path: PathBuf, message: String },
    #[error("invalid EMG source: {0}")]
    InvalidSource(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Flexor,
    Extensor,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Flexor => f.write_str("flexor"),
            Channel::Extensor => f.write_str("extensor"),
        }
    }
}

/// One millisecond of two-channel sEMG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawEmgSample {
    pub tick: u64,
    pub flexor_v: f64,
    pub extensor_v: f64,
}

impl RawEmgSample {
    pub fn channel(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Flexor => self.flexor_v,
            Channel::Extensor => self.extensor_v,
        }
    }
}

/// Offsets and thresholds for both channels, in volts.
///
/// Thresholds are expressed after offset removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmgCalibration {
    pub flexor_offset: f64,
    pub extensor_offset: f64,
    pub flexor_upper: f64,
    pub flexor_lower: f64,
    pub extensor_upper: f64,
    pub extensor_lower: f64,
}

const CALIBRATION_KEYS: [&str; 6] = [
    "flexor_offset",
    "extensor_offset",
    "flexor_upper",
    "flexor_lower",
    "extensor_upper",
    "extensor_lower",
];

impl EmgCalibration {
    pub fn validate(&self) -> Result<(), EmgError> {
        for (channel, upper, lower) in [
            (Channel::Flexor, self.flexor_upper, self.flexor_lower),
            (Channel::Extensor, self.extensor_upper, self.extensor_lower),
        ] {
            if !(upper.is_finite() && lower.is_finite()) || upper <= lower || lower < 0.0 {
                return Err(EmgError::DegenerateCalibration {
                    channel,
                    upper,
                    lower,
                });
            }
        }
        if !(self.flexor_offset.is_finite() && self.extensor_offset.is_finite()) {
            return Err(EmgError::CalibrationInput("non-finite offset".into()));
        }
        Ok(())
    }

    fn offset(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Flexor => self.flexor_offset,
            Channel::Extensor => self.extensor_offset,
        }
    }

    fn bounds(&self, channel: Channel) -> (f64, f64) {
        match channel {
            Channel::Flexor => (self.flexor_lower, self.flexor_upper),
            Channel::Extensor => (self.extensor_lower, self.extensor_upper),
        }
    }

    /// Serialize as `key = value` lines, volts.
    pub fn to_kv_string(&self) -> String {
        let values = [
            self.flexor_offset,
            self.extensor_offset,
            self.flexor_upper,
            self.flexor_lower,
            self.extensor_upper,
            self.extensor_lower,
        ];
        let mut out = String::new();
        for (key, value) in CALIBRATION_KEYS.iter().zip(values) {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// Parse the `key = value` format. Blank lines and `#` comments are skipped;
    /// all six keys are required.
    pub fn from_kv_str(text: &str) -> Result<Self, String> {
        let mut values: [Option<f64>; 6] = [None; 6];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim();
            let idx = CALIBRATION_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| format!("line {}: unknown key `{key}`", lineno + 1))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            values[idx] = Some(value);
        }
        let get = |i: usize| values[i].ok_or_else(|| format!("missing key `{}`", CALIBRATION_KEYS[i]));
        Ok(Self {
            flexor_offset: get(0)?,
            extensor_offset: get(1)?,
            flexor_upper: get(2)?,
            flexor_lower: get(3)?,
            extensor_upper: get(4)?,
            extensor_lower: get(5)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EmgError> {
        fs::write(path, self.to_kv_string()).map_err(|e| EmgError::CalibrationFile {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmgError> {
        let err = |message: String| EmgError::CalibrationFile {
            path: path.to_owned(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let cal = Self::from_kv_str(&text).map_err(err)?;
        cal.validate()?;
        Ok(cal)
    }
}

/// Normalized flexor (`s_f`) and extensor (`s_x`) activations, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedEmgPair {
    pub s_f: f64,
    pub s_x: f64,
}

impl NormalizedEmgPair {
    /// Clamps both activations into `[0, 1]`; NaN maps to 0.
    pub fn new(s_f: f64, s_x: f64) -> Self {
        Self {
            s_f: clamp_unit(s_f),
            s_x: clamp_unit(s_x),
        }
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn rectified_mean(window: &[RawEmgSample], channel: Channel) -> f64 {
    window.iter().map(|s| s.channel(channel).abs()).sum::<f64>() / window.len() as f64
}

fn check_window(name: &str, window: &[RawEmgSample]) -> Result<(), EmgError> {
    if window.is_empty() {
        return Err(EmgError::CalibrationInput(format!("{name} window is empty")));
    }
    if window
        .iter()
        .any(|s| !s.flexor_v.is_finite() || !s.extensor_v.is_finite())
    {
        return Err(EmgError::CalibrationInput(format!(
            "{name} window has non-finite samples"
        )));
    }
    Ok(())
}

fn tick_span(window: &[RawEmgSample]) -> (u64, u64) {
    let lo = window.iter().map(|s| s.tick).min().unwrap_or(0);
    let hi = window.iter().map(|s| s.tick).max().unwrap_or(0);
    (lo, hi)
}

/// Derive offsets and thresholds from a rest baseline and two MVC windows.
///
/// Channel means are rectified means. For each channel the upper threshold is
/// half the offset-removed MVC mean; the lower threshold is the larger of the
/// channel's offset-removed activity during the antagonist MVC and 5% of its
/// own MVC mean.
pub fn calibrate(
    baseline: &[RawEmgSample],
    flexion_mvc: &[RawEmgSample],
    extension_mvc: &[RawEmgSample],
) -> Result<EmgCalibration, EmgError> {
    check_window("baseline", baseline)?;
    check_window("flexion MVC", flexion_mvc)?;
    check_window("extension MVC", extension_mvc)?;

    let spans = [
        ("baseline", tick_span(baseline)),
        ("flexion MVC", tick_span(flexion_mvc)),
        ("extension MVC", tick_span(extension_mvc)),
    ];
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            let (a, (a_lo, a_hi)) = spans[i];
            let (b, (b_lo, b_hi)) = spans[j];
            if a_lo <= b_hi && b_lo <= a_hi {
                return Err(EmgError::CalibrationInput(format!(
                    "{a} and {b} windows overlap in time"
                )));
            }
        }
    }

    let thresholds = |channel: Channel, own: &[RawEmgSample], antagonist: &[RawEmgSample]| {
        let offset = rectified_mean(baseline, channel);
        let mvc = rectified_mean(own, channel) - offset;
        let crosstalk = rectified_mean(antagonist, channel) - offset;
        let upper = UPPER_FRACTION * mvc;
        let lower = crosstalk.max(LOWER_FLOOR_FRACTION * mvc);
        (offset, upper, lower)
    };
    let (flexor_offset, flexor_upper, flexor_lower) =
        thresholds(Channel::Flexor, flexion_mvc, extension_mvc);
    let (extensor_offset, extensor_upper, extensor_lower) =
        thresholds(Channel::Extensor, extension_mvc, flexion_mvc);

    let cal = EmgCalibration {
        flexor_offset,
        extensor_offset,
        flexor_upper,
        flexor_lower,
        extensor_upper,
        extensor_lower,
    };
    cal.validate()?;
    Ok(cal)
}

/// Map a (conditioned) sample onto `[0, 1]` per channel: lower threshold to 0,
/// upper threshold to 1, clamped outside.
pub fn normalize(raw: &RawEmgSample, cal: &EmgCalibration) -> NormalizedEmgPair {
    let map = |channel: Channel| {
        let v = raw.channel(channel) - cal.offset(channel);
        let (lower, upper) = cal.bounds(channel);
        (v - lower) / (upper - lower)
    };
    NormalizedEmgPair::new(map(Channel::Flexor), map(Channel::Extensor))
}

/// Replace the offsets with the rectified means of a quiescent window. The
/// thresholds are kept.
pub fn rezero(
    cal: &EmgCalibration,
    quiescent_window: &[RawEmgSample],
) -> Result<EmgCalibration, EmgError> {
    if quiescent_window.len() < MIN_REZERO_TICKS {
        return Err(EmgError::WindowTooShort {
            got: quiescent_window.len(),
            required: MIN_REZERO_TICKS,
        });
    }
    check_window("quiescent", quiescent_window)?;
    Ok(EmgCalibration {
        flexor_offset: rectified_mean(quiescent_window, Channel::Flexor),
        extensor_offset: rectified_mean(quiescent_window, Channel::Extensor),
        ..*cal
    })
}

/// Full-wave rectification followed by a causal moving average.
#[derive(Debug, Clone)]
pub struct EnvelopeFilter {
    window: usize,
    flexor: VecDeque<f64>,
    extensor: VecDeque<f64>,
}

impl Default for EnvelopeFilter {
    fn default() -> Self {
        Self::new(ENVELOPE_TICKS)
    }
}

impl EnvelopeFilter {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            window,
            flexor: VecDeque::with_capacity(window),
            extensor: VecDeque::with_capacity(window),
        }
    }

    pub fn process(&mut self, raw: &RawEmgSample) -> RawEmgSample {
        fn push(buf: &mut VecDeque<f64>, window: usize, v: f64) -> f64 {
            if buf.len() == window {
                buf.pop_front();
            }
            buf.push_back(v.abs());
            // summed fresh each tick so the output carries no accumulated error
            buf.iter().sum::<f64>() / buf.len() as f64
        }
        RawEmgSample {
            tick: raw.tick,
            flexor_v: push(&mut self.flexor, self.window, raw.flexor_v),
            extensor_v: push(&mut self.extensor, self.window, raw.extensor_v),
        }
    }

    pub fn reset(&mut self) {
        self.flexor.clear();
        self.extensor.clear();
    }
}

/// Operator drive levels, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Intent {
    pub flexion: f64,
    pub extension: f64,
}

impl Intent {
    pub const REST: Intent = Intent {
        flexion: 0.0,
        extension: 0.0,
    };

    pub fn new(flexion: f64, extension: f64) -> Self {
        Self {
            flexion: clamp_unit(flexion),
            extension: clamp_unit(extension),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmgSourceMode {
    /// Seeded surrogate signal driven by a scripted intent.
    Synthetic,
    /// Samples read from a `tick,flexor_v,extensor_v` CSV.
    Replay { path: PathBuf },
    /// Surrogate signal driven by intent from the live session service.
    LiveSession,
}

/// Electrical profile of one simulated muscle channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelProfile {
    /// Resting DC level, V.
    pub offset_v: f64,
    /// Mean rectified amplitude at full intent (the MVC level), V.
    pub full_scale_v: f64,
    /// Fraction of the antagonist's activation picked up by this electrode.
    pub crosstalk: f64,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self {
            offset_v: 0.05,
            full_scale_v: 1.0,
            crosstalk: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmgSourceSpec {
    pub mode: EmgSourceMode,
    /// Linear offset ramp, V/s.
    pub drift_rate: f64,
    /// Random-walk component of the drift, V/sqrt(s).
    pub drift_walk: f64,
    /// Pass band of the surrogate muscle noise, Hz.
    pub noise_band: (f64, f64),
    /// Resting noise floor, V (rectified mean).
    pub noise_amplitude: f64,
    pub seed: u64,
    pub flexor: ChannelProfile,
    pub extensor: ChannelProfile,
}

impl Default for EmgSourceSpec {
    fn default() -> Self {
        Self {
            mode: EmgSourceMode::Synthetic,
            drift_rate: 0.0005,
            drift_walk: 0.0005,
            noise_band: (20.0, 450.0),
            noise_amplitude: 0.01,
            seed: 0,
            flexor: ChannelProfile::default(),
            extensor: ChannelProfile {
                offset_v: 0.04,
                full_scale_v: 0.8,
                crosstalk: 0.05,
            },
        }
    }
}

impl EmgSourceSpec {
    pub fn validate(&self) -> Result<(), EmgError> {
        let (lo, hi) = self.noise_band;
        let nyquist = TICK_RATE_HZ as f64 / 2.0;
        if !(self.drift_rate >= 0.0 && self.drift_walk >= 0.0 && self.noise_amplitude >= 0.0) {
            return Err(EmgError::InvalidSource(
                "drift and noise magnitudes must be non-negative".into(),
            ));
        }
        if !(lo > 0.0 && hi > lo && hi < nyquist) {
            return Err(EmgError::InvalidSource(format!(
                "noise band ({lo}, {hi}) Hz must satisfy 0 < low < high < {nyquist}"
            )));
        }
        for p in [self.flexor, self.extensor] {
            if !(p.full_scale_v > 0.0 && p.crosstalk >= 0.0 && p.offset_v.is_finite()) {
                return Err(EmgError::InvalidSource(format!("bad channel profile {p:?}")));
            }
        }
        Ok(())
    }
}

/// Second-order band-pass section (RBJ cookbook, constant peak gain).
#[derive(Debug, Clone)]
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(low_hz: f64, high_hz: f64, fs: f64) -> Self {
        let f0 = (low_hz * high_hz).sqrt();
        let q = f0 / (high_hz - low_hz);
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }

    /// Standard deviation of the output for unit-variance white input.
    fn output_std(&self) -> f64 {
        let mut probe = self.clone();
        probe.x1 = 0.0;
        probe.x2 = 0.0;
        probe.y1 = 0.0;
        probe.y2 = 0.0;
        let mut energy = 0.0;
        for n in 0..16_384 {
            let h = probe.process(if n == 0 { 1.0 } else { 0.0 });
            energy += h * h;
        }
        energy.sqrt()
    }
}

/// Unit-mean rectified band-limited noise.
#[derive(Debug, Clone)]
struct RectifiedNoise {
    filter: BandPass,
    scale: f64,
}

impl RectifiedNoise {
    fn new(low_hz: f64, high_hz: f64) -> Self {
        let filter = BandPass::new(low_hz, high_hz, TICK_RATE_HZ as f64);
        // E|N(0, s^2)| = s * sqrt(2/pi)
        let scale = 1.0 / (filter.output_std() * (2.0 / std::f64::consts::PI).sqrt());
        Self { filter, scale }
    }

    fn next(&mut self, white: f64) -> f64 {
        self.filter.process(white).abs() * self.scale
    }
}

#[derive(Debug, Clone)]
struct SyntheticState {
    rng: ChaCha8Rng,
    flexor_noise: RectifiedNoise,
    extensor_noise: RectifiedNoise,
    walk: [f64; 2],
}

#[derive(Debug, Clone)]
enum SourceState {
    Synthetic(Box<SyntheticState>),
    Replay { samples: Vec<RawEmgSample>, cursor: usize },
}

/// Per-tick producer of raw sEMG samples.
#[derive(Debug, Clone)]
pub struct EmgSource {
    spec: EmgSourceSpec,
    next_tick: u64,
    state: SourceState,
}

impl EmgSource {
    pub fn new(spec: EmgSourceSpec) -> Result<Self, EmgError> {
        let state = match &spec.mode {
            EmgSourceMode::Synthetic | EmgSourceMode::LiveSession => {
                spec.validate()?;
                let (lo, hi) = spec.noise_band;
                SourceState::Synthetic(Box::new(SyntheticState {
                    rng: ChaCha8Rng::seed_from_u64(spec.seed),
                    flexor_noise: RectifiedNoise::new(lo, hi),
                    extensor_noise: RectifiedNoise::new(lo, hi),
                    walk: [0.0; 2],
                }))
            }
            EmgSourceMode::Replay { path } => SourceState::Replay {
                samples: read_trace(path)?,
                cursor: 0,
            },
        };
        Ok(Self {
            spec,
            next_tick: 0,
            state,
        })
    }

    /// Replay source over samples already in memory.
    pub fn from_samples(samples: Vec<RawEmgSample>) -> Self {
        Self {
            spec: EmgSourceSpec {
                mode: EmgSourceMode::Replay {
                    path: PathBuf::from("<memory>"),
                },
                ..EmgSourceSpec::default()
            },
            next_tick: 0,
            state: SourceState::Replay { samples, cursor: 0 },
        }
    }

    pub fn spec(&self) -> &EmgSourceSpec {
        &self.spec
    }

    /// Produce the next sample. `intent` drives the synthetic generator and is
    /// ignored on replay; `None` means rest.
    pub fn next_sample(&mut self, intent: Option<Intent>) -> Result<RawEmgSample, EmgError> {
        let tick = self.next_tick;
        let sample = match &mut self.state {
            SourceState::Replay { samples, cursor } => {
                let s = *samples.get(*cursor).ok_or(EmgError::EndOfTrace)?;
                *cursor += 1;
                s
            }
            SourceState::Synthetic(st) => {
                let intent = intent.unwrap_or(Intent::REST);
                let white_f: f64 = StandardNormal.sample(&mut st.rng);
                let white_x: f64 = StandardNormal.sample(&mut st.rng);
                let step_f: f64 = StandardNormal.sample(&mut st.rng);
                let step_x: f64 = StandardNormal.sample(&mut st.rng);
                let walk_step = self.spec.drift_walk * DT.sqrt();
                st.walk[0] += walk_step * step_f;
                st.walk[1] += walk_step * step_x;
                let ramp = self.spec.drift_rate * (tick as f64 * DT);

                let c_f = st.flexor_noise.next(white_f);
                let c_x = st.extensor_noise.next(white_x);
                let fp = self.spec.flexor;
                let xp = self.spec.extensor;
                let act_f = fp.full_scale_v * (intent.flexion + fp.crosstalk * intent.extension);
                let act_x = xp.full_scale_v * (intent.extension + xp.crosstalk * intent.flexion);
                let a = self.spec.noise_amplitude;
                RawEmgSample {
                    tick,
                    flexor_v: fp.offset_v + ramp + st.walk[0] + (act_f + a) * c_f,
                    extensor_v: xp.offset_v + ramp + st.walk[1] + (act_x + a) * c_x,
                }
            }
        };
        self.next_tick += 1;
        Ok(sample)
    }

    /// Run the rest / flexion-MVC / extension-MVC protocol on this source and
    /// calibrate from it.
    pub fn run_calibration_protocol(&mut self, window_ticks: usize) -> Result<EmgCalibration, EmgError> {
        let mut take = |intent: Intent| -> Result<Vec<RawEmgSample>, EmgError> {
            (0..window_ticks).map(|_| self.next_sample(Some(intent))).collect()
        };
        let baseline = take(Intent::REST)?;
        let flexion = take(Intent::new(1.0, 0.0))?;
        let extension = take(Intent::new(0.0, 1.0))?;
        calibrate(&baseline, &flexion, &extension)
    }
}

/// Read a replay trace (`tick,flexor_v,extensor_v`, ticks strictly increasing).
pub fn read_trace(path: &Path) -> Result<Vec<RawEmgSample>, EmgError> {
    let err = |message: String| EmgError::Trace {
        path: path.to_owned(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["tick", "flexor_v", "extensor_v"] {
        return Err(err(format!(
            "expected header `tick,flexor_v,extensor_v`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<RawEmgSample> = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let s: RawEmgSample = row.map_err(|e| err(format!("row {}: {e}", i + 2)))?;
        if !(s.flexor_v.is_finite() && s.extensor_v.is_finite()) {
            return Err(err(format!("row {}: non-finite value", i + 2)));
        }
        if let Some(prev) = out.last() {
            if s.tick <= prev.tick {
                return Err(err(format!("row {}: tick {} not increasing", i + 2, s.tick)));
            }
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, samples: &[RawEmgSample]) -> Result<(), EmgError> {
    let err = |message: String| EmgError::Trace {
        path: path.to_owned(),
        message,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    for s in samples {
        writer.serialize(s).map_err(|e| err(e.to_string()))?;
    }
    writer.flush().map_err(|e| err(e.to_string()))
}
