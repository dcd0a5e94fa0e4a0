//! Thumb pressure sensor and finger contact-location sensor.
//!
//! The pressure sensor is a piezoresistive element in series with a 1 kΩ
//! resistor; `p` is the voltage across that resistor normalized by its value at
//! the saturated resistance. The contact-location sensor is a voltage gradient
//! along the finger, read back through a 12-bit converter.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::DT;

/// Window of the causal pressure derivative (10 ms).
pub const DERIVATIVE_WINDOW_TICKS: u64 = 10;
/// Look-back of the slow-slip comparison (0.5 s).
pub const SLOW_SLIP_LOOKBACK_TICKS: u64 = 500;
/// Retained pressure history; must cover the slow-slip look-back.
pub const HISTORY_CAPACITY: usize = 1024;
/// Ticks `p` must stay at or above `p_g` before a grasp is reported.
pub const GRASP_DEBOUNCE_TICKS: u32 = 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TactileError {
    #[error("grip force must be non-negative and finite, got {0} N")]
    InvalidForce(f64),
    #[error("invalid sensor model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressureSensorModel {
    pub supply_v: f64,
    pub series_r: f64,
    pub r_unloaded: f64,
    pub r_saturated: f64,
    /// Force constant of the exponential resistance decay, N.
    pub force_scale: f64,
}

impl Default for PressureSensorModel {
    fn default() -> Self {
        Self {
            supply_v: 5.0,
            series_r: 1000.0,
            r_unloaded: 30_000.0,
            r_saturated: 200.0,
            force_scale: 10.0,
        }
    }
}

impl PressureSensorModel {
    pub fn validate(&self) -> Result<(), TactileError> {
        if !(self.r_unloaded > self.r_saturated && self.r_saturated > 0.0) {
            return Err(TactileError::InvalidModel(
                "need r_unloaded > r_saturated > 0".into(),
            ));
        }
        if !(self.supply_v > 0.0 && self.series_r > 0.0 && self.force_scale > 0.0) {
            return Err(TactileError::InvalidModel(
                "supply, series resistance and force scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sensor resistance under `force` newtons.
    pub fn resistance(&self, force: f64) -> f64 {
        self.r_saturated + (self.r_unloaded - self.r_saturated) * (-force / self.force_scale).exp()
    }

    /// Voltage across the series resistor for a given sensor resistance.
    pub fn divider_voltage(&self, sensor_r: f64) -> f64 {
        self.supply_v * self.series_r / (self.series_r + sensor_r)
    }

    /// Divider output at full saturation; the normalization reference.
    pub fn v_max(&self) -> f64 {
        self.divider_voltage(self.r_saturated)
    }

    /// Normalized pressure signal `p` in `[0, 1]`.
    pub fn pressure_from_force(&self, force: f64) -> Result<f64, TactileError> {
        if !(force >= 0.0) {
            return Err(TactileError::InvalidForce(force));
        }
        let v = self.divider_voltage(self.resistance(force));
        Ok((v / self.v_max()).clamp(0.0, 1.0))
    }
}

/// `p`, its derivative, and the tick it was sampled on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PressureReading {
    pub p: f64,
    pub dp_dt: f64,
    pub tick: u64,
}

/// Ordered ring of `(tick, p)` samples.
#[derive(Debug, Clone)]
pub struct PressureHistory {
    samples: VecDeque<(u64, f64)>,
    capacity: usize,
}

impl Default for PressureHistory {
    fn default() -> Self {
        Self::with_capacity(HISTORY_CAPACITY)
    }
}

impl PressureHistory {
    pub fn with_capacity(capacity: usize) -> Self {
        let capacity = capacity.max(SLOW_SLIP_LOOKBACK_TICKS as usize + 1);
        Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Append a sample. Ticks must increase; out-of-order samples are dropped.
    pub fn push(&mut self, tick: u64, p: f64) {
        if let Some(&(last, _)) = self.samples.back() {
            if tick <= last {
                return;
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((tick, p));
    }

    pub fn latest(&self) -> Option<(u64, f64)> {
        self.samples.back().copied()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Ticks between the oldest and newest retained samples.
    pub fn span_ticks(&self) -> u64 {
        match (self.samples.front(), self.samples.back()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0,
        }
    }

    /// Sample whose tick is nearest to `tick` (earlier sample on ties).
    pub fn nearest(&self, tick: u64) -> Option<(u64, f64)> {
        if self.samples.is_empty() {
            return None;
        }
        let idx = match self.samples.binary_search_by(|s| s.0.cmp(&tick)) {
            Ok(i) => return Some(self.samples[i]),
            Err(i) => i,
        };
        let before = idx.checked_sub(1).map(|i| self.samples[i]);
        let after = self.samples.get(idx).copied();
        match (before, after) {
            (Some(b), Some(a)) => {
                if a.0 - tick < tick - b.0 {
                    Some(a)
                } else {
                    Some(b)
                }
            }
            (b, a) => b.or(a),
        }
    }
}

/// A value that is only meaningful once enough history has accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Warmed {
    pub value: f64,
    pub ready: bool,
}

/// Causal two-point slope over the last 10 ms, in 1/s.
pub fn derivative(history: &PressureHistory) -> Warmed {
    let Some((now, p_now)) = history.latest() else {
        return Warmed::default();
    };
    if history.span_ticks() < DERIVATIVE_WINDOW_TICKS {
        return Warmed::default();
    }
    let (then, p_then) = history
        .nearest(now - DERIVATIVE_WINDOW_TICKS)
        .expect("non-empty history");
    Warmed {
        value: (p_now - p_then) / ((now - then) as f64 * DT),
        ready: true,
    }
}

/// `p(t) - p(t - 0.5 s)` with nearest-sample lookup.
pub fn slow_slip_delta(history: &PressureHistory) -> Warmed {
    let Some((now, p_now)) = history.latest() else {
        return Warmed::default();
    };
    if history.span_ticks() < SLOW_SLIP_LOOKBACK_TICKS {
        return Warmed::default();
    }
    let (_, p_then) = history
        .nearest(now - SLOW_SLIP_LOOKBACK_TICKS)
        .expect("non-empty history");
    Warmed {
        value: p_now - p_then,
        ready: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContactSide {
    #[default]
    None,
    Palmar,
    Dorsal,
}

impl ContactSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ContactSide::None => "none",
            ContactSide::Palmar => "palmar",
            ContactSide::Dorsal => "dorsal",
        }
    }
}

impl std::str::FromStr for ContactSide {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ContactSide::None),
            "palmar" => Ok(ContactSide::Palmar),
            "dorsal" => Ok(ContactSide::Dorsal),
            other => Err(format!("unknown contact side `{other}`")),
        }
    }
}

/// Contact side and location; `x` is 0 at the proximal end and 1 at the
/// fingertip, and is present exactly when a side is touched.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactReading {
    side: ContactSide,
    x: Option<f64>,
}

impl ContactReading {
    pub fn none() -> Self {
        Self::default()
    }

    /// `side` must not be `None`; `x` is clamped into `[0, 1]`.
    pub fn touching(side: ContactSide, x: f64) -> Self {
        if side == ContactSide::None {
            return Self::none();
        }
        Self {
            side,
            x: Some(if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) }),
        }
    }

    pub fn side(&self) -> ContactSide {
        self.side
    }

    pub fn x(&self) -> Option<f64> {
        self.x
    }

    pub fn is_touching(&self) -> bool {
        self.side != ContactSide::None
    }
}

/// Which face of the finger the contact lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerFace {
    Palmar,
    Dorsal,
}

/// A point on the finger surface: face plus arc-length fraction from the
/// proximal end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerSurfacePoint {
    pub face: FingerFace,
    pub arc_fraction: f64,
}

/// Voltage-gradient contact-location sensor read through an ADC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactSensorModel {
    pub v_low: f64,
    pub v_high: f64,
    pub adc_bits: u32,
    pub adc_ref_v: f64,
}

impl Default for ContactSensorModel {
    fn default() -> Self {
        Self {
            v_low: 0.5,
            v_high: 4.5,
            adc_bits: 12,
            adc_ref_v: 5.0,
        }
    }
}

impl ContactSensorModel {
    pub fn validate(&self) -> Result<(), TactileError> {
        if !(self.v_high > self.v_low && self.v_low >= 0.0 && self.adc_ref_v >= self.v_high) {
            return Err(TactileError::InvalidModel(
                "need 0 <= v_low < v_high <= adc_ref_v".into(),
            ));
        }
        if !(1..=24).contains(&self.adc_bits) {
            return Err(TactileError::InvalidModel("adc_bits must be 1..=24".into()));
        }
        Ok(())
    }

    /// Gradient voltage at location `x`.
    pub fn encode(&self, x: f64) -> f64 {
        self.v_low + x * (self.v_high - self.v_low)
    }

    /// Quantize through the ADC and map back to a location in `[0, 1]`.
    pub fn decode(&self, volts: f64) -> f64 {
        let levels = ((1u64 << self.adc_bits) - 1) as f64;
        let code = (volts / self.adc_ref_v * levels).round().clamp(0.0, levels);
        let v = code / levels * self.adc_ref_v;
        ((v - self.v_low) / (self.v_high - self.v_low)).clamp(0.0, 1.0)
    }
}

/// Read the contact-location sensor for the current contact geometry.
pub fn contact_from_geometry(
    point: Option<FingerSurfacePoint>,
    touching: bool,
    model: &ContactSensorModel,
) -> ContactReading {
    match point {
        Some(pt) if touching => {
            let x = model.decode(model.encode(pt.arc_fraction.clamp(0.0, 1.0)));
            let side = match pt.face {
                FingerFace::Palmar => ContactSide::Palmar,
                FingerFace::Dorsal => ContactSide::Dorsal,
            };
            ContactReading::touching(side, x)
        }
        _ => ContactReading::none(),
    }
}

/// Threshold-plus-debounce grasp detector.
#[derive(Debug, Clone)]
pub struct GraspDetector {
    pub threshold: f64,
    pub debounce_ticks: u32,
    run: u32,
}

impl GraspDetector {
    pub fn new(threshold: f64, debounce_ticks: u32) -> Self {
        Self {
            threshold,
            debounce_ticks,
            run: 0,
        }
    }

    /// Feed one tick of `p`; true once `p >= threshold` has held for the
    /// debounce window. Drops out immediately when `p` falls below.
    pub fn update(&mut self, p: f64) -> bool {
        if p >= self.threshold {
            self.run = self.run.saturating_add(1);
        } else {
            self.run = 0;
        }
        self.is_grasped()
    }

    pub fn is_grasped(&self) -> bool {
        self.run >= self.debounce_ticks.max(1)
    }

    pub fn reset(&mut self) {
        self.run = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TactileConfig {
    pub pressure: PressureSensorModel,
    pub contact: ContactSensorModel,
    /// Standard deviation of additive Gaussian noise on `p`.
    pub noise_sigma: f64,
    pub grasp_debounce_ticks: u32,
}

impl Default for TactileConfig {
    fn default() -> Self {
        Self {
            pressure: PressureSensorModel::default(),
            contact: ContactSensorModel::default(),
            noise_sigma: 0.001,
            grasp_debounce_ticks: GRASP_DEBOUNCE_TICKS,
        }
    }
}

impl TactileConfig {
    pub fn validate(&self) -> Result<(), TactileError> {
        self.pressure.validate()?;
        self.contact.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(TactileError::InvalidModel("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the controller and the feedback renderer need from the sensors
/// on one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TactileFrame {
    pub pressure: PressureReading,
    pub derivative_ready: bool,
    pub slow_delta: Warmed,
    pub contact: ContactReading,
    pub grasped: bool,
}

/// Stateful sensor front end: noise, history, derivative, grasp debounce.
#[derive(Debug, Clone)]
pub struct TactileProcessor {
    config: TactileConfig,
    history: PressureHistory,
    grasp: GraspDetector,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl TactileProcessor {
    pub fn new(config: TactileConfig, p_g: f64, seed: u64) -> Self {
        let noise = (config.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, config.noise_sigma).expect("sigma validated"));
        Self {
            grasp: GraspDetector::new(p_g, config.grasp_debounce_ticks),
            config,
            history: PressureHistory::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        }
    }

    pub fn history(&self) -> &PressureHistory {
        &self.history
    }

    pub fn process(
        &mut self,
        tick: u64,
        grip_force: f64,
        surface: Option<FingerSurfacePoint>,
        touching: bool,
    ) -> Result<TactileFrame, TactileError> {
        let mut p = self.config.pressure.pressure_from_force(grip_force)?;
        if let Some(noise) = &self.noise {
            p = (p + noise.sample(&mut self.rng)).clamp(0.0, 1.0);
        }
        self.history.push(tick, p);
        let d = derivative(&self.history);
        let slow = slow_slip_delta(&self.history);
        let grasped = self.grasp.update(p);
        Ok(TactileFrame {
            pressure: PressureReading {
                p,
                dp_dt: d.value,
                tick,
            },
            derivative_ready: d.ready,
            slow_delta: slow,
            contact: contact_from_geometry(surface, touching, &self.config.contact),
            grasped,
        })
    }
}
