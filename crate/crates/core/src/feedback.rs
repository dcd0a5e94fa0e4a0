//! Vibrotactile contact-location feedback.
//!
//! Dorsal contact drives a constant 250 Hz vibration, palmar contact a
//! vibration pulsed by `|sin(2π·4.75 Hz·t)|`. Amplitude is `0.5 A·√(1−X)`, so
//! proximal contact feels stronger than fingertip contact. Once a grasp is
//! detected the palmar carrier sweeps linearly from 250 Hz down to 150 Hz over
//! 2 s and holds there until release.

use std::f64::consts::{PI, TAU};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::tactile::{ContactReading, ContactSide};
use crate::{tick_to_seconds, DT, TICK_RATE_HZ};

pub const PEAK_CURRENT_A: f64 = 0.5;
pub const CARRIER_HZ: f64 = 250.0;
pub const GRASP_CARRIER_HZ: f64 = 150.0;
pub const SWEEP_SECONDS: f64 = 2.0;
pub const ENVELOPE_HZ: f64 = 4.75;

/// Minimum window accepted by [`spectral_probe`] (2 s).
pub const PROBE_MIN_SAMPLES: usize = 2 * TICK_RATE_HZ as usize;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TactorDrive {
    /// Instantaneous tactor current, A.
    pub current: f64,
    pub carrier_f: f64,
    pub envelope_active: bool,
    pub amplitude_scale: f64,
    pub side: ContactSide,
}

impl TactorDrive {
    pub fn silent(carrier_f: f64) -> Self {
        Self {
            current: 0.0,
            carrier_f,
            envelope_active: false,
            amplitude_scale: 0.0,
            side: ContactSide::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepState {
    pub grasp_onset_tick: Option<u64>,
    pub active: bool,
    /// Integrated palmar carrier phase, radians in `[0, 2π)`.
    pub phase: f64,
    pub last_tick: Option<u64>,
}

/// Carrier frequency `elapsed` seconds after grasp onset.
pub fn sweep_frequency(elapsed: f64) -> f64 {
    let f = CARRIER_HZ - (CARRIER_HZ - GRASP_CARRIER_HZ) * (elapsed / SWEEP_SECONDS);
    f.clamp(GRASP_CARRIER_HZ, CARRIER_HZ)
}

/// `sin(2π·f·t)` for a frequency that is a whole number of Hz, reduced exactly
/// in tick units so long sessions do not lose precision.
fn stationary_sin(hz: f64, tick: u64) -> f64 {
    let cycles = (hz * tick as f64 * DT).fract();
    (TAU * cycles).sin()
}

/// Render one tick of tactor drive.
///
/// The palmar carrier phase is integrated tick by tick so the waveform stays
/// continuous while the frequency sweeps.
pub fn render(
    contact: &ContactReading,
    grasped: bool,
    sweep: &SweepState,
    tick: u64,
) -> (TactorDrive, SweepState) {
    let mut next = *sweep;
    if grasped && !sweep.active {
        next.active = true;
        next.grasp_onset_tick = Some(tick);
    } else if !grasped {
        next.active = false;
        next.grasp_onset_tick = None;
    }
    let palmar_f = match next.grasp_onset_tick {
        Some(onset) if next.active => sweep_frequency(tick_to_seconds(tick.saturating_sub(onset))),
        _ => CARRIER_HZ,
    };

    next.phase = match sweep.last_tick {
        None => TAU * (CARRIER_HZ * tick_to_seconds(tick)).fract(),
        Some(last) => {
            let dt = tick_to_seconds(tick.saturating_sub(last));
            (sweep.phase + TAU * palmar_f * dt).rem_euclid(TAU)
        }
    };
    next.last_tick = Some(tick);

    let drive = match (contact.side(), contact.x()) {
        (ContactSide::Dorsal, Some(x)) => {
            let scale = (1.0 - x).sqrt();
            TactorDrive {
                current: PEAK_CURRENT_A * scale * stationary_sin(CARRIER_HZ, tick),
                carrier_f: CARRIER_HZ,
                envelope_active: false,
                amplitude_scale: scale,
                side: ContactSide::Dorsal,
            }
        }
        (ContactSide::Palmar, Some(x)) => {
            let scale = (1.0 - x).sqrt();
            let envelope = stationary_sin(ENVELOPE_HZ, tick).abs();
            TactorDrive {
                current: envelope * PEAK_CURRENT_A * scale * next.phase.sin(),
                carrier_f: palmar_f,
                envelope_active: true,
                amplitude_scale: scale,
                side: ContactSide::Palmar,
            }
        }
        _ => TactorDrive::silent(palmar_f),
    };
    (drive, next)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeedbackError {
    #[error("spectral probe needs at least {required} samples, got {got}")]
    InsufficientData { got: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub carrier_hz: Option<f64>,
    pub modulation_hz: Option<f64>,
}

/// Relative line strength (against the rectified mean) above which an
/// amplitude modulation is reported.
const MODULATION_MIN_RATIO: f64 = 0.1;
const MODULATION_BAND_HZ: (f64, f64) = (1.0, 50.0);

fn magnitude_spectrum(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm() / n as f64).collect()
}

/// Parabolic interpolation of a peak at bin `k`, returned in Hz.
fn refine_peak(mag: &[f64], k: usize, bin_hz: f64) -> f64 {
    if k == 0 || k + 1 >= mag.len() {
        return k as f64 * bin_hz;
    }
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > f64::EPSILON {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    (k as f64 + shift) * bin_hz
}

/// Dominant carrier and amplitude-modulation rate of a 1 kHz drive record.
///
/// The modulation line is taken from the spectrum of the rectified current in
/// the 1–50 Hz band.
pub fn spectral_probe(samples: &[TactorDrive]) -> Result<SpectralSummary, FeedbackError> {
    if samples.len() < PROBE_MIN_SAMPLES {
        return Err(FeedbackError::InsufficientData {
            got: samples.len(),
            required: PROBE_MIN_SAMPLES,
        });
    }
    let n = samples.len();
    let bin_hz = TICK_RATE_HZ as f64 / n as f64;
    let current: Vec<f64> = samples.iter().map(|d| d.current).collect();
    let silent = current.iter().all(|c| c.abs() < 1e-12);
    if silent {
        return Ok(SpectralSummary {
            carrier_hz: None,
            modulation_hz: None,
        });
    }

    let mag = magnitude_spectrum(&current);
    let (k_carrier, _) = mag
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::MIN), |best, (k, m)| if *m > best.1 { (k, *m) } else { best });
    let carrier_hz = Some(refine_peak(&mag, k_carrier, bin_hz));

    let rectified: Vec<f64> = current.iter().map(|c| c.abs()).collect();
    let mean = rectified.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = rectified.iter().map(|r| r - mean).collect();
    let env = magnitude_spectrum(&centered);
    let lo = (MODULATION_BAND_HZ.0 / bin_hz).ceil() as usize;
    let hi = ((MODULATION_BAND_HZ.1 / bin_hz).floor() as usize).min(env.len() - 1);
    let (k_env, m_env) = (lo..=hi)
        .map(|k| (k, env[k]))
        .fold((lo, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best });
    // single-sided amplitude of a real tone is twice the bin magnitude
    let modulation_hz =
        (2.0 * m_env > MODULATION_MIN_RATIO * mean).then(|| refine_peak(&env, k_env, bin_hz));

    Ok(SpectralSummary {
        carrier_hz,
        modulation_hz,
    })
}

/// Evaluate the stationary waveform directly; used to cross-check [`render`].
pub fn analytic_current(side: ContactSide, x: f64, carrier_hz: f64, t: f64) -> f64 {
    let amp = PEAK_CURRENT_A * (1.0 - x).sqrt();
    match side {
        ContactSide::None => 0.0,
        ContactSide::Dorsal => amp * (2.0 * PI * CARRIER_HZ * t).sin(),
        ContactSide::Palmar => {
            (2.0 * PI * ENVELOPE_HZ * t).sin().abs() * amp * (2.0 * PI * carrier_hz * t).sin()
        }
    }
}
