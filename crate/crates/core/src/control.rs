//! Per-tick controller: volitional open/close laws, over-grasp modulation,
//! fast and slow slip reflexes, and motor-command arbitration.
//!
//! Everything here is a pure function of its inputs; [`ReflexState`] is the
//! only memory and is threaded through explicitly.

use serde::{Deserialize, Serialize};

use crate::emg::NormalizedEmgPair;
use crate::tactile::{ContactReading, ContactSide, PressureReading, TactileFrame};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid control gains: {0}")]
pub struct GainsError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    /// Over-grasp gain `K`.
    pub k_overgrasp: f64,
    /// Grasp pressure threshold `p_g`.
    pub p_g: f64,
    /// Fast-slip derivative threshold, 1/s (negative).
    pub q_fs: f64,
    /// Slow-slip threshold on `p(t) - p(t - 0.5 s)` (negative).
    pub p_ss: f64,
    pub fast_pulse_ms: u32,
    pub slow_pulse_ms: u32,
    pub reflexes_enabled: bool,
    /// Opening command at or above which active reflex pulses are cancelled.
    pub release_override: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k_overgrasp: 2.0,
            p_g: 0.15,
            q_fs: -2.0,
            p_ss: -0.05,
            fast_pulse_ms: 60,
            slow_pulse_ms: 30,
            reflexes_enabled: true,
            release_override: 0.8,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), GainsError> {
        if !(self.q_fs < 0.0) {
            return Err(GainsError(format!("q_fs must be negative, got {}", self.q_fs)));
        }
        if !(self.p_ss < 0.0) {
            return Err(GainsError(format!("p_ss must be negative, got {}", self.p_ss)));
        }
        if !(self.k_overgrasp >= 0.0 && self.k_overgrasp.is_finite()) {
            return Err(GainsError("k_overgrasp must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_g) {
            return Err(GainsError("p_g must lie in [0, 1]".into()));
        }
        if self.fast_pulse_ms == 0 || self.slow_pulse_ms == 0 {
            return Err(GainsError("pulse durations must be positive".into()));
        }
        Ok(())
    }

    fn fast_pulse_ticks(&self) -> u32 {
        crate::ms_to_ticks(self.fast_pulse_ms)
    }

    fn slow_pulse_ticks(&self) -> u32 {
        crate::ms_to_ticks(self.slow_pulse_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CommandSource {
    #[default]
    Volitional,
    OvergraspModulated,
    FastReflex,
    SlowReflex,
}

impl CommandSource {
    pub fn is_reflex(self) -> bool {
        matches!(self, CommandSource::FastReflex | CommandSource::SlowReflex)
    }
}

/// Arbitrated motor command. Positive voltage closes the hand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorCommand {
    pub u_c: f64,
    pub u_o: f64,
    pub voltage: f64,
    pub source: CommandSource,
}

impl MotorCommand {
    fn reflex(source: CommandSource, v_max: f64) -> Self {
        Self {
            u_c: 1.0,
            u_o: 0.0,
            voltage: v_max,
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReflexState {
    pub fast_pulse_remaining: u32,
    pub slow_pulse_remaining: u32,
    pub last_fast_slip_tick: Option<u64>,
    pub last_slow_slip_tick: Option<u64>,
}

impl ReflexState {
    pub fn pulse_active(&self) -> bool {
        self.fast_pulse_remaining > 0 || self.slow_pulse_remaining > 0
    }
}

/// Closing and opening laws; the voltage is proportional to `u_c - u_o`.
pub fn volitional(s: NormalizedEmgPair, v_max: f64) -> MotorCommand {
    let u_c = if s.s_f - s.s_x > 0.0 { s.s_f } else { 0.0 };
    let u_o = if s.s_x - s.s_f > 0.0 { s.s_x } else { 0.0 };
    MotorCommand {
        u_c,
        u_o,
        voltage: (u_c - u_o) * v_max,
        source: CommandSource::Volitional,
    }
}

/// Scale the closing command by `exp(-K p)` while a palmar grasp is loaded
/// above `p_g`.
pub fn overgrasp_modulate(
    cmd: MotorCommand,
    p: &PressureReading,
    contact: &ContactReading,
    g: &ControlGains,
) -> MotorCommand {
    if p.p >= g.p_g && contact.side() == ContactSide::Palmar && cmd.u_c > 0.0 {
        let factor = (-g.k_overgrasp * p.p).exp();
        MotorCommand {
            u_c: cmd.u_c * factor,
            voltage: cmd.voltage * factor,
            source: CommandSource::OvergraspModulated,
            ..cmd
        }
    } else {
        cmd
    }
}

pub fn detect_fast_slip(dp_dt: f64, g: &ControlGains) -> bool {
    dp_dt <= g.q_fs
}

pub fn detect_slow_slip(delta: f64, g: &ControlGains) -> bool {
    delta < g.p_ss
}

/// Start, restart, cancel and emit reflex pulses for one tick.
///
/// A fast slip (re)starts the fast pulse; a slow slip (re)starts the slow pulse
/// only while no fast pulse is running. While any pulse is running the output
/// is full closing voltage. An opening command at or above
/// `release_override` cancels all pulses.
pub fn arbitrate(
    volitional_cmd: MotorCommand,
    reflex: ReflexState,
    fast: bool,
    slow: bool,
    g: &ControlGains,
    tick: u64,
    v_max: f64,
) -> (MotorCommand, ReflexState) {
    if !g.reflexes_enabled {
        return (volitional_cmd, reflex);
    }
    let mut st = reflex;
    if volitional_cmd.u_o >= g.release_override {
        st.fast_pulse_remaining = 0;
        st.slow_pulse_remaining = 0;
        return (volitional_cmd, st);
    }
    if fast {
        st.fast_pulse_remaining = g.fast_pulse_ticks();
        st.last_fast_slip_tick = Some(tick);
    }
    if slow && st.fast_pulse_remaining == 0 {
        st.slow_pulse_remaining = g.slow_pulse_ticks();
        st.last_slow_slip_tick = Some(tick);
    }
    let out = if st.fast_pulse_remaining > 0 {
        MotorCommand::reflex(CommandSource::FastReflex, v_max)
    } else if st.slow_pulse_remaining > 0 {
        MotorCommand::reflex(CommandSource::SlowReflex, v_max)
    } else {
        volitional_cmd
    };
    st.fast_pulse_remaining = st.fast_pulse_remaining.saturating_sub(1);
    st.slow_pulse_remaining = st.slow_pulse_remaining.saturating_sub(1);
    (out, st)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickInputs {
    pub emg: NormalizedEmgPair,
    pub tactile: TactileFrame,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    pub command: MotorCommand,
    pub state: ReflexState,
    /// Detector outputs; computed in both conditions so slip metrics are
    /// comparable.
    pub fast_slip: bool,
    pub slow_slip: bool,
}

/// One controller tick: volitional, over-grasp modulation, detection,
/// arbitration. With reflexes disabled the output is the volitional command.
pub fn tick(
    inputs: &TickInputs,
    state: ReflexState,
    g: &ControlGains,
    tick: u64,
    v_max: f64,
) -> TickOutput {
    let vol = volitional(inputs.emg, v_max);
    let cmd = if g.reflexes_enabled {
        overgrasp_modulate(vol, &inputs.tactile.pressure, &inputs.tactile.contact, g)
    } else {
        vol
    };
    let fast = inputs.tactile.derivative_ready && detect_fast_slip(inputs.tactile.pressure.dp_dt, g);
    let slow = inputs.tactile.slow_delta.ready && detect_slow_slip(inputs.tactile.slow_delta.value, g);
    let (command, state) = arbitrate(cmd, state, fast, slow, g, tick, v_max);
    TickOutput {
        command,
        state,
        fast_slip: fast,
        slow_slip: slow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tactile::Warmed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const V: f64 = 6.0;

    #[test]
    fn volitional_laws() {
        let c = volitional(NormalizedEmgPair::new(0.8, 0.3), V);
        assert_eq!((c.u_c, c.u_o), (0.8, 0.0));
        assert_relative_eq!(c.voltage, 4.8);
        let c = volitional(NormalizedEmgPair::new(0.5, 0.5), V);
        assert_eq!((c.u_c, c.u_o, c.voltage), (0.0, 0.0, 0.0));
        let c = volitional(NormalizedEmgPair::new(0.2, 0.9), V);
        assert_eq!((c.u_c, c.u_o), (0.0, 0.9));
        assert!(c.voltage < 0.0);
    }

    fn pressure(p: f64) -> PressureReading {
        PressureReading { p, dp_dt: 0.0, tick: 0 }
    }

    fn palmar() -> ContactReading {
        ContactReading::touching(ContactSide::Palmar, 0.5)
    }

    #[test]
    fn overgrasp_cases() {
        let g = ControlGains::default();
        let cmd = volitional(NormalizedEmgPair::new(1.0, 0.0), V);
        assert_eq!(overgrasp_modulate(cmd, &pressure(0.1), &palmar(), &g), cmd);
        let out = overgrasp_modulate(cmd, &pressure(0.5), &palmar(), &g);
        assert_relative_eq!(out.u_c, 0.36787944117144233, epsilon = 1e-12);
        assert_eq!(out.source, CommandSource::OvergraspModulated);
        let dorsal = ContactReading::touching(ContactSide::Dorsal, 0.5);
        assert_eq!(overgrasp_modulate(cmd, &pressure(0.5), &dorsal, &g), cmd);
        let g0 = ControlGains { k_overgrasp: 0.0, ..g };
        assert_eq!(overgrasp_modulate(cmd, &pressure(0.5), &palmar(), &g0).u_c, 1.0);
    }

    #[test]
    fn slip_detector_thresholds() {
        let g = ControlGains::default();
        assert!(detect_fast_slip(-3.0, &g));
        assert!(!detect_fast_slip(0.0, &g));
        assert!(detect_fast_slip(-2.0, &g));
        assert!(detect_slow_slip(-0.08, &g));
        assert!(!detect_slow_slip(-0.05, &g));
        assert!(!detect_slow_slip(0.1, &g));
    }

    fn run_pulses(g: &ControlGains, schedule: &[(u64, bool, bool)], ticks: u64) -> Vec<MotorCommand> {
        let vol = volitional(NormalizedEmgPair::new(0.3, 0.0), V);
        let mut st = ReflexState::default();
        (0..ticks)
            .map(|t| {
                let (fast, slow) = schedule
                    .iter()
                    .find(|(k, _, _)| *k == t)
                    .map(|(_, f, s)| (*f, *s))
                    .unwrap_or((false, false));
                let (cmd, next) = arbitrate(vol, st, fast, slow, g, t, V);
                st = next;
                cmd
            })
            .collect()
    }

    #[test]
    fn fast_pulse_is_sixty_ticks() {
        let out = run_pulses(&ControlGains::default(), &[(10, true, false)], 100);
        for (t, c) in out.iter().enumerate() {
            let active = (10..70).contains(&t);
            assert_eq!(c.source == CommandSource::FastReflex, active, "tick {t}");
            if active {
                assert_eq!(c.voltage, V);
            }
        }
    }

    #[test]
    fn fast_retrigger_restarts_counter() {
        let out = run_pulses(&ControlGains::default(), &[(10, true, false), (40, true, false)], 150);
        let active: Vec<usize> = (0..150).filter(|t| out[*t].source == CommandSource::FastReflex).collect();
        assert_eq!(active.first(), Some(&10));
        assert_eq!(active.last(), Some(&99));
        assert_eq!(active.len(), 90);
    }

    #[test]
    fn slow_pulse_and_preemption() {
        let out = run_pulses(&ControlGains::default(), &[(5, false, true)], 60);
        let slow: Vec<usize> = (0..60).filter(|t| out[*t].source == CommandSource::SlowReflex).collect();
        assert_eq!(slow, (5..35).collect::<Vec<_>>());

        // slow slip during a fast pulse does not start a slow pulse
        let out = run_pulses(&ControlGains::default(), &[(0, true, false), (30, false, true)], 120);
        assert!(out.iter().all(|c| c.source != CommandSource::SlowReflex));
        assert_eq!(out[59].source, CommandSource::FastReflex);
        assert_eq!(out[60].source, CommandSource::Volitional);
    }

    #[test]
    fn disabled_reflexes_pass_through() {
        let g = ControlGains {
            reflexes_enabled: false,
            ..ControlGains::default()
        };
        let vol = volitional(NormalizedEmgPair::new(0.3, 0.0), V);
        let (cmd, st) = arbitrate(vol, ReflexState::default(), true, true, &g, 0, V);
        assert_eq!(cmd, vol);
        assert_eq!(st, ReflexState::default());
    }

    #[test]
    fn strong_opening_cancels_pulses() {
        let g = ControlGains::default();
        let (_, st) = arbitrate(volitional(NormalizedEmgPair::default(), V), ReflexState::default(), true, false, &g, 0, V);
        assert!(st.pulse_active());
        let open = volitional(NormalizedEmgPair::new(0.0, 0.9), V);
        let (cmd, st) = arbitrate(open, st, true, false, &g, 1, V);
        assert_eq!(cmd, open);
        assert!(!st.pulse_active());
    }

    fn slip_frame() -> TactileFrame {
        TactileFrame {
            pressure: PressureReading { p: 0.3, dp_dt: -5.0, tick: 0 },
            derivative_ready: true,
            slow_delta: Warmed { value: 0.0, ready: true },
            contact: palmar(),
            grasped: true,
        }
    }

    #[test]
    fn quiescent_tick_outputs_zero() {
        let out = tick(&TickInputs::default(), ReflexState::default(), &ControlGains::default(), 0, V);
        assert_eq!(out.command.voltage, 0.0);
        assert!(!out.fast_slip && !out.slow_slip);
    }

    #[test]
    fn slip_reflex_same_tick() {
        let inputs = TickInputs {
            emg: NormalizedEmgPair::default(),
            tactile: slip_frame(),
        };
        let out = tick(&inputs, ReflexState::default(), &ControlGains::default(), 42, V);
        assert_eq!(out.command.voltage, V);
        assert_eq!(out.command.source, CommandSource::FastReflex);
        assert_eq!(out.state.last_fast_slip_tick, Some(42));
    }

    #[test]
    fn detection_not_ready_is_ignored() {
        let mut frame = slip_frame();
        frame.derivative_ready = false;
        let out = tick(
            &TickInputs { emg: NormalizedEmgPair::default(), tactile: frame },
            ReflexState::default(),
            &ControlGains::default(),
            0,
            V,
        );
        assert!(!out.fast_slip);
    }

    proptest! {
        #[test]
        fn volitional_mutual_exclusion(f in 0.0f64..=1.0, x in 0.0f64..=1.0) {
            let c = volitional(NormalizedEmgPair::new(f, x), V);
            prop_assert_eq!(c.u_c * c.u_o, 0.0);
        }

        #[test]
        fn overgrasp_never_increases(u in 0.0f64..=1.0, p in 0.0f64..=1.0, k in 0.0f64..10.0) {
            let g = ControlGains { k_overgrasp: k, ..ControlGains::default() };
            let cmd = volitional(NormalizedEmgPair::new(u, 0.0), V);
            let out = overgrasp_modulate(cmd, &pressure(p), &palmar(), &g);
            prop_assert!(out.u_c <= cmd.u_c);
        }

        #[test]
        fn reflexes_off_equals_volitional(
            seq in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, -10.0f64..10.0, -0.2f64..0.2, 0.0f64..1.0), 1..200)
        ) {
            let g = ControlGains { reflexes_enabled: false, ..ControlGains::default() };
            let mut st = ReflexState::default();
            for (i, (f, x, d, delta, p)) in seq.into_iter().enumerate() {
                let emg = NormalizedEmgPair::new(f, x);
                let tactile = TactileFrame {
                    pressure: PressureReading { p, dp_dt: d, tick: i as u64 },
                    derivative_ready: true,
                    slow_delta: Warmed { value: delta, ready: true },
                    contact: palmar(),
                    grasped: p >= g.p_g,
                };
                let out = tick(&TickInputs { emg, tactile }, st, &g, i as u64, V);
                prop_assert_eq!(out.command, volitional(emg, V));
                st = out.state;
            }
        }
    }
}
