//! Acceptance criteria. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tactile_hand::control::{self, CommandSource, ControlGains, ReflexState, TickInputs};
use tactile_hand::emg::{self, NormalizedEmgPair, RawEmgSample};
use tactile_hand::feedback::{self, SweepState, TactorDrive};
use tactile_hand::interface::{run_batch, SessionConfig};
use tactile_hand::plant::{ObjectStatus, SceneSpec};
use tactile_hand::tactile::{
    ContactReading, ContactSide, FingerFace, FingerSurfacePoint, PressureReading, TactileConfig, TactileFrame,
    TactileProcessor, Warmed,
};
use tactile_hand::trials::scenario::{aggressive_off_center_close, anti_slip, pick_and_place, Scenario};
use tactile_hand::trials::{
    self, log, run_trial, EventKind, Milestone, Outcome, Score, SlipKind, TrialEvent, TrialSettings,
};
use tactile_hand::Condition;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:.0?}"))
}

const V_MAX: f64 = 6.0;

fn palmar() -> ContactReading {
    ContactReading::touching(ContactSide::Palmar, 0.5)
}

fn frame(p: f64, dp_dt: f64, slow: f64, tick: u64) -> TactileFrame {
    TactileFrame {
        pressure: PressureReading { p, dp_dt, tick },
        derivative_ready: true,
        slow_delta: Warmed { value: slow, ready: true },
        contact: palmar(),
        grasped: true,
    }
}

/// Drive the real sensor front end with a force trace that collapses at
/// tick 400 and check the closing pulse is in the output of the first tick
/// whose derivative crosses the threshold.
fn reflex_latency() -> Check {
    let start = Instant::now();
    let gains = ControlGains::default();
    let cfg = TactileConfig {
        noise_sigma: 0.0,
        ..TactileConfig::default()
    };
    let mut proc = TactileProcessor::new(cfg, gains.p_g, 0);
    let surface = Some(FingerSurfacePoint {
        face: FingerFace::Palmar,
        arc_fraction: 0.5,
    });
    let emg = NormalizedEmgPair::new(0.2, 0.0);
    let mut state = ReflexState::default();
    let mut crossing = None;
    for t in 0..600u64 {
        let force = if t < 400 { 20.0 } else { (20.0 - 2.0 * (t - 400) as f64).max(0.0) };
        let tf = proc.process(t, force, surface, true).map_err(|e| e.to_string())?;
        let out = control::tick(&TickInputs { emg, tactile: tf }, state, &gains, t, V_MAX);
        state = out.state;
        let crossed = tf.derivative_ready && tf.pressure.dp_dt <= gains.q_fs;
        if crossing.is_none() {
            if crossed {
                ensure(out.command.voltage == V_MAX && out.command.source == CommandSource::FastReflex, || {
                    format!("tick {t}: crossing seen but command was {:?}", out.command)
                })?;
                crossing = Some(t);
            } else {
                ensure(!out.command.source.is_reflex(), || format!("pulse before crossing at tick {t}"))?;
            }
        }
    }
    let k = crossing.ok_or("derivative never crossed q_fs")?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("crossing at tick {k}, full closing voltage in the same tick"))
}

fn pulse_lengths(events: &[(u64, f64, f64)], gains: &ControlGains, ticks: u64) -> Vec<CommandSource> {
    let mut state = ReflexState::default();
    (0..ticks)
        .map(|t| {
            let (dp, slow) = events
                .iter()
                .find(|e| e.0 == t)
                .map(|e| (e.1, e.2))
                .unwrap_or((0.0, 0.0));
            let out = control::tick(
                &TickInputs {
                    emg: NormalizedEmgPair::new(0.1, 0.0),
                    tactile: frame(0.3, dp, slow, t),
                },
                state,
                gains,
                t,
                V_MAX,
            );
            state = out.state;
            out.command.source
        })
        .collect()
}

fn count(sources: &[CommandSource], s: CommandSource) -> usize {
    sources.iter().filter(|x| **x == s).count()
}

fn pulse_durations() -> Check {
    let start = Instant::now();
    let g = ControlGains::default();
    let fast = pulse_lengths(&[(10, -3.0, 0.0)], &g, 200);
    ensure(count(&fast, CommandSource::FastReflex) == 60, || {
        format!("fast pulse {} ticks", count(&fast, CommandSource::FastReflex))
    })?;
    ensure(fast[10..70].iter().all(|s| *s == CommandSource::FastReflex), || "fast pulse not contiguous".into())?;
    let slow = pulse_lengths(&[(10, 0.0, -0.06)], &g, 200);
    ensure(count(&slow, CommandSource::SlowReflex) == 30, || {
        format!("slow pulse {} ticks", count(&slow, CommandSource::SlowReflex))
    })?;
    let retrig = pulse_lengths(&[(10, -3.0, 0.0), (40, -3.0, 0.0)], &g, 200);
    ensure(count(&retrig, CommandSource::FastReflex) == 90, || {
        format!("retriggered fast pulse {} ticks, expected 30 + 60", count(&retrig, CommandSource::FastReflex))
    })?;
    let slow_retrig = pulse_lengths(&[(10, 0.0, -0.06), (25, 0.0, -0.06)], &g, 200);
    ensure(count(&slow_retrig, CommandSource::SlowReflex) == 45, || {
        format!("retriggered slow pulse {} ticks", count(&slow_retrig, CommandSource::SlowReflex))
    })?;
    let both = pulse_lengths(&[(10, -3.0, -0.06)], &g, 200);
    ensure(
        count(&both, CommandSource::FastReflex) == 60 && count(&both, CommandSource::SlowReflex) == 0,
        || "fast slip did not preempt slow slip".into(),
    )?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok("fast 60, slow 30, retrigger restarts (30+60, 15+30), fast preempts slow".into())
}

fn mutual_exclusion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1_000_000;
    for i in 0..n {
        // every 10th pair is a tie to cover the boundary
        let s_f: f64 = rng.random();
        let s_x: f64 = if i % 10 == 0 { s_f } else { rng.random() };
        let c = control::volitional(NormalizedEmgPair::new(s_f, s_x), 1.0);
        let want_c = if s_f - s_x > 0.0 { s_f } else { 0.0 };
        let want_o = if s_x - s_f > 0.0 { s_x } else { 0.0 };
        ensure(c.u_c * c.u_o == 0.0, || format!("u_c*u_o != 0 at ({s_f}, {s_x})"))?;
        ensure(c.u_c == want_c && c.u_o == want_o, || {
            format!("({s_f}, {s_x}) -> ({}, {}), expected ({want_c}, {want_o})", c.u_c, c.u_o)
        })?;
    }
    Ok(format!("{n} pairs, u_c*u_o = 0, exact piecewise values"))
}

fn overgrasp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = ControlGains::default();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let u_c: f64 = rng.random_range(1e-6..1.0);
        let k: f64 = rng.random_range(0.0..10.0);
        let p_g: f64 = rng.random_range(0.0..0.5);
        let g = ControlGains {
            k_overgrasp: k,
            p_g,
            ..base
        };
        let cmd = control::volitional(NormalizedEmgPair::new(u_c, 0.0), 1.0);

        let p: f64 = rng.random_range(p_g..1.0);
        let reading = PressureReading { p, dp_dt: 0.0, tick: 0 };
        let out = control::overgrasp_modulate(cmd, &reading, &palmar(), &g).u_c;
        let oracle = u_c * std::f64::consts::E.powf(-k * p);
        worst = worst.max((out - oracle).abs());
        ensure((out - oracle).abs() <= 1e-12, || format!("u_c={u_c} p={p} K={k}: {out} vs {oracle}"))?;

        let below = rng.random_range(0.0..p_g.max(1e-9));
        if below < p_g {
            let reading = PressureReading { p: below, ..reading };
            let same = control::overgrasp_modulate(cmd, &reading, &palmar(), &g).u_c;
            ensure(same == u_c, || format!("p={below} < p_g={p_g} modified u_c"))?;
        }
    }
    Ok(format!("10000 draws, max |error| {worst:.1e}; identity below p_g"))
}

fn render(contact: ContactReading, grasp_from: Option<u64>, ticks: std::ops::Range<u64>) -> Vec<TactorDrive> {
    let mut sweep = SweepState::default();
    ticks
        .map(|t| {
            let grasped = grasp_from.is_some_and(|g| t >= g);
            let (d, s) = feedback::render(&contact, grasped, &sweep, t);
            sweep = s;
            d
        })
        .collect()
}

fn waveform() -> Check {
    let dorsal = render(ContactReading::touching(ContactSide::Dorsal, 0.0), None, 0..2000);
    let d = feedback::spectral_probe(&dorsal).map_err(|e| e.to_string())?;
    let carrier = d.carrier_hz.ok_or("no dorsal carrier")?;
    ensure((carrier - 250.0).abs() <= 1.0, || format!("dorsal carrier {carrier}"))?;
    ensure(d.modulation_hz.is_none(), || format!("dorsal envelope line at {:?}", d.modulation_hz))?;

    let palm = render(palmar(), None, 0..2000);
    let p = feedback::spectral_probe(&palm).map_err(|e| e.to_string())?;
    let env = p.modulation_hz.ok_or("no palmar envelope line")?;
    ensure((env - 9.5).abs() <= 0.5, || format!("palmar envelope {env}"))?;

    let onset = 500;
    let grasp = render(palmar(), Some(onset), 0..onset + 2500);
    let f1 = grasp[(onset + 1000) as usize].carrier_f;
    let f2 = grasp[(onset + 2000) as usize].carrier_f;
    ensure((f1 - 200.0).abs() <= 1.0, || format!("f(+1 s) = {f1}"))?;
    ensure((f2 - 150.0).abs() <= 1.0, || format!("f(+2 s) = {f2}"))?;
    Ok(format!(
        "dorsal {carrier:.2} Hz no envelope; palmar envelope {env:.2} Hz; sweep {f1:.1} Hz at +1 s, {f2:.1} Hz at +2 s"
    ))
}

fn window(start: u64, n: u64, flexor: f64, extensor: f64) -> Vec<RawEmgSample> {
    (start..start + n)
        .map(|tick| RawEmgSample {
            tick,
            flexor_v: flexor,
            extensor_v: extensor,
        })
        .collect()
}

fn calibration() -> Check {
    // dyadic values so means are exact
    let base = window(0, 1024, 0.125, 0.0625);
    let flex = window(2000, 1024, 2.125, 0.0625 + 0.09375);
    let ext = window(4000, 1024, 0.125 + 0.0625, 0.0625 + 1.5);
    let c = emg::calibrate(&base, &flex, &ext).map_err(|e| e.to_string())?;
    let want = [
        (c.flexor_offset, 0.125, "flexor_offset"),
        (c.extensor_offset, 0.0625, "extensor_offset"),
        (c.flexor_upper, 1.0, "flexor_upper"),
        // 5% floor (0.1) beats cross-talk (0.0625)
        (c.flexor_lower, 0.05 * 2.0, "flexor_lower"),
        (c.extensor_upper, 0.75, "extensor_upper"),
        // cross-talk (0.09375) beats the 5% floor (0.075)
        (c.extensor_lower, 0.09375, "extensor_lower"),
    ];
    for (got, expected, name) in want {
        ensure(got == expected, || format!("{name} = {got}, expected {expected}"))?;
    }

    let ext_heavy = window(4000, 1024, 0.125 + 0.3125, 0.0625 + 1.5);
    let c2 = emg::calibrate(&base, &flex, &ext_heavy).map_err(|e| e.to_string())?;
    ensure(c2.flexor_lower == 0.3125, || format!("cross-talk lower {}", c2.flexor_lower))?;

    // zero baseline
    let c3 = emg::calibrate(&window(0, 8, 0.0, 0.0), &window(10, 8, 1.0, 0.0), &window(20, 8, 0.0, 1.0))
        .map_err(|e| e.to_string())?;
    ensure(
        c3.flexor_offset == 0.0 && c3.flexor_upper == 0.5 && c3.flexor_lower == 0.05,
        || format!("zero-baseline case {c3:?}"),
    )?;
    Ok("upper = 0.5 MVC; lower = max(cross-talk, 0.05 MVC); exact on both channels".into())
}

fn overgrasp_scenario() -> Check {
    let start = Instant::now();
    let scenario = aggressive_off_center_close(0);
    let mut off = TrialSettings::default();
    off.gains.reflexes_enabled = false;
    let on = TrialSettings::default();
    let r_off = run_trial(&scenario, &off, Condition::Tactile, 0, "og_off").map_err(|e| e.to_string())?;
    let r_on = run_trial(&scenario, &on, Condition::Tactile, 0, "og_on").map_err(|e| e.to_string())?;
    ensure(r_off.final_status == ObjectStatus::Ejected, || {
        format!("reflexes off ended {:?}", r_off.final_status)
    })?;
    ensure(r_on.final_status == ObjectStatus::Held, || format!("reflexes on ended {:?}", r_on.final_status))?;
    let tactile = TactileConfig::default();
    let scene = SceneSpec::default();
    let p_eject = tactile
        .pressure
        .pressure_from_force(scene.eject_force)
        .map_err(|e| e.to_string())?;
    let p_max = r_on.trace.iter().map(|r| r.p).fold(0.0, f64::max);
    ensure(p_max < p_eject, || format!("p peaked at {p_max:.4}, eject level {p_eject:.4}"))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "reflexes off: ejected; reflexes on: held, max p {p_max:.4} < eject-equivalent {p_eject:.4}"
    ))
}

fn anti_slip_battery() -> Check {
    let settings = TrialSettings::default();
    let run = |condition: Condition| -> Result<Vec<trials::TrialRecord>, String> {
        (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let mut r = run_trial(&anti_slip(seed), &settings, condition, seed, "as").map_err(|e| e.to_string())?;
                r.trace = Vec::new();
                Ok(r)
            })
            .collect()
    };
    let tactile = run(Condition::Tactile)?;
    let standard = run(Condition::Standard)?;
    let perturbed = |r: &trials::TrialRecord| r.events.iter().any(|e| matches!(e.kind, EventKind::Perturbation { .. }));
    ensure(tactile.iter().chain(&standard).all(perturbed), || "a trial ended before its perturbation".into())?;
    let retained = tactile.iter().filter(|r| !r.dropped && r.score == Score::One).count();
    let dropped = standard.iter().filter(|r| r.dropped).count();
    ensure(retained >= 90 && dropped >= 50, || {
        format!("tactile retained with score 1: {retained}/100 (need 90); standard dropped {dropped}/100 (need 50)")
    })?;
    Ok(format!(
        "tactile retained with score 1: {retained}/100; standard dropped: {dropped}/100"
    ))
}

fn ev(tick: u64, kind: EventKind) -> TrialEvent {
    TrialEvent { tick, kind }
}

/// Independent recount of contact episodes and fast slips from a raw log.
fn recount(events: &[TrialEvent]) -> (u32, u32) {
    let grasp = events
        .iter()
        .find(|e| e.kind == EventKind::GraspDetected)
        .map_or(u64::MAX, |e| e.tick);
    let end = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::TrialEnded { .. }))
        .map(|e| e.tick)
        .next_back();
    let mut touching_since = None;
    let mut episodes = vec![];
    for e in events {
        if let EventKind::ContactChange { side, .. } = e.kind {
            let touching = side != ContactSide::None;
            match (touching_since, touching) {
                (None, true) => touching_since = Some(e.tick),
                (Some(s), false) => {
                    episodes.push((s, e.tick));
                    touching_since = None;
                }
                _ => {}
            }
        }
    }
    if let (Some(s), Some(end)) = (touching_since, end) {
        episodes.push((s, end));
    }
    let contacts = episodes.iter().filter(|(s, e)| e - s >= 20 && *s < grasp).count() as u32;
    let fast = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Slip { kind: SlipKind::Fast, .. }))
        .count() as u32;
    (contacts, fast)
}

fn scoring_metrics() -> Check {
    let m = |t, milestone| ev(t, EventKind::Milestone { milestone });
    let fixtures = [
        (vec![], 0.0),
        (vec![m(1, Milestone::Lifted)], 1.0 / 3.0),
        (vec![m(1, Milestone::Lifted), m(2, Milestone::NearEndBin)], 2.0 / 3.0),
        (vec![m(1, Milestone::Lifted), m(2, Milestone::NearEndBin), m(3, Milestone::Placed)], 1.0),
    ];
    for (events, want) in &fixtures {
        let got = trials::score(events).value();
        ensure(got == *want, || format!("score {got}, expected {want}"))?;
    }
    ensure(trials::time_remaining(None, 60.0) == 0.0, || "timeout time_remaining != 0".into())?;
    ensure(trials::time_remaining(Some(60.0), 60.0) == 0.1, || "boundary completion != 0.1".into())?;

    // a failed trial divides by the full 60 s; a completed one by its own time
    let mut idle = pick_and_place(5);
    idle.intent.clear();
    idle.name = "idle".into();
    let settings = TrialSettings::default();
    let failed = run_trial(&idle, &settings, Condition::Tactile, 0, "idle").map_err(|e| e.to_string())?;
    let done = run_trial(&anti_slip(3), &settings, Condition::Tactile, 0, "as").map_err(|e| e.to_string())?;
    ensure(failed.outcome == Outcome::Timeout && failed.time_remaining == 0.0, || {
        format!("idle trial: {:?}, time_remaining {}", failed.outcome, failed.time_remaining)
    })?;
    for (r, divisor) in [(&failed, 60.0), (&done, done.trial_time)] {
        let (contacts, fast) = recount(&r.events);
        ensure(r.exploration_contacts == contacts && r.fast_slips == fast, || {
            format!("{}: counts ({}, {}) vs recount ({contacts}, {fast})", r.trial_id, r.exploration_contacts, r.fast_slips)
        })?;
        ensure(
            r.exploration_contact_rate == contacts as f64 / divisor && r.fast_slip_rate == fast as f64 / divisor,
            || format!("{}: rates do not match recount over {divisor} s", r.trial_id),
        )?;
    }
    ensure(done.outcome == Outcome::Completed && done.trial_time < 60.0, || "completed trial fixture failed".into())?;
    Ok(format!(
        "scores {{0, 1/3, 2/3, 1}}; timeout 0 s; boundary 0.1 s; rates match recount (failed trial: {} contacts / 60 s; completed: {} fast slips / {:.3} s)",
        failed.exploration_contacts, done.fast_slips, done.trial_time
    ))
}

fn determinism() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut paths: Vec<PathBuf> = Vec::new();
    let scenarios: Vec<Scenario> = (0..10)
        .map(pick_and_place)
        .chain((0..5).map(anti_slip))
        .chain((0..5).map(aggressive_off_center_close))
        .collect();
    for s in &scenarios {
        let p = dir.path().join(format!("{}.json", s.name));
        std::fs::write(&p, s.to_json_pretty()).map_err(|e| e.to_string())?;
        paths.push(p);
    }
    let cfg = SessionConfig::default();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_batch(&paths, &cfg, Condition::Tactile, 0, &a).map_err(|e| e.to_string())?;
    run_batch(&paths, &cfg, Condition::Tactile, 0, &b).map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for r in &ra.records {
        let fa = std::fs::read(log::trace_path(&a, &r.trial_id)).map_err(|e| e.to_string())?;
        let fb = std::fs::read(log::trace_path(&b, &r.trial_id)).map_err(|e| e.to_string())?;
        ensure(fa == fb, || format!("{} traces differ", r.trial_id))?;
        bytes += fa.len();
    }
    ensure(ra.records.len() == 20, || format!("{} records", ra.records.len()))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("20 trace CSVs byte-identical across runs ({bytes} bytes), {:.1?}", start.elapsed()))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("reflex latency (same tick)", reflex_latency),
        ("pulse durations 60/30 ticks with restart", pulse_durations),
        ("volitional mutual exclusion, 1e6 pairs", mutual_exclusion),
        ("over-grasp modulation oracle, 1e4 draws", overgrasp_oracle),
        ("tactor waveform 250 Hz / 9.5 Hz / sweep", waveform),
        ("sEMG calibration thresholds", calibration),
        ("over-grasp scenario eject vs hold", overgrasp_scenario),
        ("anti-slip battery, 100 seeds", anti_slip_battery),
        ("score, time and rate metrics", scoring_metrics),
        ("batch determinism, 20 scenarios", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2?}]", t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{:.2?}]", t.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
