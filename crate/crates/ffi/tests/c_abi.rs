use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tactile_hand_ffi::*;

fn last_error() -> String {
    let p = th_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn volitional_and_overgrasp_laws() {
    let (mut u_c, mut u_o) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { th_volitional(0.7, 0.2, &mut u_c, &mut u_o) }, ThStatus::Ok);
    assert_eq!((u_c, u_o), (0.7, 0.0));
    assert_eq!(unsafe { th_volitional(0.3, 0.3, &mut u_c, &mut u_o) }, ThStatus::Ok);
    assert_eq!((u_c, u_o), (0.0, 0.0));
    assert_eq!(unsafe { th_volitional(0.3, 0.3, ptr::null_mut(), &mut u_o) }, ThStatus::NullPointer);
    assert!(last_error().contains("null"));

    let modulated = th_overgrasp(0.8, 0.4, 2.0, 0.15, true);
    assert!((modulated - 0.8 * (-0.8f64).exp()).abs() < 1e-12);
    assert_eq!(th_overgrasp(0.8, 0.4, 2.0, 0.15, false), 0.8);
    assert_eq!(th_overgrasp(0.8, 0.1, 2.0, 0.15, true), 0.8);
}

#[test]
fn engine_lifecycle() {
    let mut engine: *mut ThEngine = ptr::null_mut();
    let status = unsafe { th_engine_new(ptr::null(), ThCondition::Tactile, 3, 0.05, &mut engine) };
    assert_eq!(status, ThStatus::Ok);
    assert!(!engine.is_null());
    assert!(th_last_error_message().is_null());

    let mut state = std::mem::MaybeUninit::<ThTickState>::uninit();
    let mut last = None;
    for _ in 0..50 {
        let s = unsafe { th_engine_step(engine, 0.0, 0.0, 0.0, 0.0, 0.0, false, state.as_mut_ptr()) };
        assert_eq!(s, ThStatus::Ok);
        last = Some(unsafe { state.assume_init() });
    }
    let last = last.unwrap();
    assert_eq!(last.tick, 49);
    assert_eq!(last.outcome, ThOutcome::Timeout);
    assert_eq!(last.side, ThContactSide::None);
    assert!(last.x.is_nan());

    let s = unsafe { th_engine_step(engine, 0.0, 0.0, 0.0, 0.0, 0.0, false, ptr::null_mut()) };
    assert_eq!(s, ThStatus::Finished);

    let dir = tempfile::tempdir().unwrap();
    let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut summary = std::mem::MaybeUninit::<ThTrialSummary>::uninit();
    assert_eq!(unsafe { th_engine_finish(engine, cdir.as_ptr(), summary.as_mut_ptr()) }, ThStatus::Ok);
    let summary = unsafe { summary.assume_init() };
    assert_eq!(summary.outcome, ThOutcome::Timeout);
    assert_eq!(summary.score, 0.0);
    assert_eq!(summary.time_remaining, 0.0);
    assert!(dir.path().join("trial_ffi_3.csv").exists());
}

#[test]
fn bad_inputs_report_errors() {
    let mut engine: *mut ThEngine = ptr::null_mut();
    let bad = CString::new(r#"{"decimation": 0}"#).unwrap();
    assert_eq!(
        unsafe { th_engine_new(bad.as_ptr(), ThCondition::Standard, 0, 0.0, &mut engine) },
        ThStatus::InvalidArgument
    );
    assert!(last_error().contains("decimation"));
    let broken = CString::new("{\n\"gains\": [").unwrap();
    assert_eq!(
        unsafe { th_engine_new(broken.as_ptr(), ThCondition::Standard, 0, 0.0, &mut engine) },
        ThStatus::Parse
    );
    assert!(engine.is_null());

    assert_eq!(unsafe { th_engine_new(ptr::null(), ThCondition::Standard, 0, 0.0, &mut engine) }, ThStatus::Ok);
    let s = unsafe { th_engine_step(engine, f64::NAN, 0.0, 0.0, 0.0, 0.0, false, ptr::null_mut()) };
    assert_eq!(s, ThStatus::InvalidArgument);
    assert_eq!(unsafe { th_engine_abort(engine) }, ThStatus::Ok);
    unsafe { th_engine_free(engine) };
    unsafe { th_engine_free(ptr::null_mut()) };

    let missing = CString::new("/nonexistent/scenario.json").unwrap();
    let mut summary = std::mem::MaybeUninit::<ThTrialSummary>::uninit();
    let s = unsafe {
        th_run_scenario(missing.as_ptr(), ptr::null(), ThCondition::Tactile, 0, ptr::null(), summary.as_mut_ptr())
    };
    assert_eq!(s, ThStatus::Io);
    assert!(last_error().contains("nonexistent"));
}

#[test]
fn runs_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, tactile_hand::trials::scenario::pick_and_place(2).to_json_pretty()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut summary = std::mem::MaybeUninit::<ThTrialSummary>::uninit();
    let s = unsafe {
        th_run_scenario(cpath.as_ptr(), ptr::null(), ThCondition::Tactile, 0, ptr::null(), summary.as_mut_ptr())
    };
    assert_eq!(s, ThStatus::Ok);
    let summary = unsafe { summary.assume_init() };
    assert_eq!(summary.outcome, ThOutcome::Completed);
    assert_eq!(summary.score, 1.0);
    assert_eq!(summary.final_status, ThObjectStatus::InEndBin);
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tactile_hand.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["th_engine_new", "th_engine_step", "th_engine_finish", "th_last_error_message", "ThTickState"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"tactile_hand.h\"\nint main(void) { ThTickState s; (void)s; return th_tick_rate_hz() == 1000 ? 0 : 1; }\n",
    )
    .unwrap();
    let Some(cc) = ["cc", "clang", "gcc"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
