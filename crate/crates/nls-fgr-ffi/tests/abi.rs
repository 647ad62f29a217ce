use std::ffi::{c_char, CString};
use std::ptr;

use nls_fgr_ffi::*;

const CONFIG: &str = r#"seed = 3
output_dir = "OUT"

[grid]
dim = 1
points = 1024
box_len = 40.0

[potential]
kind = "poschl_teller"
nu = 1.3
width_len = 1.0

[nonlinearity]
sigma = 1.0

[branch]
lambda_min_energy = 1.75
lambda_max_energy = 1.85
points = 3
"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { nls_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take_while(|c| **c != 0).map(|c| *c as u8).collect();
    assert!(n >= bytes.len());
    String::from_utf8(bytes).unwrap()
}

fn load(text: &str) -> *mut NlsConfig {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { nls_config_from_toml(c.as_ptr(), &mut cfg) }, NlsStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nls_fgr.h")).unwrap();
    for sym in [
        "nls_last_error",
        "nls_config_from_toml",
        "nls_config_load",
        "nls_config_free",
        "nls_run_command",
        "nls_lab_new",
        "nls_lab_free",
        "nls_lab_energies",
        "nls_lab_assumptions_hold",
        "nls_fgr_compute",
        "nls_fgr_free",
        "nls_fgr_modes",
        "nls_fgr_delta",
        "nls_fgr_form",
        "nls_scalar_decay",
        "NLS_STATUS_ASSUMPTION_FAILED = 2",
        "NLS_STATUS_USAGE = 4",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
    assert!(header.contains("#ifndef NLS_FGR_H"));
}

#[test]
fn null_arguments_are_rejected_without_crashing() {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(nls_config_from_toml(ptr::null(), &mut cfg), NlsStatus::InvalidArgument);
        assert!(cfg.is_null());
        assert!(last_error().contains("null"));
        let text = CString::new("x").unwrap();
        assert_eq!(nls_config_from_toml(text.as_ptr(), ptr::null_mut()), NlsStatus::InvalidArgument);
        let cmd = CString::new("spectrum").unwrap();
        assert_eq!(nls_run_command(ptr::null(), cmd.as_ptr()), NlsStatus::InvalidArgument);
        let mut lab = ptr::null_mut();
        assert_eq!(nls_lab_new(ptr::null(), &mut lab), NlsStatus::InvalidArgument);
        assert_eq!(nls_fgr_modes(ptr::null()), 0);
        assert!(nls_fgr_delta(ptr::null()).is_nan());
        assert_eq!(nls_lab_assumptions_hold(ptr::null()), 0);
        nls_config_free(ptr::null_mut());
        nls_lab_free(ptr::null_mut());
        nls_fgr_free(ptr::null_mut());
    }
}

#[test]
fn malformed_configuration_reports_usage() {
    let text = CString::new("seed = \"many\"").unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { nls_config_from_toml(text.as_ptr(), &mut cfg) };
    assert_eq!(status, NlsStatus::Usage);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());
    let path = CString::new("/nonexistent/cfg.toml").unwrap();
    assert_eq!(unsafe { nls_config_load(path.as_ptr(), &mut cfg) }, NlsStatus::Usage);
}

#[test]
fn last_error_truncates_to_the_buffer() {
    let text = CString::new("not toml [").unwrap();
    let mut cfg = ptr::null_mut();
    unsafe { nls_config_from_toml(text.as_ptr(), &mut cfg) };
    let mut buf = [1 as c_char; 4];
    let full = unsafe { nls_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(full > 3);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { nls_last_error(ptr::null_mut(), 0) }, full);
}

#[test]
fn lab_and_fgr_handles_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&CONFIG.replace("OUT", &dir.path().display().to_string()));
    unsafe {
        let mut lab = ptr::null_mut();
        assert_eq!(nls_lab_new(cfg, &mut lab), NlsStatus::Ok);
        assert_eq!(nls_lab_assumptions_hold(lab), 1);
        let mut count = 0usize;
        let mut e = [0.0f64; 4];
        assert_eq!(nls_lab_energies(lab, e.as_mut_ptr(), e.len(), &mut count), NlsStatus::Ok);
        assert_eq!(count, 2);
        assert!((e[0] + 1.69).abs() < 1e-9 && (e[1] + 0.09).abs() < 1e-9);

        let mut fgr = ptr::null_mut();
        assert_eq!(nls_fgr_compute(lab, 1.74, &mut fgr), NlsStatus::Ok);
        assert_eq!(nls_fgr_modes(fgr), 1);
        assert!(nls_fgr_delta(fgr) > 0.0);
        let (re, im) = ([0.6f64], [0.8f64]);
        let (mut g, mut g0) = (0.0, 0.0);
        assert_eq!(nls_fgr_form(fgr, re.as_ptr(), im.as_ptr(), 1, 0, &mut g), NlsStatus::Ok);
        assert_eq!(nls_fgr_form(fgr, re.as_ptr(), im.as_ptr(), 1, 1, &mut g0), NlsStatus::Ok);
        assert!(g > 0.0 && g0 > 0.0);
        assert_eq!(nls_fgr_form(fgr, re.as_ptr(), im.as_ptr(), 2, 0, &mut g), NlsStatus::InvalidArgument);

        let mut bad = ptr::null_mut();
        assert_eq!(nls_fgr_compute(lab, 1.0, &mut bad), NlsStatus::Usage);
        assert!(bad.is_null());

        nls_fgr_free(fgr);
        nls_lab_free(lab);
        nls_config_free(cfg);
    }
}

#[test]
fn run_command_writes_artifacts_and_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&CONFIG.replace("OUT", &dir.path().display().to_string()));
    unsafe {
        let cmd = CString::new("spectrum").unwrap();
        assert_eq!(nls_run_command(cfg, cmd.as_ptr()), NlsStatus::Ok);
        assert!(dir.path().join("spectrum").join("manifest.json").exists());
        let bogus = CString::new("bogus").unwrap();
        assert_eq!(nls_run_command(cfg, bogus.as_ptr()), NlsStatus::Usage);
        nls_config_free(cfg);
    }
}

#[test]
fn scalar_decay_matches_its_formula() {
    let v = nls_scalar_decay(0.04, 0.5, 10.0);
    assert!((v - 1.0 / (25.0 + 10.0)).abs() < 1e-15);
}
