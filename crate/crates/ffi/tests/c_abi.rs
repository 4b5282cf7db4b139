use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sicdd_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sicdd_last_error()) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { sicdd_string_free(p) };
    s
}

fn smoke() -> *mut SicddConfig {
    let name = CString::new("smoke").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sicdd_config_from_preset(name.as_ptr(), &mut cfg) }, SicddStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sicdd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn unknown_preset_reports_a_config_error() {
    let name = CString::new("no-such-preset").unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { sicdd_config_from_preset(name.as_ptr(), &mut cfg) };
    assert_eq!(status, SicddStatus::InvalidConfig);
    assert!(cfg.is_null());
    assert!(last_error().contains("unknown preset"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sicdd_run_rates(ptr::null(), &mut out) }, SicddStatus::InvalidArgument);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { sicdd_config_from_preset(ptr::null(), ptr::null_mut()) }, SicddStatus::InvalidArgument);
    unsafe { sicdd_config_free(ptr::null_mut()) };
    unsafe { sicdd_string_free(ptr::null_mut()) };
}

#[test]
fn invalid_setters_leave_the_config_unchanged() {
    let cfg = smoke();
    assert_eq!(unsafe { sicdd_config_set_snr(cfg, 5.0, 1.0, -1.0) }, SicddStatus::InvalidConfig);
    let mut toml = ptr::null_mut();
    assert_eq!(unsafe { sicdd_config_to_toml(cfg, &mut toml) }, SicddStatus::Ok);
    let text = take_string(toml);
    assert!(text.contains("start = 30.0"), "{text}");
    unsafe { sicdd_config_free(cfg) };
}

#[test]
fn toml_round_trip_and_rates_run() {
    let cfg = smoke();
    assert_eq!(unsafe { sicdd_config_set_seed(cfg, 11) }, SicddStatus::Ok);
    let mut toml = ptr::null_mut();
    assert_eq!(unsafe { sicdd_config_to_toml(cfg, &mut toml) }, SicddStatus::Ok);
    let text = CString::new(take_string(toml)).unwrap();
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { sicdd_config_from_toml(text.as_ptr(), &mut again) }, SicddStatus::Ok, "{}", last_error());

    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { sicdd_run_rates(cfg, &mut a) }, SicddStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { sicdd_run_rates(again, &mut b) }, SicddStatus::Ok, "{}", last_error());
    let (a, b) = (take_string(a), take_string(b));
    assert!(a.starts_with("# sicdd rates v1\n"));
    assert_eq!(a, b);
    assert!(last_error().is_empty());
    unsafe {
        sicdd_config_free(cfg);
        sicdd_config_free(again);
    }
}

#[test]
fn noiseless_fer_is_zero() {
    let cfg = smoke();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sicdd_run_fer(cfg, &mut out) }, SicddStatus::Ok, "{}", last_error());
    let text = take_string(out);
    let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[2], "0.0", "{text}");
    unsafe { sicdd_config_free(cfg) };
}

#[test]
fn taps_and_power_are_available() {
    let cfg = smoke();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sicdd_taps_csv(cfg, &mut out) }, SicddStatus::Ok);
    let text = take_string(out);
    assert!(text.starts_with("index,re,im\n"));
    let mut p = 0.0;
    assert_eq!(unsafe { sicdd_unit_power(cfg, &mut p) }, SicddStatus::Ok);
    assert!(p > 0.0);
    unsafe { sicdd_config_free(cfg) };
}

#[test]
fn alphabet_points_fill_caller_buffers() {
    let (mut re, mut im, mut len) = ([0.0; 8], [0.0; 8], 0usize);
    assert_eq!(unsafe { sicdd_alphabet_points(1, 4, re.as_mut_ptr(), im.as_mut_ptr(), 8, &mut len) }, SicddStatus::Ok);
    assert_eq!(len, 4);
    assert_eq!(&re[..4], &[-3.0, -1.0, 1.0, 3.0]);
    assert_eq!(unsafe { sicdd_alphabet_points(1, 4, re.as_mut_ptr(), im.as_mut_ptr(), 2, &mut len) }, SicddStatus::InvalidArgument);
    assert_eq!(unsafe { sicdd_alphabet_points(7, 4, re.as_mut_ptr(), im.as_mut_ptr(), 8, &mut len) }, SicddStatus::InvalidArgument);
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/sicdd.h")).unwrap();
    for f in ["sicdd_last_error", "sicdd_config_from_preset", "sicdd_run_rates", "sicdd_run_fer", "sicdd_string_free", "SICDD_STATUS_OK"] {
        assert!(header.contains(f), "{f} missing from header");
    }
    let src = std::env::temp_dir().join(format!("sicdd_header_{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"sicdd.h\"\nint main(void) { SicddConfig *c = 0; SicddStatus s = sicdd_config_from_preset(\"smoke\", &c); sicdd_config_free(c); return (int)s; }\n",
    )
    .unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(dir.join("include")).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
    let _ = std::fs::remove_file(src);
}
