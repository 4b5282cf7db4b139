use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sicdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sicdd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn presets_are_listed() {
    let out = stdout(&sicdd(&["presets"]));
    assert!(out.lines().any(|l| l == "fig4-4ask"));
    assert!(out.lines().any(|l| l == "smoke"));
}

#[test]
fn rates_are_byte_identical_for_equal_seeds() {
    let a = stdout(&sicdd(&["rates", "--preset", "smoke", "--seed", "5"]));
    let b = stdout(&sicdd(&["rates", "--preset", "smoke", "--seed", "5", "--threads", "1"]));
    let c = stdout(&sicdd(&["rates", "--preset", "smoke", "--seed", "6"]));
    assert!(a.starts_with("# sicdd rates v1\nsnr_db,kind,S,stage,level,rate_bpcu"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_configuration_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n = 0\n").unwrap();
    let o = sicdd(&["rates", "--config", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));

    let o = sicdd(&["rates", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sicdd(&["plotdata", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn toml_configuration_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "alphabet = \"pam\"\nktilde_aux = 2\nstages = [1, 2]\nkinds = [\"jdd\", \"sdd\"]\nn = 64\nframes = 1\ntraining_symbols = 2000\n\n[link]\nalpha = 0.0\nlength_km = 30.0\ntaps_half = 4\n\n[snr]\nstart = 6.0\nstop = 8.0\nstep = 2.0\n",
    )
    .unwrap();
    let out = dir.path().join("rates.csv");
    let o = sicdd(&["rates", "--config", path_str(&cfg), "--out", path_str(&out)]);
    stdout(&o);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("6.0,JDD,") || l.starts_with("8.0,JDD,")).count(), 2, "{text}");
}

#[test]
fn taps_are_written_with_a_schema_line() {
    let out = stdout(&sicdd(&["taps", "--preset", "fig7-4ask-s4"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("# sicdd taps v1"));
    assert_eq!(lines.next(), Some("index,re,im"));
    assert_eq!(out.lines().count(), 2 + 203);
}

#[test]
fn design_then_fer_with_stored_design() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.txt");
    stdout(&sicdd(&["design", "--preset", "smoke", "--out", path_str(&design)]));
    assert!(fs::read_to_string(&design).unwrap().starts_with("# sicdd polar-design v1"));
    let stored = stdout(&sicdd(&["fer", "--preset", "smoke", "--design", path_str(&design)]));
    let fresh = stdout(&sicdd(&["fer", "--preset", "smoke"]));
    assert_eq!(stored, fresh);
    let row: Vec<&str> = fresh.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[2], "0.0", "noiseless smoke preset must decode every frame");
}

#[test]
fn plotdata_merges_rates_and_fer() {
    let dir = tempfile::tempdir().unwrap();
    let rates = dir.path().join("rates.csv");
    let fer = dir.path().join("fer.csv");
    stdout(&sicdd(&["rates", "--preset", "smoke", "--out", path_str(&rates)]));
    stdout(&sicdd(&["fer", "--preset", "smoke", "--out", path_str(&fer)]));
    let merged = stdout(&sicdd(&["plotdata", path_str(&rates), path_str(&fer)]));
    assert!(merged.starts_with("# sicdd plotdata v1\nsource,snr_db,series,S,stage,level,metric,value\n"));
    assert!(merged.contains(",fer,0"));
    assert!(merged.contains(",rate_bpcu,"));
    let again_path = dir.path().join("merged.csv");
    fs::write(&again_path, &merged).unwrap();
    assert_eq!(stdout(&sicdd(&["plotdata", path_str(&again_path)])), merged);
}
