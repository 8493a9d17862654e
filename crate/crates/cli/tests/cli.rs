use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 5

[manifold]
builder = "torus"
sides = [6, 6]

[observation]
kind = "band"
axis = 0
values = [0, 1, 2]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracinv"))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn heatcheck_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let out = tmp.path().join("run");
    let o = run(&["heatcheck"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["command"], "heatcheck");
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    assert!(out.join("config.resolved.toml").exists());
}

#[test]
fn unknown_key_is_a_schema_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "bad.toml", &format!("{SMALL}\n[fit]\nsamplez = 10\n"));
    let o = run(&["forward"], &cfg, &tmp.path().join("run"));
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`fit") && err.contains("samplez"), "{err}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = bin().arg("heatcheck").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn identity_gauge_round_trip() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[potential]\nprofile = \"bump\"\ncenter = [4, 2]\nradius = 1\nheight = 1.5\n");
    let cfg = write_config(&tmp, "gauge.toml", &text);
    let out = tmp.path().join("run");
    let o = run(&["gauge", "--oracle"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let matched = r["checks"].as_array().unwrap().iter().find(|c| c["id"] == "gauge.matched").unwrap();
    assert_eq!(matched["passed"], true);
}

#[test]
fn full_round_trip_recovers_the_bump() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[potential]\nprofile = \"bump\"\ncenter = [4, 2]\nradius = 1\nheight = 2.0\n");
    let cfg = write_config(&tmp, "all.toml", &text);
    let out = tmp.path().join("run");
    let o = run(&["all", "--oracle"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("potential.csv")).unwrap();
    assert!(csv.starts_with("vertex,recovered"));
    let r = report(&out);
    let err = r["checks"].as_array().unwrap().iter().find(|c| c["id"] == "potential.error").unwrap();
    assert!(err["value"].as_f64().unwrap() < 1e-6);
}

#[test]
fn reports_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["spectral-recover", "--oracle"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["spectral-recover", "--oracle"], &cfg, &b)), 0);
    for f in ["report.json", "config.resolved.toml", "spectral_data.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let out = tmp.path().join("run");
    let o = bin().args(["geometry", "--seed", "99", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(report(&out)["seed"], 99);
    assert!(fs::read_to_string(out.join("config.resolved.toml")).unwrap().contains("seed = 99"));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let out = tmp.path().join("run");
    assert_eq!(code(&run(&["geometry"], &cfg, &out)), 0);
    assert_eq!(code(&run(&["geometry"], &cfg, &out)), 2);
    assert_eq!(code(&run(&["geometry", "--force"], &cfg, &out)), 0);
}

#[test]
fn regen_golden_needs_oracle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let o = run(&["regen-golden"], &cfg, tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn regen_golden_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["regen-golden", "--oracle"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["regen-golden", "--oracle"], &cfg, &b)), 0);
    let first = fs::read(a.join("small.json")).unwrap();
    assert_eq!(first, fs::read(b.join("small.json")).unwrap());
    // rerunning into the same directory is not drift
    assert_eq!(code(&run(&["regen-golden", "--oracle"], &cfg, &a)), 0);
    assert_eq!(first, fs::read(a.join("small.json")).unwrap());
}

#[test]
fn regen_golden_refuses_drift_without_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let out = tmp.path().join("g");
    assert_eq!(code(&run(&["regen-golden", "--oracle"], &cfg, &out)), 0);
    let path = out.join("small.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    doc["values"]["lambda_1"] = serde_json::json!(123.0);
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    assert_eq!(code(&run(&["regen-golden", "--oracle"], &cfg, &out)), 1);
    assert_eq!(code(&run(&["regen-golden", "--oracle", "--force"], &cfg, &out)), 0);
}

#[test]
fn shipped_goldens_are_current() {
    let root = workspace();
    let tmp = TempDir::new().unwrap();
    for entry in fs::read_dir(root.join("configs")).unwrap() {
        let cfg = entry.unwrap().path();
        let stem = cfg.file_stem().unwrap().to_str().unwrap().to_string();
        let golden = root.join("golden").join(format!("{stem}.json"));
        assert!(golden.exists(), "no golden file for {stem}");
        fs::copy(&golden, tmp.path().join(format!("{stem}.json"))).unwrap();
        // without --force a regeneration only succeeds within the drift tolerance
        let o = run(&["regen-golden", "--oracle"], &cfg, tmp.path());
        assert_eq!(code(&o), 0, "{stem}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn entangle_writes_homotopy_curve() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let out = tmp.path().join("run");
    let o = run(&["entangle"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("homotopy.csv")).unwrap();
    // α = 0.5 skips the integer order 1.0
    assert_eq!(csv.lines().count(), 10);
    assert!(report(&out)["stages"]["entangle"]["homotopy"]["vanish_set_size"].as_u64().unwrap() >= 18);
}
