use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nls_fgr::harness::{ExperimentConfig, Manifest};
use sha2::{Digest, Sha256};

fn config_text(out: &Path, potential: &str) -> String {
    format!(
        r#"seed = 5
output_dir = "{}"

[grid]
dim = 1
points = 512
box_len = 40.0

{potential}

[nonlinearity]
sigma = 1.0

[spectrum]
levels = 2
doubling_check = true

[branch]
lambda_min_energy = 1.75
lambda_max_energy = 1.85
points = 3
delta_law_offsets_energy = [1e-3, 1e-2]

[fgr]
lambdas_energy = [1.74, 1.79]
positivity_samples = 16
identity_samples = 1
"#,
        out.display()
    )
}

const POSCHL_TELLER: &str = "[potential]\nkind = \"poschl_teller\"\nnu = 1.3\nwidth_len = 1.0";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlsfgr")).args(args).output().unwrap()
}

fn run_cmd(cmd: &str, cfg: &Path) -> Output {
    run(&[cmd, cfg.to_str().unwrap()])
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn spectrum_writes_a_hashed_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &config_text(&out, POSCHL_TELLER));
    let o = run_cmd("spectrum", &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out.join("spectrum");
    let m = manifest(&dir);
    assert_eq!(m.command, "spectrum");
    let parsed = ExperimentConfig::load(&cfg).unwrap();
    assert_eq!(m.config_hash, parsed.hash());
    assert!(m.files.iter().any(|f| f.path == "spectrum.json"));
    for f in &m.files {
        let bytes = fs::read(dir.join(&f.path)).unwrap();
        assert_eq!(f.sha256, sha(&bytes), "{}", f.path);
        assert_eq!(f.bytes, bytes.len() as u64);
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("spectrum.json")).unwrap()).unwrap();
    let err = report["max_analytic_error"].as_f64().unwrap();
    assert!(err < 1e-8, "analytic error {err}");
}

#[test]
fn reruns_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &config_text(&out, POSCHL_TELLER));
    assert!(run_cmd("spectrum", &cfg).status.success());
    let first = manifest(&out.join("spectrum"));
    assert!(run_cmd("spectrum", &cfg).status.success());
    let second = manifest(&out.join("spectrum"));
    assert_eq!(first.config_hash, second.config_hash);
    assert_eq!(first.files, second.files);
}

#[test]
fn second_branch_run_uses_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &config_text(&out, POSCHL_TELLER));
    let report = || -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(out.join("branch").join("branch.json")).unwrap()).unwrap()
    };
    let table = || -> Vec<String> {
        fs::read_to_string(out.join("branch").join("branch.csv"))
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert!(run_cmd("branch", &cfg).status.success());
    assert_eq!(report()["cache_hit"], false);
    let before = table();
    assert!(run_cmd("branch", &cfg).status.success());
    assert_eq!(report()["cache_hit"], true);
    assert_eq!(before, table());
    let m = manifest(&out.join("branch"));
    assert!(!m.references.is_empty(), "the branch cache is recorded as an input");
    let slope = report()["delta_law_slope"].as_f64().unwrap();
    assert!((slope - 0.5).abs() < 0.02, "{slope}");
}

#[test]
fn config_hash_ignores_formatting() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_text(&tmp.path().join("out"), POSCHL_TELLER);
    let spaced = text.replace(" = ", "   =   ");
    let a = ExperimentConfig::from_toml_str(&text).unwrap();
    let b = ExperimentConfig::from_toml_str(&spaced).unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = ExperimentConfig::from_toml_str(&text.replace("seed = 5", "seed = 6")).unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn malformed_configs_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = config_text(&out, POSCHL_TELLER).replace("points = 512\n", "");
    let o = run_cmd("spectrum", &write_config(tmp.path(), &missing));
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));

    let unknown_kind = config_text(&out, "[potential]\nkind = \"harmonic\"\nwidth_len = 1.0");
    let o = run_cmd("spectrum", &write_config(tmp.path(), &unknown_kind));
    assert_eq!(o.status.code(), Some(4));

    let stray = config_text(&out, POSCHL_TELLER) + "\n[extra]\nvalue = 1\n";
    let o = run_cmd("spectrum", &write_config(tmp.path(), &stray));
    assert_eq!(o.status.code(), Some(4));

    assert_eq!(run(&["spectrum"]).status.code(), Some(4));
    assert_eq!(run(&["transmogrify", "x.toml"]).status.code(), Some(4));
}

#[test]
fn shallow_well_exits_with_assumption_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let shallow = config_text(&out, "[potential]\nkind = \"gaussian_well\"\ndepth_energy = 0.3\nwidth_len = 1.0");
    let o = run_cmd("spectrum", &write_config(tmp.path(), &shallow));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient bound states"));
}

#[test]
fn report_without_a_sweep_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &config_text(&out, POSCHL_TELLER));
    let o = run_cmd("report", &cfg);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn modes_command_reports_small_residuals() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &config_text(&out, POSCHL_TELLER));
    let o = run_cmd("modes", &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("modes").join("modes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("lambda,delta,energy_1,frequency_shift"));
}
