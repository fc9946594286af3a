use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const HONEST: &str = r#"
version = 1
name = "honest"
protocol = "simpleplus"
seed = 4
[devices]
provers = ["P0", "P1"]
"#;

const DROPPY: &str = r#"
version = 1
name = "droppy"
protocol = "simpleplus"
adversary = "dy"
properties = ["IAW", "IAS"]
expect = { IAW = "Holds", IAS = "Violated" }
[devices]
provers = ["P0"]
[network]
drop = true
"#;

const PADS: &str = r#"
version = 1
name = "pads"
protocol = "pads"
[devices]
provers = ["P0", "P1", "P2"]
"#;

fn crasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crasim"))
        .args(args)
        .env_remove("CRASIM_SEED")
        .env_remove("CRASIM_WORKERS")
        .env_remove("CRASIM_CAP")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bundled(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn run_writes_an_all_healthy_trace() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "h.scn", HONEST);
    let out = dir.path().join("t.jsonl");
    let o = crasim(&["run", s(&scn), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let claim = text.lines().rev().find(|l| l.contains("ClaimIndividual")).unwrap();
    assert_eq!(claim.matches("Healthy").count(), 2);
    assert!(!claim.contains("Unhealthy"));
}

#[test]
fn run_is_reproducible_and_prints_without_output_file() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "h.scn", HONEST);
    let a = crasim(&["run", s(&scn), "--seed", "9"]);
    let b = crasim(&["run", s(&scn), "--seed", "9"]);
    assert_eq!(code(&a), 0);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn malformed_scenario_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "bad.scn", "version = 1\nname = 3\n");
    assert_eq!(code(&crasim(&["run", s(&scn)])), 2);
    assert_eq!(code(&crasim(&["explore", s(&scn), "-o", s(dir.path())])), 2);
    assert_eq!(code(&crasim(&["run", "/nonexistent.scn"])), 2);
}

#[test]
fn run_requires_a_variant_for_multi_variant_files() {
    let scn = bundled("simpleplus_paper.scn");
    assert_eq!(code(&crasim(&["run", &scn])), 2);
    assert_eq!(code(&crasim(&["run", &scn, "--variant", "no-such"])), 2);
}

#[test]
fn explore_writes_summary_and_rechecking_witnesses() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "d.scn", DROPPY);
    let out = dir.path().join("out");
    let o = crasim(&["explore", s(&scn), "-o", s(&out), "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(out.join("timings.json").exists());

    let witness = out.join("witnesses/droppy.IAS.jsonl");
    assert!(witness.exists());
    assert!(!out.join("witnesses/droppy.IAW.jsonl").exists());
    let c = crasim(&["check", s(&witness), "--properties", "IAS"]);
    assert_eq!(code(&c), 1);
    assert!(String::from_utf8_lossy(&c.stdout).contains("\"Violated\""));
    assert_eq!(code(&crasim(&["check", s(&witness), "--properties", "IAW"])), 0);
}

#[test]
fn explore_summary_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "d.scn", DROPPY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&crasim(&["explore", s(&scn), "-o", s(&a), "--workers", "1"])), 0);
    assert_eq!(code(&crasim(&["explore", s(&scn), "-o", s(&b), "--workers", "3"])), 0);
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn explore_reports_unmet_expectations() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "d.scn", &DROPPY.replace("IAS = \"Violated\"", "IAS = \"Holds\""));
    let o = crasim(&["explore", s(&scn), "-o", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("expectation not met"));
}

#[test]
fn explore_rejects_an_empty_property_list() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "d.scn", DROPPY);
    let out = dir.path().join("out");
    assert_eq!(code(&crasim(&["explore", s(&scn), "-o", s(&out), "--properties", ","])), 2);
    let empty = write(&dir, "e.scn", &DROPPY.replace("properties = [\"IAW\", \"IAS\"]", "properties = []"));
    assert_eq!(code(&crasim(&["explore", s(&empty), "-o", s(&out)])), 2);
}

#[test]
fn explore_stops_above_the_cap() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_crasim"))
        .args(["explore", &bundled("simpleplus_counterless.scn"), "-o", s(dir.path())])
        .env("CRASIM_CAP", "20")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn explore_random_mode_and_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = crasim(&[
        "explore",
        &bundled("simpleplus_counterless.scn"),
        "-o",
        s(&out),
        "--random",
        "200",
        "--seed",
        "5",
        "--format",
        "csv",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(csv.contains("IA"));
    assert!(out.join("summary.json").exists());
}

#[test]
fn check_verdicts_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let honest = dir.path().join("h.jsonl");
    assert_eq!(code(&crasim(&["run", s(&write(&dir, "h.scn", HONEST)), "-o", s(&honest)])), 0);
    let o = crasim(&["check", s(&honest)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 9);

    let pads = dir.path().join("p.jsonl");
    assert_eq!(code(&crasim(&["run", s(&write(&dir, "p.scn", PADS)), "-o", s(&pads)])), 0);
    let o = crasim(&["check", s(&pads), "--properties", "IA"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Inapplicable"));

    let csv = crasim(&["check", s(&honest), "--properties", "IAW,GAW", "--format", "csv"]);
    let text = String::from_utf8_lossy(&csv.stdout);
    assert!(text.starts_with("trace,property,result,witness"));
    assert_eq!(text.lines().count(), 3);

    let garbage = write(&dir, "g.jsonl", "not json\n");
    assert_eq!(code(&crasim(&["check", s(&garbage)])), 2);
    assert_eq!(code(&crasim(&["check", s(&honest), "--properties", "XYZ"])), 2);
}

#[test]
fn report_merges_summaries() {
    let dir = TempDir::new().unwrap();
    let scn = write(&dir, "d.scn", DROPPY);
    let out = dir.path().join("out");
    assert_eq!(code(&crasim(&["explore", s(&scn), "-o", s(&out)])), 0);
    let summary = out.join("summary.json");
    let o = crasim(&["report", s(&summary), s(&summary), "--format", "csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 5);
    let j = crasim(&["report", s(&summary)]);
    assert_eq!(code(&j), 0);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(code(&crasim(&["report", s(&dir.path().join("missing.json"))])), 2);
}
