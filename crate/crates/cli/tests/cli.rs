use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rydberg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rydberg")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    rydberg(&args)
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.retain(|p| p.to_string_lossy().ends_with(ext));
    v.sort();
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn paper_config_reports_ninety_percent() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &configs().join("paper.cfg"), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let eff: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("efficiency = "))
        .expect("efficiency line")
        .parse()
        .unwrap();
    assert!((eff - 0.90).abs() <= 0.02, "{eff}");
    let csv = files_with_ext(tmp.path(), ".csv");
    assert_eq!(csv.len(), 1);
    let name = csv[0].file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("stirap-single-"), "{name}");
    assert_eq!(files_with_ext(tmp.path(), ".manifest.json").len(), 1);
}

#[test]
fn phase_scan_has_one_row_per_point_and_a_fringe() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &configs().join("phase-scan.cfg"), &["--set", "run.noise=false"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(&files_with_ext(tmp.path(), ".csv")[0]).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 25);
    let p: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let (lo, hi) = p.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi - lo > 0.5, "fringe amplitude {}", hi - lo);
}

#[test]
fn missing_field_exits_two_without_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "[system]\nomega_p = 47\n");
    let out_dir = tmp.path().join("out");
    let out = run_in(&out_dir, &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("experiment.kind"), "{}", stderr(&out));
    assert!(!out_dir.exists());
}

#[test]
fn parse_errors_point_at_the_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "experiment.kind = stirap-single\n\nsystem.gamma_e = wide\n");
    let out = run_in(&tmp.path().join("out"), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.cfg:3:"), "{}", stderr(&out));
    let out = run_in(&tmp.path().join("out"), &configs().join("paper.cfg"), &["--set", "system.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("system.nope"));
}

#[test]
fn numerical_failure_exits_three() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &configs().join("paper.cfg"), &["--set", "run.dt=0.05"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn seeded_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("phase-scan.cfg");
    for _ in 0..2 {
        let out = run_in(tmp.path(), &cfg, &["--seed", "11", "--set", "run.dt=5e-4"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let csv = files_with_ext(tmp.path(), ".csv");
    assert_eq!(csv.len(), 2);
    let a = fs::read(&csv[0]).unwrap();
    assert_eq!(a, fs::read(&csv[1]).unwrap());
    assert!(String::from_utf8(a).unwrap().lines().nth(1).unwrap().split(',').nth(2).unwrap() != "");
}

#[test]
fn replay_reproduces_results() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    let out = run_in(&first, &configs().join("lifetime.cfg"), &["--set", "fit.steps=200", "--set", "fit.burn_in=50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = files_with_ext(&first, ".manifest.json").remove(0);
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(record["seed"], 7);
    assert_eq!(record["settings"]["fit.steps"], "200");

    let second = tmp.path().join("second");
    let out = rydberg(&["replay", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (a, b) = (files_with_ext(&first, ".csv"), files_with_ext(&second, ".csv"));
    assert_eq!(a.len(), 2, "data and chain");
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn json_output_mirrors_the_table() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(
        tmp.path(),
        &configs().join("autler-townes.cfg"),
        &["--format", "json", "--set", "scan.points=21"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let json = files_with_ext(tmp.path(), ".json");
    let data = json.iter().find(|p| !p.to_string_lossy().ends_with(".manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(data).unwrap()).unwrap();
    assert_eq!(v["columns"][0], "delta_p_MHz");
    assert_eq!(v["rows"].as_array().unwrap().len(), 21);
    assert!(v["rows"][0][2].is_null());
}

#[test]
fn plot_scripts_for_known_layouts() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &configs().join("phase-scan.cfg"), &["--set", "run.dt=5e-4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = files_with_ext(tmp.path(), ".csv").remove(0);
    let out = rydberg(&["plot", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let script = fs::read_to_string(csv.with_extension("py")).unwrap();
    assert!(script.contains(csv.file_name().unwrap().to_str().unwrap()));
    assert!(script.contains("Stokes phase"));

    let map = tmp.path().join("map");
    let out = run_in(
        &map,
        &configs().join("avoided-crossing.cfg"),
        &["--set", "scan.points=11", "--set", "scan2.points=3", "--set", "experiment.t_ex=0.5"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = files_with_ext(&map, ".csv").remove(0);
    assert!(rydberg(&["plot", csv.to_str().unwrap()]).status.success());
    let script = fs::read_to_string(csv.with_extension("py")).unwrap();
    assert!(script.contains("pcolormesh") && script.contains("ridge_lo_MHz"));
}

#[test]
fn plot_rejects_empty_and_unknown_files() {
    let tmp = TempDir::new().unwrap();
    let empty = write_config(tmp.path(), "empty.csv", "");
    let out = rydberg(&["plot", empty.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no data rows"));
    let header_only = write_config(tmp.path(), "h.csv", "phi_rad,p_model,counts,shots\n");
    assert!(!rydberg(&["plot", header_only.to_str().unwrap()]).status.success());
    let odd = write_config(tmp.path(), "odd.csv", "a,b\n1,2\n");
    let out = rydberg(&["plot", odd.to_str().unwrap()]);
    assert!(stderr(&out).contains("unrecognized column layout"));
    assert!(!tmp.path().join("odd.py").exists());
}

#[test]
fn tomography_run_reports_fidelity() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &configs().join("tomography.cfg"), &["--set", "tomography.bootstrap=0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let f: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("fidelity = "))
        .expect("fidelity line")
        .parse()
        .unwrap();
    assert!(f > 0.5 && f <= 1.0, "{f}");
}
