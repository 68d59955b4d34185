use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lanekoop::edmd::ModelDocument;

fn lanekoop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanekoop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "N_T = 20\nrepeats = 3\nwarmups = 1\n";

#[test]
fn run_all_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let res = lanekoop(&["run-all", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("4 (full)"), "{stdout}");

    for f in ["trajectories.csv", "spectrum.csv", "table1.csv", "manifest.json", "report.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let models: Vec<_> = fs::read_dir(out.join("models")).unwrap().collect();
    assert_eq!(models.len(), 8);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 5);
    assert_eq!(manifest["fingerprint"]["n_traj"], 20);
    for stage in ["generate", "identify", "evaluate"] {
        assert!(manifest["stage_durations_ms"][stage].is_number(), "{stage}");
    }
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(listed.contains(&"table1.csv") && listed.contains(&"models/radial_ht.json"));
}

#[test]
fn manifest_reruns_the_same_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("first");
    assert!(lanekoop(&["run-all", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());

    let manifest = out.join("manifest.json");
    let again = tmp.path().join("second");
    let res = lanekoop(&["generate", "--config", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read(out.join("trajectories.csv")).unwrap(),
        fs::read(again.join("trajectories.csv")).unwrap()
    );
}

#[test]
fn stages_run_separately() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    for stage in ["generate", "identify", "evaluate"] {
        let res = lanekoop(&[stage, "--config", &cfg, "--out", out, "--time-scope", "svd+solve"]);
        assert!(res.status.success(), "{stage}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let report = fs::read_to_string(Path::new(out).join("report.txt")).unwrap();
    assert!(report.contains("svd+solve"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "N_T = 5\nlane_width = 3\n");
    let res = lanekoop(&["generate", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("lane_width") && err.contains("line 2"), "{err}");

    let cfg = write_config(tmp.path(), "psi_0_max = 0\nT = -1\n");
    let res = lanekoop(&["generate", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("psi_0_max") && err.contains('T'), "{err}");

    let res = lanekoop(&["generate", "--energy-slack", "-3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("nothing_here");
    let res = lanekoop(&["identify", "--out", empty.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));

    let res = lanekoop(&["generate", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn run_all_reports_the_failing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    // A regular file where the output directory should go.
    let blocked = tmp.path().join("blocked");
    fs::write(&blocked, "").unwrap();
    let res = lanekoop(&["run-all", "--out", blocked.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("generate stage failed"));
}

#[test]
fn broken_full_rank_model_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(lanekoop(&["generate", "--config", &cfg, "--out", out_s]).status.success());
    assert!(lanekoop(&["identify", "--config", &cfg, "--out", out_s]).status.success());

    // The hard-threshold model is full rank; perturbing it must break RE = 0.
    let path = out.join("models").join("monomial_ht.json");
    let mut doc: ModelDocument = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc.rank, doc.d);
    doc.a[0] += 1.0;
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();

    let res = lanekoop(&["evaluate", "--config", &cfg, "--out", out_s]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("monomial/HT"));
    assert!(out.join("table1.csv").is_file());
}
