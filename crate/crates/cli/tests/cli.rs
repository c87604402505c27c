use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mosaic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mosaic"))
        .args(args)
        .env("MOSAIC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mosaic(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_then_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    ok(&["run", "--mode", "mosaic", "--preset", "okutama-like", "--cameras", "2", "--batch", "4", "--canvas", "640", "--seed", "7", "--frames", "16", "--out", p(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "mode,M,b,C,map50,per_camera_fps,cfps,cer,utilization,relaxations"
    );
    assert_eq!(column(&csv, "mode"), vec!["mosaic"]);

    let manifest = dir.path().join("r.csv.manifest.json");
    let replayed = dir.path().join("again.csv");
    ok(&["replay", "--manifest", p(&manifest), "--out", p(&replayed)]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&replayed).unwrap());
}

#[test]
fn scenario_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for f in [&a, &b] {
        ok(&["scenario", "generate", "--preset", "ufpr-like", "--seed", "3", "--cameras", "2", "--frames", "5", "--out", p(f)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    // and the file drives a run
    let csv = ok(&["run", "--mode", "uniform", "--scenario", p(&a), "--cameras", "2"]);
    assert_eq!(column(&csv, "M"), vec!["2"]);
}

#[test]
fn camera_sweep_has_one_row_per_mode_and_m() {
    let csv = ok(&["sweep", "--kind", "cameras", "--m-max", "2", "--frames", "12", "--seed", "1"]);
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let mut modes = column(&csv, "mode");
    modes.sort();
    modes.dedup();
    assert_eq!(modes, vec!["fcfs", "mosaic", "uniform"]);
}

#[test]
fn ps_period_sweep_throughput_rises() {
    let csv = ok(&["sweep", "--kind", "ps-period", "--cameras", "2", "--frames", "12", "--periods", "10,30,60"]);
    let fps: Vec<f64> = column(&csv, "per_camera_fps").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(fps.len(), 3);
    assert!(fps[0] < fps[1] && fps[1] < fps[2], "{fps:?}");
}

#[test]
fn mosaic_beats_uniform_at_six_cameras() {
    let common = ["--preset", "okutama-like", "--cameras", "6", "--seed", "7", "--frames", "20"];
    let map = |mode: &str| -> f64 {
        let mut args = vec!["run", "--mode", mode];
        args.extend_from_slice(&common);
        column(&ok(&args), "map50")[0].parse().unwrap()
    };
    assert!(map("mosaic") >= map("uniform"));
}

#[test]
fn invalid_inputs_fail_with_message() {
    let out = mosaic(&["run", "--preset", "nowhere", "--cameras", "1", "--frames", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let out = mosaic(&["run", "--canvas", "500", "--cameras", "1", "--frames", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("latency"));

    let out = mosaic(&["replay", "--manifest", "/nonexistent/m.json"]);
    assert!(!out.status.success());
}

#[test]
fn zero_budget_advises_fcfs() {
    let text = ok(&["max-cameras", "--pool", "2", "--frames", "12", "--budget", "0"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["m_max"], 0);
    assert!(v["advice"].as_str().unwrap().contains("FCFS"));
}

#[test]
fn throughput_reports_the_model() {
    let v: serde_json::Value = serde_json::from_str(&ok(&["throughput", "--cameras", "3"])).unwrap();
    assert!((v["cfps"].as_f64().unwrap() - 68.588235294).abs() < 1e-6);
    let out = mosaic(&["throughput", "--cameras", "6", "--ps-frames", "100", "--ps-period", "10"]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "mode = \"uniform\"\nframes = 3\n[pipeline]\ncameras = 2\ncanvas = 320\nbatch = 1\n").unwrap();
    let csv = ok(&["run", "--config", p(&cfg)]);
    assert_eq!(column(&csv, "mode"), vec!["uniform"]);
    assert_eq!(column(&csv, "C"), vec!["320"]);
    let csv = ok(&["run", "--config", p(&cfg), "--mode", "fcfs", "--canvas", "640"]);
    assert_eq!(column(&csv, "mode"), vec!["fcfs"]);
    assert_eq!(column(&csv, "C"), vec!["640"]);
    assert_eq!(column(&csv, "M"), vec!["2"]);
}
