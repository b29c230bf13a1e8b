use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gamorra_core::PerfModel;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gamorra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gamorra"))
        .args(args)
        .output()
        .expect("spawn gamorra")
}

fn ok(args: &[&str]) -> Output {
    let out = gamorra(args);
    assert!(
        out.status.success(),
        "gamorra {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Work { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, scenario: &Path, profile: &str) {
        ok(&[
            "simulate",
            "--scenario",
            &p(scenario),
            "--profile",
            &p(&configs().join(profile)),
            "--out",
            &p(&self.path("sim")),
        ]);
    }

    fn bench(&self, profile: &str) {
        ok(&["bench", "--profile", &p(&configs().join(profile)), "--out", &p(&self.path("perf.json"))]);
    }

    fn trace_args(&self) -> Vec<String> {
        vec![
            "--trace".into(),
            p(&self.path("sim/trace.jsonl")),
            "--actuals".into(),
            p(&self.path("sim/actuals.csv")),
            "--perf".into(),
            p(&self.path("perf.json")),
        ]
    }

    fn cmd(&self, sub: &str, extra: &[&str]) -> Output {
        let mut args: Vec<String> = vec![sub.into()];
        args.extend(self.trace_args());
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        gamorra(&refs)
    }
}

fn minimal() -> Work {
    let w = Work::new();
    w.simulate(&configs().join("minimal_scenario.toml"), "game_profile.json");
    w.bench("game_profile.json");
    w
}

fn modes(log: &Path) -> Vec<String> {
    let text = fs::read_to_string(log).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mode").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn simulate_writes_trace_actuals_and_shaders() {
    let w = minimal();
    let trace = fs::read_to_string(w.path("sim/trace.jsonl")).unwrap();
    assert!(!trace.is_empty());
    let actuals = fs::read_to_string(w.path("sim/actuals.csv")).unwrap();
    assert!(actuals.lines().filter(|l| !l.trim().is_empty()).count() >= 40);
    assert!(fs::read_dir(w.path("sim/shaders")).unwrap().count() > 0);
}

#[test]
fn missing_profile_is_a_usage_error() {
    let w = Work::new();
    let missing = w.path("nope.json");
    let out = gamorra(&[
        "simulate",
        "--scenario",
        &p(&configs().join("minimal_scenario.toml")),
        "--profile",
        &p(&missing),
        "--out",
        &p(&w.path("sim")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn malformed_profile_is_a_usage_error() {
    let w = Work::new();
    let bad = w.path("bad.json");
    fs::write(&bad, "{\"name\": 3").unwrap();
    let out = gamorra(&["bench", "--profile", &p(&bad), "--out", &p(&w.path("perf.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_covers_the_pipeline_and_respects_the_cap() {
    let w = Work::new();
    let profile = p(&configs().join("reference_profile.json"));
    let (full, half) = (w.path("full.json"), w.path("half.json"));
    ok(&["bench", "--profile", &profile, "--out", &p(&full)]);
    ok(&["bench", "--profile", &profile, "--cap-ms", "50", "--out", &p(&half)]);
    let (full, half) = (PerfModel::load(&full).unwrap(), PerfModel::load(&half).unwrap());
    assert!(full.functions.len() >= 9, "{}", full.functions.len());
    assert!(full.covers_pipeline());
    for (stage, f) in &half.functions {
        assert!(f.max_load() <= full.functions[stage].max_load(), "{stage}");
    }
}

#[test]
fn fit_succeeds_and_short_traces_are_data_errors() {
    let w = minimal();
    let out = w.cmd("fit", &["--out", &p(&w.path("weights.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(w.path("weights.json").exists());

    let short = Work::new();
    let scenario = short.path("short.toml");
    fs::write(&scenario, "name = \"short\"\nframes = 5\nseed = 2\nobjects = 4\nshader_pool = 2\n").unwrap();
    short.simulate(&scenario, "game_profile.json");
    short.bench("game_profile.json");
    let out = short.cmd("fit", &["--out", &p(&short.path("weights.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn offline_run_never_goes_online() {
    let w = minimal();
    let weights = p(&w.path("weights.json"));
    assert!(w.cmd("fit", &["--out", &weights]).status.success());
    let log = w.path("log.csv");
    let out = w.cmd("run", &["--weights", &weights, "--mode", "offline", "--out", &p(&log)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = modes(&log);
    assert_eq!(m.len(), 40);
    assert!(m.iter().all(|x| x == "offline"), "{m:?}");
}

#[test]
fn hybrid_run_switches_online_under_drift() {
    let w = Work::new();
    let scenario = w.path("drift.toml");
    fs::write(
        &scenario,
        r#"name = "small-drift"
frames = 300
seed = 5
objects = 16
shader_pool = 4
scene_changes = [25]

[[drift]]
frame = 100
stages = ["ps", "vs"]
multiplier = 1.6
"#,
    )
    .unwrap();
    let config = w.path("train.toml");
    fs::write(&config, "offline_frame_count = 50\nrmse_threshold_ms = 0.1\n").unwrap();
    w.simulate(&scenario, "game_profile.json");
    w.bench("game_profile.json");
    let weights = p(&w.path("weights.json"));
    let cfg = p(&config);
    let out = w.cmd("fit", &["--config", &cfg, "--out", &weights]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = w.path("log.csv");
    let out = w.cmd("run", &["--weights", &weights, "--config", &cfg, "--out", &p(&log)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = modes(&log);
    assert_eq!(m.len(), 300);
    assert!(m.iter().any(|x| x == "online"), "no online frame");
}

#[test]
fn truncated_actuals_are_rejected() {
    let w = minimal();
    let path = w.path("sim/actuals.csv");
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().take(10).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let out = w.cmd("fit", &["--out", &p(&w.path("weights.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("actuals.csv"));
}

#[test]
fn compare_reports_every_model() {
    let w = minimal();
    let dir = w.path("cmp");
    let out = w.cmd("compare", &["--train-frames", "20", "--out", &p(&dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 6, "{report}");
    for (line, model) in lines[1..].iter().zip(["gm-h", "gm-of", "ar", "fcm", "frq"]) {
        assert!(line.starts_with(&format!("{model},")), "{line}");
    }
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(text.contains("margin 0"), "{text}");
    assert!(text.contains("FCM intercept on"), "{text}");
    let estimates = fs::read_to_string(dir.join("estimates.csv")).unwrap();
    assert_eq!(estimates.lines().count(), 21);
}

#[test]
fn fcm_intercept_can_be_switched_off() {
    let w = minimal();
    let config = w.path("train.toml");
    fs::write(&config, "fcm_intercept = false\n").unwrap();
    let dir = w.path("cmp");
    let out = w.cmd(
        "compare",
        &["--models", "fcm", "--config", &p(&config), "--train-frames", "20", "--out", &p(&dir)],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(text.contains("FCM intercept off"), "{text}");
}

#[test]
fn unknown_model_is_a_usage_error() {
    let w = minimal();
    let out = w.cmd("compare", &["--models", "gm-h,oracle", "--train-frames", "20", "--out", &p(&w.path("cmp"))]);
    assert_eq!(out.status.code(), Some(2));
}
