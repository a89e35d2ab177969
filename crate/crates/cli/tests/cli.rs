use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn forge() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_forge"));
    c.current_dir(repo());
    c
}

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    forge().args(args).output().expect("forge runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A long-running service; killed on drop.
struct Service {
    child: Child,
    url: String,
}

impl Service {
    fn start(args: &[&str]) -> Service {
        let mut child = forge().args(args).stdout(Stdio::piped()).spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let url = line
            .split_whitespace()
            .find(|w| w.starts_with("http://"))
            .unwrap_or_else(|| panic!("no url in {line:?}"))
            .to_string();
        Service { child, url }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn short_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", "configs/smoke.toml", "--out", out.to_str().unwrap(), "--iterations", "6"];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_resume_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let first = short_train(&out, &["--stop-at", "4"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let resumed = short_train(&out, &["--resume"]);
    assert_eq!(code(&resumed), 0, "{}", String::from_utf8_lossy(&resumed.stderr));
    assert!(String::from_utf8_lossy(&resumed.stdout).contains("iterations 4..6"));
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 6);

    let plots = dir.path().join("plots");
    let p = plots.to_str().unwrap();
    let m = out.join("metrics.jsonl");
    assert_eq!(code(&run(&["plot", "--metrics", m.to_str().unwrap(), "--out-dir", p])), 0);
    let csv = std::fs::read(plots.join("metrics.csv")).unwrap();
    assert!(plots.join("reward.png").exists());
    assert_eq!(code(&run(&["plot", "--metrics", m.to_str().unwrap(), "--out-dir", p])), 0);
    assert_eq!(std::fs::read(plots.join("metrics.csv")).unwrap(), csv, "re-rendering is deterministic");
}

#[test]
fn exit_codes_separate_config_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["plot", "--metrics", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("EmptyMetrics"));

    assert_eq!(code(&run(&["train", "--config", "configs/nope.toml"])), 2);
    let bad = short_train(&dir.path().join("x"), &["--learning-rate", "-1"]);
    assert_eq!(code(&bad), 2);
    assert_eq!(code(&run(&["train", "--config", "configs/smoke.toml", "--out", "/nonexistent-dir/x", "--resume"])), 2);
    assert_eq!(code(&run(&["collab", "--task", "no-such-task", "--local", "toy"])), 2);
    // Nothing listens on port 9: every group fails at lease time.
    let tasks = dir.path().join("tasks.txt");
    std::fs::write(&tasks, "settings-dark-mode\n").unwrap();
    let out = run(&["rollout", "--tasks", tasks.to_str().unwrap(), "--pool", "http://127.0.0.1:9", "--policy", "http://127.0.0.1:9", "--timeout-s", "2"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rollout_through_manager_and_policy_services() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.toml");
    let suite = repo().join("configs/tasks.toml");
    std::fs::write(&pool, format!("[local]\ninstances = 4\nsuite = {:?}\n", suite.to_str().unwrap())).unwrap();
    let manager = Service::start(&["manager", "--pool-config", pool.to_str().unwrap(), "--bind", "127.0.0.1:0", "--standby-floor", "0"]);
    let policy = Service::start(&["serve-policy", "--bind", "127.0.0.1:0", "--feature-dim", "256"]);

    let tasks = dir.path().join("tasks.txt");
    std::fs::write(&tasks, "# two groups\nsettings-dark-mode\nfiles-star  # trailing comment\n").unwrap();
    let sink = dir.path().join("traj.jsonl");
    let out = run(&[
        "rollout", "--tasks", tasks.to_str().unwrap(), "--pool", &manager.url, "--policy", &policy.url,
        "--group-size", "3", "--max-env-steps", "5", "--out", sink.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("settings-dark-mode: ") && stdout.contains("files-star: "), "{stdout}");
    let lines = std::fs::read_to_string(&sink).unwrap();
    assert_eq!(lines.lines().count(), 6, "one JSON line per trajectory");
}

#[test]
fn collab_and_ground_eval() {
    let out = run(&["collab", "--task", "contacts-favorite", "--local", "toy", "--cloud", "planner", "--cadence", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("contacts-favorite: success="));
    assert_eq!(code(&run(&["collab", "--task", "contacts-favorite", "--local", "planner"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(
        &gold,
        concat!(
            r#"{"id":"a","category":"icon","bbox":{"x_l":10,"y_l":10,"x_r":20,"y_r":20},"width":100,"height":100}"#, "\n",
            r#"{"id":"b","category":"text","bbox":{"x_l":50,"y_l":50,"x_r":60,"y_r":60},"width":100,"height":100}"#, "\n",
        ),
    )
    .unwrap();
    std::fs::write(
        &pred,
        concat!(
            r#"{"id":"a","output":"<think>x</think><answer>(20,10)</answer>"}"#, "\n",
            r#"{"id":"b","point":{"x":0,"y":0}}"#, "\n",
        ),
    )
    .unwrap();
    let csv = dir.path().join("report.csv");
    let out = run(&["ground-eval", "--pred", pred.to_str().unwrap(), "--gold", gold.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(&csv).unwrap();
    assert!(report.contains("icon,1,1,"), "{report}");
    assert!(report.contains("overall,2,1,"), "{report}");
}
