use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[terrain]
extent_m = 40.0
cell_m = 0.1
rock_density_per_m2 = 0.005

[env]
max_episode_steps = 40

[ppo]
horizon = 16
minibatches = 2
epochs = 1

[teacher]
n_envs = 4
total_steps = 320

[collect]
n_envs = 4
steps = 40

[student]
epochs = 2
seq_len = 8
batch_size = 4

[eval]
episodes = 6
chunk = 4
"#;

fn rovernav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rovernav")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rovernav(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = rovernav(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_pipeline_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let (terrain, teacher, data, student) = (d.join("terrain"), d.join("teacher"), d.join("data"), d.join("student"));

    ok(&["terrain", "--config", p(&cfg), "--out", p(&terrain)]);
    ok(&["train-teacher", "--config", p(&cfg), "--terrain", p(&terrain), "--out", p(&teacher)]);
    assert!(teacher.join("teacher.ckpt").exists() && teacher.join("metrics.csv").exists());
    ok(&["collect", "--teacher", p(&teacher), "--out", p(&data)]);
    ok(&["train-student", "--data", p(&data), "--noise", "train-mix", "--out", p(&student)]);
    assert!(student.join("student.ckpt").exists() && student.join("loss.csv").exists());
    assert!(!student.join(".lock").exists());

    let (e1, e2) = (d.join("eval_teacher"), d.join("eval_student"));
    ok(&["eval", "--policy", p(&teacher), "--terrain", p(&terrain), "--out", p(&e1)]);
    ok(&["eval", "--policy", p(&student), "--terrain", p(&terrain), "--noise", "eval-noise", "--out", p(&e2)]);
    assert!(e1.join("actions_0.csv").exists());

    let table = d.join("table.md");
    let stdout = ok(&["report", p(&e1), p(&e2), "--out", p(&table)]);
    let md = fs::read_to_string(&table).unwrap();
    assert!(md.contains("teacher") && md.contains("student"), "{md}");
    assert_eq!(stdout, md);
    let csv = d.join("table.csv");
    ok(&["report", p(&e1), p(&e2), "--out", p(&csv)]);
    assert!(fs::read_to_string(&csv).unwrap().lines().count() >= 3);

    for (src, name) in [(teacher.join("metrics.csv"), "returns.svg"), (student.join("loss.csv"), "loss.svg"), (e1.join("actions_0.csv"), "actions.svg")] {
        let svg = d.join(name);
        ok(&["plot", p(&src), "--out", p(&svg)]);
        assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    }

    // Stages refuse inputs of the wrong kind.
    let e = err(&["train-student", "--data", p(&teacher), "--out", p(&d.join("x"))]);
    assert!(e.contains("provenance error"), "{e}");
    let e = err(&["collect", "--teacher", p(&d.join("nowhere")), "--out", p(&d.join("y"))]);
    assert!(e.contains("provenance error"), "{e}");

    // Tampering with an output breaks the downstream check.
    let metrics = teacher.join("metrics.csv");
    let mut text = fs::read_to_string(&metrics).unwrap();
    text.push('\n');
    fs::write(&metrics, text).unwrap();
    let e = err(&["collect", "--teacher", p(&teacher), "--out", p(&d.join("z"))]);
    assert!(e.contains("changed since it was written"), "{e}");
}

#[test]
fn config_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[ppo]\nlearning_rate = 0.1\n").unwrap();
    let e = err(&["terrain", "--config", p(&cfg), "--out", p(&dir.path().join("t"))]);
    assert!(e.contains("learning_rate"), "{e}");

    fs::write(&cfg, "[terrain]\nextent_m = -3.0\n").unwrap();
    let e = err(&["terrain", "--config", p(&cfg), "--out", p(&dir.path().join("t"))]);
    assert!(e.contains("extent"), "{e}");

    let e = err(&["eval", "--policy", p(dir.path()), "--terrain", "t1", "--noise", "loud", "--out", p(&dir.path().join("e"))]);
    assert!(e.contains("loud"), "{e}");
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("terrain");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "").unwrap();
    let e = err(&["terrain", "--out", p(&out)]);
    assert!(e.contains("locked"), "{e}");
}

#[test]
fn report_needs_two_runs() {
    let out = rovernav(&["report", "only_one", "--out", "x.md"]);
    assert!(!out.status.success());
}
