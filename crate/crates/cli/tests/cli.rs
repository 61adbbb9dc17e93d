use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
master_seed = 5
n_episodes = 500
n_test_episodes = 60
n_ood_episodes = 60
compare_env = false

[intervention]
n_episodes = 100
"#;

fn steplens(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steplens")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let o = steplens(&[flag], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{flag}");
    }
    assert!(stdout(&steplens(&["--help"], tmp.path())).contains("ingest"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(steplens(&["--no-such-flag", "run"], tmp.path()).status.code(), Some(1));
    assert_eq!(steplens(&["frobnicate"], tmp.path()).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[splits]\ntrain = 0.5\ncalibration = 0.2\nprobe_train = 0.2\n");
    let o = steplens(&["--config", &cfg, "run"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));
    assert_eq!(steplens(&["--eps-s", "1.5", "show-config"], tmp.path()).status.code(), Some(1));
}

#[test]
fn stage_without_upstream_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = steplens(&["--config", &cfg, "--output", "out", "label"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run it first"));
}

#[test]
fn show_config_applies_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let o = steplens(
        &["--seed", "42", "--eps-f", "0.2", "--steer-steps", "3,4", "--steer-coeff", "-0.05", "show-config"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("master_seed = 42"));
    assert!(text.contains("eps_f = 0.2"));
    assert!(text.contains("coefficient = -0.05"));
    let cfg = steplens::pipeline::PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.intervention.timesteps, vec![3, 4]);
}

#[test]
fn run_then_cached_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let first = steplens(&["--config", &cfg, "--output", "out", "run"], tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let lines: Vec<String> = stdout(&first).lines().map(str::to_string).collect();
    let stages = ["generate", "reward", "calibrate", "label", "probe", "steer", "report"];
    for (line, stage) in lines.iter().zip(stages) {
        assert_eq!(line.split_whitespace().collect::<Vec<_>>(), [stage, "ran"]);
    }
    assert!(lines[7].starts_with("manifest"));

    let second = steplens(&["--config", &cfg, "--output", "out", "run"], tmp.path());
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(stdout(&second).matches(" cached").count(), 7);

    let single = steplens(&["--config", &cfg, "--output", "out", "--force", "report"], tmp.path());
    assert_eq!(single.status.code(), Some(0));
    assert!(stdout(&single).starts_with("report     ran"));
    assert!(tmp.path().join("out/report/summary.txt").exists());
}

#[test]
fn ingest_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(steplens(&["--config", &cfg, "--output", "out", "generate"], tmp.path()).status.code(), Some(0));
    let o = steplens(&["--output", "reg", "ingest", "out/corpus.jsonl", "--name", "mine"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("episodes           620"));
    assert!(text.contains("activation dims    L8:64 L16:64 L24:64 L32:64"));
    assert!(tmp.path().join("reg/datasets/mine.jsonl").exists());

    std::fs::write(tmp.path().join("junk.jsonl"), "not json\n").unwrap();
    assert_eq!(steplens(&["ingest", "junk.jsonl"], tmp.path()).status.code(), Some(1));
    assert_eq!(steplens(&["ingest", "missing.jsonl"], tmp.path()).status.code(), Some(1));
}
