use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn minimax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minimax")).args(args).output().unwrap()
}

fn stdout_dir(out: &Output) -> PathBuf {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    PathBuf::from(text.lines().next().unwrap())
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn theory_run_creates_timestamped_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[theory]\nns = [2, 4]\n");
    let out = tmp.path().display().to_string();
    let first = minimax(&["theory", "--config", &cfg, "--out", &out]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = minimax(&["theory", "--config", &cfg, "--out", &out]);
    assert!(second.status.success());
    let (a, b) = (stdout_dir(&first), stdout_dir(&second));
    assert_ne!(a, b);
    assert!(a.file_name().unwrap().to_str().unwrap().starts_with("theory-"));
    assert_eq!(fs::read(a.join("find_worst.csv")).unwrap(), fs::read(b.join("find_worst.csv")).unwrap());
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn seed_and_trials_flags_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[theory]\nns = [2]\n");
    let out = tmp.path().display().to_string();
    let run = minimax(&["mc", "--config", &cfg, "--out", &out, "--seed", "42", "--trials", "10000"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = fs::read_to_string(stdout_dir(&run).join("manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(json["seeds"][0], 42);
    assert_eq!(json["config"]["mc"]["trials"], 10_000);
}

#[test]
fn bad_config_exits_with_code_two_and_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[loss]\nvariant = \"hinge\"\n");
    let out = tmp.path().display().to_string();
    let run = minimax(&["train", "--config", &cfg, "--out", &out]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8(run.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["status"], "failed");
    assert!(record["message"].as_str().unwrap().contains("loss.variant"));
}

#[test]
fn unknown_preset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    let run = minimax(&["train", "--preset", "imagenet", "--out", &out]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn report_reemits_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[dataset]\nclasses = 3\nimbalance = { kind = \"step\", ratio = 0.1, base_count = 100 }\n\
         [minimax]\nt0 = 1\nt1 = 3\nt2 = 1\n[model]\nwarmup_epochs = 1\ndecay_epochs = []\n[eval]\nper_class = 20\n",
    );
    let out = tmp.path().display().to_string();
    let train = minimax(&["train", "--config", &cfg, "--out", &out]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let run_dir = stdout_dir(&train);
    let input = run_dir.join("report.json").display().to_string();
    let report = minimax(&["report", "--input", &input, "--out", &out]);
    assert!(report.status.success());
    let again = stdout_dir(&report);
    assert_eq!(fs::read(run_dir.join("epochs.csv")).unwrap(), fs::read(again.join("epochs.csv")).unwrap());
}
