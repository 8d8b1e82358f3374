use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vortexmf"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vortexmf-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = bin().args(["verify", "no-such-suite"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coulomb-identities"));
}

#[test]
fn passing_suite_exits_zero() {
    let out = bin().args(["verify", "osgood", "--quiet"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("osgood: pass"));
}

#[test]
fn missing_config_fails() {
    let out = bin().args(["run", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn reruns_write_identical_results() {
    let read = |dir: &PathBuf| {
        let out = bin()
            .args(["run", "--quiet", "--realizations", "2", "--config"])
            .arg(config("quick.json"))
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(dir.join("energy.csv")).unwrap()
    };
    let (a, b) = (scratch("a"), scratch("b"));
    let first = read(&a);
    assert!(first.lines().count() > 1);
    assert!(a.join("record.json").exists());
    assert_eq!(first, read(&b));
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}

#[test]
fn seed_flag_changes_the_results() {
    let run = |seed: &str, dir: &PathBuf| {
        let out = bin()
            .args(["run", "--quiet", "--realizations", "2", "--seed", seed, "--config"])
            .arg(config("quick.json"))
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read_to_string(dir.join("energy.csv")).unwrap()
    };
    let (a, b) = (scratch("s1"), scratch("s2"));
    assert_ne!(run("1", &a), run("2", &b));
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}
