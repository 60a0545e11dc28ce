use std::process::Command;

fn wmdrive(dir: &std::path::Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wmdrive"))
        .arg("--run-dir")
        .arg(dir)
        .args(args)
        .env_remove("WMDRIVE_SEED")
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = wmdrive(dir.path(), &["--set", "frame_size=48", "collect"]);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = wmdrive(dir.path(), &["--set", "no.such=1", "collect"]);
    assert_eq!(unknown.status.code(), Some(2));
    let missing = wmdrive(dir.path(), &["train-rnn"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("vae"));
}

#[test]
fn collect_with_config_file_and_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "frame_size=32\ncollect.episodes=2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wmdrive"))
        .arg("--run-dir")
        .arg(dir.path())
        .arg("--config")
        .arg(&cfg)
        .env("WMDRIVE_SEED", "11")
        .arg("collect")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(dir.path().join("collect.config")).unwrap();
    assert!(written.contains("seed=11") && written.contains("frame_size=32"));
    assert!(dir.path().join("dataset/episode_0001.frames").exists());
}
