use std::process::Command;

fn dicert() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dicert"))
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        format!(r#"{{"theta_list": [0.45946, 0.7847], "seed": 3, "output_dir": {:?}}}"#, out),
    )
    .unwrap();

    let status = dicert().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["table.csv", "fig2.csv", "fig3.csv", "fig4.csv", "fig5.csv", "rows.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let status = dicert().args(["reference", "--config"]).arg(&config).output().unwrap();
    assert!(status.status.success());
    assert!(out.join("reference.csv").is_file());
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"visibility": 1.5}"#).unwrap();
    let status = dicert().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("visibility"));
}
