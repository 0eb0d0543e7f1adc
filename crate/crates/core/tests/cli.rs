use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bandshare"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn run_writes_one_row_per_hyperperiod_and_client() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let cfg = config("table2.toml");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--horizon",
        "6",
        "--out-dir",
        dir,
        "--detail",
        "period",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(lines(&out.path().join("hyperperiod.csv")), 6 + 1);
    assert_eq!(lines(&out.path().join("clients.csv")), 120 + 1);
    assert_eq!(lines(&out.path().join("periods.csv")), 6 * 20 + 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["horizon"], 6);
    assert_eq!(manifest["policies"][0], "abs");
}

#[test]
fn identical_invocations_write_identical_files() {
    let cfg = config("table2.toml");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let o = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--horizon",
            "4",
            "--seed-override",
            "9",
            "--out-dir",
            out.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
        outputs.push(std::fs::read(out.path().join("hyperperiod.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn compare_and_sweep_row_counts() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let cmp = config("fig4_compare.toml");
    let o = run(&[
        "compare",
        "--config",
        cmp.to_str().unwrap(),
        "--policies",
        "abs,dynamic",
        "--horizon",
        "4",
        "--out-dir",
        dir,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(lines(&out.path().join("compare.csv")), 5 * 2 + 1);

    let sw = config("fig6_stepsize.toml");
    let o = run(&[
        "sweep-stepsize",
        "--config",
        sw.to_str().unwrap(),
        "--eta",
        "0.1,0.01,variable",
        "--horizon",
        "5",
        "--out-dir",
        dir,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(lines(&out.path().join("sweep.csv")), 3 * 5 + 1);
    assert_eq!(lines(&out.path().join("sweep_summary.csv")), 3 + 1);
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    for name in [
        "table2.toml",
        "fig2_initial_sharing.toml",
        "fig3_rate_patterns.toml",
        "fig4_compare.toml",
        "fig5_arrival_switch.toml",
        "fig6_stepsize.toml",
        "fig7_capacity_switch.toml",
    ] {
        let o = run(&["validate", "--config", config(name).to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
    }

    let missing = out.path().join("missing.toml");
    assert_eq!(
        run(&["validate", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let text = std::fs::read_to_string(config("table2.toml")).unwrap();
    let bad = out.path().join("bad.toml");
    std::fs::write(
        &bad,
        text.replace("q_min = 0.3", "q_min = 0.3\nq_max = 1.0"),
    )
    .unwrap();
    assert_eq!(
        run(&["run", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let table2 = config("table2.toml");
    let o = run(&[
        "run",
        "--config",
        table2.to_str().unwrap(),
        "--policy",
        "bogus",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "compare",
        "--config",
        table2.to_str().unwrap(),
        "--policies",
        "abs",
    ]);
    assert_eq!(o.status.code(), Some(2));

    // a demanding floor with starved capacity: validate flags it
    let starved = out.path().join("starved.toml");
    std::fs::write(&starved, text.replace("q_min = 0.3", "q_min = 10.0")).unwrap();
    assert_eq!(
        run(&["validate", "--config", starved.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    // output directory below a regular file cannot be created
    let file = out.path().join("plain");
    std::fs::write(&file, "").unwrap();
    let target = file.join("sub");
    let o = run(&[
        "run",
        "--config",
        table2.to_str().unwrap(),
        "--horizon",
        "2",
        "--out-dir",
        target.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
