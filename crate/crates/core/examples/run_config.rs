//! Runs an experiment file into a temporary directory and lists what it wrote.
//!
//! `cargo run --release --example run_config -- configs/table2.toml`

use std::path::PathBuf;

use bandshare::experiment::{cmd_run, ExperimentConfig, Overrides};

fn main() -> bandshare::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/table2.toml")
        });
    let out = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.apply(&Overrides {
        out_dir: Some(out.path().to_path_buf()),
        ..Overrides::default()
    });
    let report = cmd_run(&cfg)?;
    println!(
        "mean QoE {:.4}, static optimum {:?}",
        report.mean_qoe, report.reference_objective
    );
    for f in &report.files {
        let rows = std::fs::read_to_string(f)?.lines().count();
        println!(
            "{} ({rows} lines)",
            f.strip_prefix(out.path()).unwrap_or(f).display()
        );
    }
    Ok(())
}
