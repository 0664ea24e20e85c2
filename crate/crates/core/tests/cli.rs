mod common;

use common::cli::{determinism_mismatches, files_under, run_pipeline};

#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (count, bad) = determinism_mismatches(dir.path()).unwrap();
    assert!(count >= 10, "only {count} output files");
    assert!(bad.is_empty(), "outputs differ between runs: {bad:?}");
}

#[test]
fn pipeline_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path()).unwrap();
    let files: Vec<String> = files_under(dir.path()).iter().map(|p| p.display().to_string()).collect();
    for want in [
        "synth/frames.f32",
        "synth/frames.json",
        "dict/dictionary.f32",
        "dict/codes.f32",
        "dict/training.csv",
        "recon/reconstruction.csv",
        "sweep/grid_windows.csv",
        "sweep/grid_aggregates.csv",
        "sweep/grid_summary.csv",
        "compare/prediction_summary.csv",
        "predict/prediction_steps.csv",
        "predict/predicted.f32",
        "topology/trace.csv",
    ] {
        assert!(files.iter().any(|f| f == want), "missing {want} in {files:?}");
    }
    assert!(files.iter().any(|f| f.starts_with("topology/graphs/window_")));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_psmt"))
        .args(["predict", "--dict", "missing.f32"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
