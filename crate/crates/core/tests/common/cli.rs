//! Runs every CLI subcommand on a small configuration.

use std::path::{Path, PathBuf};
use std::process::Command;

use psmt::harness::{ExperimentConfig, FrameSource, PhaseConfig};
use psmt::signal::PreprocessConfig;
use psmt::synth::{SynthConfig, SynthKind};

pub fn small_config() -> ExperimentConfig {
    let synth = SynthConfig {
        width: 16,
        height: 16,
        ..SynthConfig::default()
    };
    let mut cfg = ExperimentConfig {
        seeds: vec![0],
        frames: FrameSource::Synthetic {
            kind: SynthKind::Grating,
            length: 120,
            synth: synth.clone(),
        },
        preprocess: PreprocessConfig {
            downsample_factor: 2,
            patch_side: 4,
            constant_patch_epsilon: 1e-8,
        },
        ..ExperimentConfig::default()
    };
    cfg.coding.dict_learn_epochs = 2;
    cfg.grid.m_values = vec![20, 24];
    cfg.prediction.m = 20;
    cfg.prediction.k = 3;
    cfg.prediction.phases = vec![PhaseConfig {
        name: "dynamic".into(),
        source: FrameSource::Synthetic {
            kind: SynthKind::Grating,
            length: 80,
            synth: SynthConfig {
                grating_rotation: 0.05,
                ..synth
            },
        },
        start: None,
    }];
    cfg
}

fn run(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_psmt"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("spawning psmt: {e}"))?;
    if !out.status.success() {
        return Err(format!("psmt {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

/// Runs the whole pipeline inside `root` and returns the subcommands run.
pub fn run_pipeline(root: &Path) -> Result<Vec<&'static str>, String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    psmt::io::write_json(&root.join("config.json"), &small_config()).map_err(|e| e.to_string())?;
    let c = ["--config", "config.json", "--threads", "1"];
    let with = |rest: &[&'static str]| -> Vec<&str> { c.iter().copied().chain(rest.iter().copied()).collect() };
    run(&with(&["synth", "--frames", "120", "--out", "synth/frames.f32"]), root)?;
    run(&with(&["learn-dict", "--frames", "synth/frames.f32", "--M", "20", "--out", "dict"]), root)?;
    run(
        &with(&["reconstruct", "--frames", "synth/frames.f32", "--dict", "dict/dictionary.f32", "--H", "40", "--out", "recon/reconstruction.csv"]),
        root,
    )?;
    run(&with(&["--out-dir", "sweep", "sweep"]), root)?;
    run(&with(&["--out-dir", "compare", "predict"]), root)?;
    run(
        &with(&[
            "predict", "--frames", "synth/frames.f32", "--dict", "dict/dictionary.f32", "--T", "100", "--H", "40", "--K", "3",
            "--out", "predict",
        ]),
        root,
    )?;
    run(
        &with(&[
            "--out-dir", "topology", "topology", "--dict", "dict/dictionary.f32", "--codes", "dict/codes.f32", "--H", "40",
            "--overlap", "0.9",
        ]),
        root,
    )?;
    Ok(vec!["synth", "learn-dict", "reconstruct", "sweep", "predict", "topology"])
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Runs the pipeline twice and lists files that differ or exist only once.
pub fn determinism_mismatches(base: &Path) -> Result<(usize, Vec<String>), String> {
    let (a, b) = (base.join("a"), base.join("b"));
    run_pipeline(&a)?;
    run_pipeline(&b)?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    let mut bad = Vec::new();
    if fa != fb {
        bad.push(format!("file lists differ: {} vs {}", fa.len(), fb.len()));
    }
    for f in &fa {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).unwrap_or_default();
        if x != y {
            bad.push(f.display().to_string());
        }
    }
    Ok((fa.len(), bad))
}
