use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{Map, Value};

use psmt::embedding::EmbeddingConfig;
use psmt::harness::{
    encode_sequence, predicted_patch_matrix, reconstruction_over_time, run_grid, run_prediction_comparison,
    run_topology, write_csv, DictSource, ExperimentConfig, FrameSource,
};
use psmt::io::{self, sidecar_path, FrameFormat, MatrixSidecar};
use psmt::predictor::{run_prediction, PredictionMode, PredictorState};
use psmt::signal::preprocess;
use psmt::sparse::{learn_dictionary, CodingConfig, Dictionary, SparseCodeMatrix};
use psmt::synth::{generate, SynthConfig, SynthKind};

#[derive(Parser)]
#[command(name = "psmt", version, about = "Predictive sparse manifold transform experiments")]
struct Cli {
    /// JSON experiment config; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic frame sequence.
    Synth(SynthArgs),
    /// Learn a dictionary from a frame sequence.
    LearnDict(LearnArgs),
    /// Per-frame reconstruction MSE through sliding-window embeddings.
    Reconstruct(ReconstructArgs),
    /// M x H grid of trimmed-mean reconstruction MSE.
    Sweep(SweepArgs),
    /// Predict future frames (or, without --frames, run the configured comparison).
    Predict(PredictArgs),
    /// Similarity graphs and component traces over sliding windows.
    Topology(TopologyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "grating")]
    kind: SynthKind,
    /// Number of frames.
    #[arg(long, default_value_t = 2000)]
    frames: usize,
    /// Raw float32 output; a JSON sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    /// PGM directory or raw float32 file.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long = "M")]
    m: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for dictionary.f32, codes.f32 and training.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long = "H")]
    h: usize,
    #[arg(long, default_value_t = 0.75)]
    overlap: f64,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Proportion trimmed from each tail.
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long, value_parser = parse_dict_source)]
    dict_source: Option<DictSource>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Index of the first predicted frame's predecessor (the first delayed input).
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long = "H")]
    h: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long, default_value = "psmt")]
    mode: PredictionMode,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long = "H")]
    h: usize,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    /// Comma-separated dictionary item ids.
    #[arg(long, value_delimiter = ',')]
    items: Option<Vec<usize>>,
}

fn parse_dict_source(s: &str) -> Result<DictSource, String> {
    match s {
        "corpus" => Ok(DictSource::Corpus),
        "window" => Ok(DictSource::Window),
        _ => Err(format!("unknown dictionary source '{s}' (corpus|window)")),
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring worker threads")?;

    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    std::fs::create_dir_all(&cli.out_dir)?;

    match cli.command {
        Command::Synth(a) => synth(&cfg, a, seed, &cli.out_dir),
        Command::LearnDict(a) => learn(&cfg, a, seed, &cli.out_dir),
        Command::Reconstruct(a) => reconstruct(&cfg, a, &cli.out_dir),
        Command::Sweep(a) => sweep(cfg, a, &cli.out_dir),
        Command::Predict(a) => predict(cfg, a, seed, &cli.out_dir),
        Command::Topology(a) => topology(&cfg, a, &cli.out_dir),
    }
}

fn synth(cfg: &ExperimentConfig, a: SynthArgs, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let synth_cfg = match &cfg.frames {
        FrameSource::Synthetic { synth, .. } => synth.clone(),
        FrameSource::File { .. } => SynthConfig::default(),
    };
    let seq = generate(&synth_cfg, a.kind, a.frames, seed)?;
    let out = a.out.unwrap_or_else(|| out_dir.join("frames.f32"));
    ensure_parent(&out)?;
    io::write_raw_frames(&out, &seq.frames)?;
    info!("wrote {} {} frames to {}", seq.frames.len(), a.kind, out.display());
    Ok(())
}

fn load_patches(cfg: &ExperimentConfig, frames: &Path) -> anyhow::Result<psmt::signal::PatchSequence> {
    let frames = io::load_frames(frames, FrameFormat::detect(frames))?;
    Ok(preprocess(&frames, &cfg.preprocess)?)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    mse: f64,
    dead_atoms: usize,
    mean_active: f64,
    step: f64,
}

fn learn(cfg: &ExperimentConfig, a: LearnArgs, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let patches = load_patches(cfg, &a.frames)?;
    let mut coding = cfg.coding_for(&patches);
    if let Some(e) = a.epochs {
        coding.dict_learn_epochs = e;
    }
    let learned = learn_dictionary(&patches, a.m, &coding, seed)?;
    let out = a.out.unwrap_or_else(|| out_dir.to_path_buf());
    std::fs::create_dir_all(&out)?;
    let mut meta = Map::new();
    meta.insert("seed".into(), Value::from(seed));
    meta.insert("lambda_sc".into(), Value::from(coding.lambda_sc));
    meta.insert("epochs".into(), Value::from(coding.dict_learn_epochs));
    learned.dict.write(&out.join("dictionary.f32"), meta)?;
    learned.codes.write(&out.join("codes.f32"))?;
    let rows: Vec<EpochRow> = learned
        .history
        .iter()
        .map(|h| EpochRow {
            epoch: h.epoch,
            mse: h.mse,
            dead_atoms: h.dead_atoms,
            mean_active: h.mean_active,
            step: h.step,
        })
        .collect();
    write_csv(&out.join("training.csv"), &rows)?;
    info!(
        "learned M = {} over {} patches, final MSE {:.4e}",
        a.m,
        patches.len(),
        rows.last().map(|r| r.mse).unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Dictionary plus the encoder weight it was learned with, when recorded.
fn load_dict(path: &Path) -> anyhow::Result<(Dictionary, Option<f64>)> {
    let dict = Dictionary::read(path).with_context(|| format!("reading dictionary {}", path.display()))?;
    let side: MatrixSidecar = io::read_json(&sidecar_path(path))?;
    Ok((dict, side.meta.get("lambda_sc").and_then(Value::as_f64)))
}

fn coding_with(cfg: &ExperimentConfig, patches: &psmt::signal::PatchSequence, lambda: Option<f64>) -> CodingConfig {
    let mut coding = cfg.coding_for(patches);
    if cfg.lambda_sc.is_none() {
        if let Some(l) = lambda {
            coding.lambda_sc = l;
        }
    }
    coding
}

fn with_f(cfg: &EmbeddingConfig, f: Option<usize>) -> EmbeddingConfig {
    EmbeddingConfig {
        f: f.or(cfg.f),
        ..*cfg
    }
}

fn reconstruct(cfg: &ExperimentConfig, a: ReconstructArgs, out_dir: &Path) -> anyhow::Result<()> {
    let patches = load_patches(cfg, &a.frames)?;
    let (dict, lambda) = load_dict(&a.dict)?;
    let coding = coding_with(cfg, &patches, lambda);
    let codes = encode_sequence(&dict, &patches, &coding)?;
    let mut run_cfg = cfg.clone();
    run_cfg.embedding = with_f(&cfg.embedding, a.f);
    let rows = reconstruction_over_time(&dict, &codes, &patches, a.h, a.overlap, &run_cfg)?;
    let out = a.out.unwrap_or_else(|| out_dir.join("reconstruction.csv"));
    ensure_parent(&out)?;
    write_csv(&out, &rows)?;
    info!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn sweep(mut cfg: ExperimentConfig, a: SweepArgs, out_dir: &Path) -> anyhow::Result<()> {
    if let Some(t) = a.trim {
        cfg.grid.trim = t;
    }
    if let Some(s) = a.dict_source {
        cfg.grid.dict_source = s;
    }
    let table = run_grid(&cfg)?;
    table.write(out_dir)?;
    io::write_json(&out_dir.join("config.json"), &cfg)?;
    info!("wrote {} window rows to {}", table.rows.len(), out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct StepRow {
    k: usize,
    frame: usize,
    mode: PredictionMode,
    seed: u64,
    log_mse: f64,
    log_mse_raw: f64,
    recovery_objective: f64,
    kkt_residual: f64,
    recovery_converged: bool,
    lambda_rec: f64,
    window_first: usize,
    window_last: usize,
}

fn predict(mut cfg: ExperimentConfig, a: PredictArgs, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    if let Some(f) = a.f {
        cfg.embedding.f = Some(f);
    }
    if let Some(l) = a.lambda_rec {
        cfg.recovery.lambda_rec = Some(l);
    }
    if let Some(k) = a.k {
        cfg.prediction.k = k;
    }
    let Some(frames) = a.frames else {
        if a.dict.is_some() || a.t.is_some() {
            bail!("--dict and --T need --frames; without --frames the configured comparison runs");
        }
        let cmp = run_prediction_comparison(&cfg)?;
        cmp.write(out_dir)?;
        io::write_json(&out_dir.join("config.json"), &cfg)?;
        info!("wrote prediction comparison to {}", out_dir.display());
        return Ok(());
    };
    let (Some(dict_path), Some(t)) = (a.dict, a.t) else {
        bail!("--frames needs --dict and --T");
    };
    let patches = load_patches(&cfg, &frames)?;
    let (dict, lambda) = load_dict(&dict_path)?;
    let h = a.h.unwrap_or((cfg.prediction.h_multiplier * dict.m() as f64).round() as usize);
    let k = cfg.prediction.k;
    if h < 2 || t + 1 < h {
        bail!("T = {t} leaves fewer than H - 1 = {} past frames", h.saturating_sub(1));
    }
    if t + k + 1 > patches.len() {
        bail!("T = {t} with K = {k} needs {} frames, have {}", t + k + 1, patches.len());
    }
    let coding = coding_with(&cfg, &patches.slice(0, t)?, lambda);
    let training = encode_sequence(&dict, &patches.slice(t + 1 - h, h - 1)?, &coding)?;
    let future = patches.slice(t, patches.len() - t)?;
    let pcfg = cfg.predictor_config(coding);
    let mut state = PredictorState::new(dict, training, h, a.mode, &pcfg)?;
    let result = run_prediction(&mut state, &future, k, &pcfg)?;

    let out = a.out.unwrap_or_else(|| out_dir.to_path_buf());
    std::fs::create_dir_all(&out)?;
    let rows: Vec<StepRow> = result
        .steps
        .iter()
        .map(|s| StepRow {
            k: s.k,
            frame: s.frame,
            mode: a.mode,
            seed,
            log_mse: s.log_mse,
            log_mse_raw: s.log_mse_raw,
            recovery_objective: s.recovery_objective,
            kkt_residual: s.kkt_residual,
            recovery_converged: s.recovery_converged,
            lambda_rec: s.lambda_rec,
            window_first: s.window_frames.0,
            window_last: s.window_frames.1,
        })
        .collect();
    write_csv(&out.join("prediction_steps.csv"), &rows)?;
    let mut meta = Map::new();
    meta.insert("mode".into(), Value::from(a.mode.to_string()));
    meta.insert("T".into(), Value::from(t));
    meta.insert("H".into(), Value::from(h));
    meta.insert("K".into(), Value::from(k));
    meta.insert("seed".into(), Value::from(seed));
    meta.insert("mean_log_mse".into(), Value::from(result.mean_log_mse));
    io::write_matrix(&out.join("predicted.f32"), "predicted_patches", &predicted_patch_matrix(&result), meta)?;
    info!("{} mean log-MSE over {k} steps: {:.4}", a.mode, result.mean_log_mse);
    Ok(())
}

fn topology(cfg: &ExperimentConfig, a: TopologyArgs, out_dir: &Path) -> anyhow::Result<()> {
    let (dict, _) = load_dict(&a.dict)?;
    let codes = SparseCodeMatrix::read(&a.codes).with_context(|| format!("reading codes {}", a.codes.display()))?;
    if codes.m() != dict.m() {
        bail!("codes have {} rows, dictionary has {} atoms", codes.m(), dict.m());
    }
    let mut topo = cfg.topology.clone();
    if let Some(t) = a.threshold {
        topo.threshold = t;
    }
    if let Some(o) = a.overlap {
        topo.overlap = o;
    }
    if let Some(items) = a.items {
        topo.items = items;
    }
    let emb = with_f(&cfg.embedding, a.f);
    let (graphs, trace) = run_topology(&codes, a.h, &emb, &topo)?;
    let dot_dir = out_dir.join("graphs");
    std::fs::create_dir_all(&dot_dir)?;
    for g in &graphs {
        std::fs::write(dot_dir.join(format!("window_{:06}.dot", g.center_time)), g.to_dot(&topo.items))?;
    }
    write_csv(&out_dir.join("trace.csv"), &trace)?;
    info!("wrote {} graphs and trace for items {:?}", graphs.len(), topo.items);
    Ok(())
}

fn ensure_parent(p: &Path) -> anyhow::Result<()> {
    if let Some(d) = p.parent() {
        if !d.as_os_str().is_empty() {
            std::fs::create_dir_all(d)?;
        }
    }
    Ok(())
}
