//! Experiment orchestration: the M x H reconstruction grid, reconstruction
//! over time, the three-way prediction comparison and the topology sweep.
//!
//! Every job derives its randomness from the seed stamped into its output
//! rows, and jobs run on the ambient rayon pool with results collected in
//! job order, so outputs do not depend on the thread count.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{solve_window, EmbeddingConfig, EmbeddingMatrix};
use crate::error::{invalid, PsmtError, Result};
use crate::io::{self, FrameFormat};
use crate::predictor::{
    run_prediction, CodeRecovery, LogBase, PredictionMode, PredictionResult, PredictorConfig,
    PredictorState, RecoveryConfig,
};
use crate::signal::{preprocess, Frame, PatchSequence, PreprocessConfig};
use crate::sparse::{
    default_lambda_sc, encode_all, learn_dictionary, reconstruct, CodingConfig, Dictionary,
    SparseCodeMatrix,
};
use crate::stats::{median_iqr, trimmed_mean_std};
use crate::synth::{generate, SynthConfig, SynthKind};
use crate::topology::{build_graph, component_trace, cosine_similarity_columns, SimilarityGraph};

pub use crate::io::SCHEMA_VERSION;

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FrameSource {
    /// Generated per seed.
    Synthetic {
        kind: SynthKind,
        length: usize,
        #[serde(default)]
        synth: SynthConfig,
    },
    /// Loaded once; seeds only affect dictionary initialization.
    File {
        path: PathBuf,
        #[serde(default)]
        format: Option<String>,
    },
}

impl FrameSource {
    pub fn load(&self, seed: u64) -> Result<Vec<Frame>> {
        match self {
            FrameSource::Synthetic {
                kind,
                length,
                synth,
            } => Ok(generate(synth, *kind, *length, seed)?.frames),
            FrameSource::File { path, format } => {
                let fmt = match format {
                    Some(f) => f.parse()?,
                    None => FrameFormat::detect(path),
                };
                io::load_frames(path, fmt)
            }
        }
    }
}

/// Which frames the dictionary is learned from in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictSource {
    /// Once per (M, seed) on the whole sequence.
    Corpus,
    /// Separately on every window's own H frames.
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub m_values: Vec<usize>,
    /// H = round(multiplier * M).
    pub h_multipliers: Vec<f64>,
    /// Window overlap fraction; stride = ceil((1 - overlap) * H).
    pub overlap: f64,
    pub dict_source: DictSource,
    /// Per-tail trim proportion for the headline trimmed mean.
    pub trim: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            m_values: vec![96, 128],
            h_multipliers: vec![2.0, 3.0],
            overlap: 0.75,
            dict_source: DictSource::Corpus,
            trim: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub name: String,
    pub source: FrameSource,
    /// First predicted-from frame T; `None` picks the last feasible start.
    pub start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionExperimentConfig {
    pub m: usize,
    /// Window H = round(multiplier * M).
    pub h_multiplier: f64,
    pub k: usize,
    /// Derivative operator used by the prediction loop. Boundary rows pull
    /// the newest embedded code toward zero, which biases extrapolation, so
    /// they are dropped here unless this is set to false.
    pub interior_only: bool,
    pub phases: Vec<PhaseConfig>,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            name: "dynamic".into(),
            source: FrameSource::Synthetic {
                kind: SynthKind::Grating,
                length: 600,
                synth: SynthConfig {
                    grating_rotation: 0.05,
                    ..SynthConfig::default()
                },
            },
            start: None,
        }
    }
}

impl Default for PredictionExperimentConfig {
    fn default() -> Self {
        Self {
            m: 96,
            h_multiplier: 2.0,
            k: 10,
            interior_only: true,
            phases: vec![
                PhaseConfig {
                    name: "static".into(),
                    source: FrameSource::Synthetic {
                        kind: SynthKind::Piecewise,
                        length: 600,
                        synth: SynthConfig {
                            segment_len: 40,
                            ..SynthConfig::default()
                        },
                    },
                    start: Some(565),
                },
                PhaseConfig::default(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub threshold: f64,
    pub overlap: f64,
    pub items: Vec<usize>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            overlap: 63.0 / 64.0,
            items: vec![0, 1, 2],
        }
    }
}

/// Top-level JSON configuration shared by the CLI subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub frames: FrameSource,
    pub preprocess: PreprocessConfig,
    pub coding: CodingConfig,
    /// Encoder L1 weight; `None` means `0.1 * mean(||x||) / sqrt(N)`.
    pub lambda_sc: Option<f64>,
    pub embedding: EmbeddingConfig,
    pub recovery: RecoveryConfig,
    pub log_base: LogBase,
    pub grid: GridConfig,
    pub prediction: PredictionExperimentConfig,
    pub topology: TopologyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seeds: vec![0, 1, 2],
            frames: FrameSource::Synthetic {
                kind: SynthKind::Grating,
                length: 2000,
                synth: SynthConfig::default(),
            },
            preprocess: PreprocessConfig {
                downsample_factor: 2,
                patch_side: 8,
                constant_patch_epsilon: 1e-8,
            },
            coding: CodingConfig::default(),
            lambda_sc: None,
            embedding: EmbeddingConfig::default(),
            recovery: RecoveryConfig::default(),
            log_base: LogBase::Natural,
            grid: GridConfig::default(),
            prediction: PredictionExperimentConfig::default(),
            topology: TopologyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = io::read_json(path)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Coding config with the encoder weight resolved for `patches`.
    pub fn coding_for(&self, patches: &PatchSequence) -> CodingConfig {
        CodingConfig {
            lambda_sc: self.lambda_sc.unwrap_or_else(|| default_lambda_sc(patches)),
            ..self.coding
        }
    }

    pub fn predictor_config(&self, coding: CodingConfig) -> PredictorConfig {
        PredictorConfig {
            embedding: EmbeddingConfig {
                interior_only: self.prediction.interior_only,
                ..self.embedding
            },
            recovery: self.recovery,
            coding,
            log_base: self.log_base,
        }
    }

    /// Checks the grid before any work: N < M < H for every pair and H fits
    /// in `frames` when given.
    pub fn validate_grid(&self, frames: Option<usize>) -> Result<Vec<(usize, usize)>> {
        let n = self.preprocess.patch_len();
        if !(0.0..1.0).contains(&self.grid.overlap) {
            return Err(invalid(format!("overlap must be in [0, 1), got {}", self.grid.overlap)));
        }
        let mut pairs = Vec::new();
        for &m in &self.grid.m_values {
            for &mult in &self.grid.h_multipliers {
                let h = (mult * m as f64).round() as usize;
                if !(n < m && m < h) {
                    return Err(invalid(format!(
                        "grid pair (M = {m}, H = {h}) violates N = {n} < M < H"
                    )));
                }
                if let Some(total) = frames {
                    if h > total {
                        return Err(invalid(format!("H = {h} exceeds {total} frames")));
                    }
                }
                pairs.push((m, h));
            }
        }
        if pairs.is_empty() {
            return Err(invalid("empty grid"));
        }
        Ok(pairs)
    }
}

/// Window start positions for a sequence of `total` items.
pub fn window_starts(total: usize, h: usize, overlap: f64) -> Vec<usize> {
    let stride = (((1.0 - overlap) * h as f64).ceil() as usize).max(1);
    let mut out = Vec::new();
    let mut s = 0;
    while s + h <= total {
        out.push(s);
        s += stride;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMse {
    pub frame: usize,
    pub mse: f64,
    /// Recovery hit its iteration cap; such frames are left out of aggregates.
    pub failed: bool,
}

/// Per-frame MSE of reconstructing each patch through the embedding:
/// `beta = P a`, non-negative recovery of a code from `beta`, then `Phi`.
pub fn reconstruct_window_mse(
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    embedding: &EmbeddingMatrix,
    patches: &PatchSequence,
    recovery: &RecoveryConfig,
) -> Result<Vec<FrameMse>> {
    if codes.width() != patches.len() {
        return Err(invalid(format!(
            "{} codes for {} patches",
            codes.width(),
            patches.len()
        )));
    }
    let solver = CodeRecovery::new(embedding, recovery)?;
    (0..codes.width())
        .into_par_iter()
        .map(|i| {
            let beta = &embedding.p * codes.codes().column(i);
            let rec = solver.recover(&beta)?;
            let x_hat = reconstruct(dict, &rec.code)?;
            let x = &patches.patches[i];
            let mse = x_hat
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / x.len() as f64;
            Ok(FrameMse {
                frame: codes.frame_indices()[i],
                mse,
                failed: !rec.converged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub schema_version: u32,
    pub m: usize,
    pub h: usize,
    pub seed: u64,
    pub window_start: usize,
    pub window_center: usize,
    pub mse: f64,
    pub failed_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAggregate {
    pub schema_version: u32,
    pub m: usize,
    pub h: usize,
    pub seed: u64,
    pub windows: usize,
    /// Trim `trim` from each tail.
    pub trimmed_mean: f64,
    pub trimmed_std: f64,
    /// Trim `trim` in total (half per tail).
    pub trimmed_total_mean: f64,
    pub trimmed_total_std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lambda_sc: f64,
    pub f: usize,
}

/// Seed-averaged aggregate of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub m: usize,
    pub h: usize,
    pub seeds: usize,
    pub mean_trimmed_mean: f64,
    pub mean_median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<GridRow>,
    pub aggregates: Vec<GridAggregate>,
    pub trim: f64,
}

/// Per-job context the aggregates record alongside the statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobStamp {
    pub lambda_sc: f64,
    pub f: usize,
}

/// Aggregates for every (M, H, seed) group of `rows`, in first-appearance order.
pub fn aggregate_rows(rows: &[GridRow], trim: f64, stamps: &[((usize, usize, u64), JobStamp)]) -> Result<Vec<GridAggregate>> {
    let mut keys: Vec<(usize, usize, u64)> = Vec::new();
    for r in rows {
        let k = (r.m, r.h, r.seed);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .map(|&(m, h, seed)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| (r.m, r.h, r.seed) == (m, h, seed))
                .map(|r| r.mse)
                .filter(|v| v.is_finite())
                .collect();
            let (tm, ts) = trimmed_mean_std(&values, trim)?;
            let (tt, tts) = trimmed_mean_std(&values, trim / 2.0)?;
            let (med, q1, q3) = median_iqr(&values)?;
            let stamp = stamps
                .iter()
                .find(|(k, _)| *k == (m, h, seed))
                .map(|(_, s)| *s)
                .unwrap_or(JobStamp {
                    lambda_sc: f64::NAN,
                    f: 0,
                });
            Ok(GridAggregate {
                schema_version: SCHEMA_VERSION,
                m,
                h,
                seed,
                windows: values.len(),
                trimmed_mean: tm,
                trimmed_std: ts,
                trimmed_total_mean: tt,
                trimmed_total_std: tts,
                median: med,
                q1,
                q3,
                lambda_sc: stamp.lambda_sc,
                f: stamp.f,
            })
        })
        .collect()
}

impl MetricsTable {
    /// Recomputes the aggregates from the table's own rows.
    pub fn recompute(&self) -> Result<Vec<GridAggregate>> {
        let stamps: Vec<_> = self
            .aggregates
            .iter()
            .map(|a| {
                (
                    (a.m, a.h, a.seed),
                    JobStamp {
                        lambda_sc: a.lambda_sc,
                        f: a.f,
                    },
                )
            })
            .collect();
        aggregate_rows(&self.rows, self.trim, &stamps)
    }

    /// Seed-averaged trimmed means and medians per (M, H).
    pub fn summary(&self) -> Vec<GridSummary> {
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for a in &self.aggregates {
            if !keys.contains(&(a.m, a.h)) {
                keys.push((a.m, a.h));
            }
        }
        keys.into_iter()
            .map(|(m, h)| {
                let group: Vec<&GridAggregate> =
                    self.aggregates.iter().filter(|a| (a.m, a.h) == (m, h)).collect();
                let n = group.len() as f64;
                GridSummary {
                    m,
                    h,
                    seeds: group.len(),
                    mean_trimmed_mean: group.iter().map(|a| a.trimmed_mean).sum::<f64>() / n,
                    mean_median: group.iter().map(|a| a.median).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("grid_windows.csv"), &self.rows)?;
        write_csv(&dir.join("grid_aggregates.csv"), &self.aggregates)?;
        write_csv(&dir.join("grid_summary.csv"), &self.summary())?;
        Ok(())
    }

    pub fn read(dir: &Path, trim: f64) -> Result<Self> {
        Ok(Self {
            rows: read_csv(&dir.join("grid_windows.csv"))?,
            aggregates: read_csv(&dir.join("grid_aggregates.csv"))?,
            trim,
        })
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(PsmtError::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(PsmtError::from)).collect()
}

/// Learns a dictionary on `patches` and returns it with the codes of `patches`.
fn learn(patches: &PatchSequence, m: usize, coding: &CodingConfig, seed: u64) -> Result<(Dictionary, SparseCodeMatrix)> {
    let learned = learn_dictionary(patches, m, coding, seed)?;
    Ok((learned.dict, learned.codes))
}

/// Mean MSE over one window plus the number of frames left out.
fn window_mse(
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    patches: &PatchSequence,
    cfg: &ExperimentConfig,
) -> Result<(f64, usize)> {
    let embedding = solve_window(codes, &cfg.embedding)?;
    let per_frame = reconstruct_window_mse(dict, codes, &embedding, patches, &cfg.recovery)?;
    let ok: Vec<f64> = per_frame.iter().filter(|f| !f.failed).map(|f| f.mse).collect();
    let failed = per_frame.len() - ok.len();
    let mse = crate::stats::mean(&ok).unwrap_or(f64::NAN);
    Ok((mse, failed))
}

/// Runs the M x H grid over every seed.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    let pairs = cfg.validate_grid(None)?;
    if cfg.seeds.is_empty() {
        return Err(invalid("no seeds configured"));
    }
    // one job per (M, seed); all H values of that M share its frames
    let ms: Vec<usize> = cfg.grid.m_values.clone();
    let jobs: Vec<(usize, u64)> = ms
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let results: Vec<Result<(Vec<GridRow>, Vec<((usize, usize, u64), JobStamp)>)>> = jobs
        .par_iter()
        .map(|&(m, seed)| {
            let frames = cfg.frames.load(seed)?;
            let patches = preprocess(&frames, &cfg.preprocess)?;
            let coding = cfg.coding_for(&patches);
            let f = cfg.embedding.dim_for(m);
            let corpus = match cfg.grid.dict_source {
                DictSource::Corpus => Some(learn(&patches, m, &coding, seed)?),
                DictSource::Window => None,
            };
            let mut rows = Vec::new();
            let mut stamps = Vec::new();
            for &(pm, h) in pairs.iter().filter(|(pm, _)| *pm == m) {
                if h > patches.len() {
                    return Err(invalid(format!("H = {h} exceeds {} frames", patches.len())));
                }
                for start in window_starts(patches.len(), h, cfg.grid.overlap) {
                    let win = patches.slice(start, h)?;
                    let (mse, failed) = match &corpus {
                        Some((dict, codes)) => {
                            window_mse(dict, &codes.window(start, h)?, &win, cfg)?
                        }
                        None => {
                            let (dict, codes) = learn(&win, m, &coding, seed)?;
                            window_mse(&dict, &codes, &win, cfg)?
                        }
                    };
                    rows.push(GridRow {
                        schema_version: SCHEMA_VERSION,
                        m: pm,
                        h,
                        seed,
                        window_start: patches.start_index + start,
                        window_center: patches.start_index + start + h / 2,
                        mse,
                        failed_frames: failed,
                    });
                }
                stamps.push((
                    (pm, h, seed),
                    JobStamp {
                        lambda_sc: coding.lambda_sc,
                        f,
                    },
                ));
            }
            Ok((rows, stamps))
        })
        .collect();

    let mut rows = Vec::new();
    let mut stamps = Vec::new();
    for r in results {
        let (r, s) = r?;
        rows.extend(r);
        stamps.extend(s);
    }
    // order rows by (M, H, seed, window) independent of job layout
    rows.sort_by(|a, b| {
        (a.m, a.h, a.seed, a.window_start).cmp(&(b.m, b.h, b.seed, b.window_start))
    });
    let aggregates = aggregate_rows(&rows, cfg.grid.trim, &stamps)?;
    Ok(MetricsTable {
        rows,
        aggregates,
        trim: cfg.grid.trim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub schema_version: u32,
    pub phase: String,
    pub seed: u64,
    pub mode: PredictionMode,
    pub k: usize,
    pub frame: usize,
    pub log_mse: f64,
    pub log_mse_raw: f64,
    pub recovery_objective: f64,
    pub kkt_residual: f64,
    pub lambda_rec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummaryRow {
    pub schema_version: u32,
    pub phase: String,
    pub seed: u64,
    pub mode: PredictionMode,
    pub t_start: usize,
    pub h: usize,
    pub k: usize,
    pub mean_log_mse: f64,
    pub lambda_sc: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseRun {
    pub phase: String,
    pub seed: u64,
    pub t_start: usize,
    pub lambda_sc: f64,
    pub results: Vec<PredictionResult>,
}

#[derive(Debug, Clone)]
pub struct PredictionComparison {
    pub runs: Vec<PhaseRun>,
    pub rows: Vec<PredictionRow>,
    pub summary: Vec<PredictionSummaryRow>,
}

impl PredictionComparison {
    /// Mean log-MSE of `mode` in `phase` for `seed`.
    pub fn mean_for(&self, phase: &str, seed: u64, mode: PredictionMode) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.phase == phase && r.seed == seed && r.mode == mode)
            .map(|r| r.mean_log_mse)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("prediction_steps.csv"), &self.rows)?;
        write_csv(&dir.join("prediction_summary.csv"), &self.summary)?;
        Ok(())
    }
}

/// Everything one prediction run needs: dictionary learned on the frames
/// before T, the training codes of the H - 1 frames before T, and the future
/// patches from T on.
#[derive(Debug, Clone)]
pub struct PreparedPhase {
    pub dict: Dictionary,
    pub training_codes: SparseCodeMatrix,
    pub future: PatchSequence,
    pub coding: CodingConfig,
    pub t_start: usize,
    pub h: usize,
}

pub fn prepare_phase(
    cfg: &ExperimentConfig,
    phase: &PhaseConfig,
    seed: u64,
) -> Result<PreparedPhase> {
    let pc = &cfg.prediction;
    let frames = phase.source.load(seed)?;
    let patches = preprocess(&frames, &cfg.preprocess)?;
    let h = (pc.h_multiplier * pc.m as f64).round() as usize;
    let total = patches.len();
    if total < pc.k + 2 {
        return Err(invalid("sequence too short for prediction"));
    }
    let t = phase.start.unwrap_or(total - pc.k - 1);
    if t + pc.k + 1 > total {
        return Err(invalid(format!(
            "phase '{}': T = {t} with K = {} runs past {total} frames",
            phase.name, pc.k
        )));
    }
    if t < h {
        return Err(invalid(format!("phase '{}': T = {t} leaves fewer than H = {h} past frames", phase.name)));
    }
    let past = patches.slice(0, t)?;
    let coding = cfg.coding_for(&past);
    let learned = learn_dictionary(&past, pc.m, &coding, seed)?;
    let training_codes = learned.codes.window(t - (h - 1), h - 1)?;
    let future = patches.slice(t, total - t)?;
    Ok(PreparedPhase {
        dict: learned.dict,
        training_codes,
        future,
        coding,
        t_start: t,
        h,
    })
}

/// Runs every mode on every phase and seed with shared dictionaries.
pub fn run_prediction_comparison(cfg: &ExperimentConfig) -> Result<PredictionComparison> {
    let pc = &cfg.prediction;
    if pc.k == 0 {
        return Err(invalid("K must be >= 1"));
    }
    let jobs: Vec<(&PhaseConfig, u64)> = pc
        .phases
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs: Vec<PhaseRun> = jobs
        .par_iter()
        .map(|&(phase, seed)| {
            let prep = prepare_phase(cfg, phase, seed)?;
            let pcfg = cfg.predictor_config(prep.coding);
            let results = PredictionMode::ALL
                .iter()
                .map(|&mode| {
                    let mut state = PredictorState::new(
                        prep.dict.clone(),
                        prep.training_codes.clone(),
                        prep.h,
                        mode,
                        &pcfg,
                    )?;
                    run_prediction(&mut state, &prep.future, pc.k, &pcfg)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PhaseRun {
                phase: phase.name.clone(),
                seed,
                t_start: prep.t_start,
                lambda_sc: prep.coding.lambda_sc,
                results,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for run in &runs {
        for res in &run.results {
            for s in &res.steps {
                rows.push(PredictionRow {
                    schema_version: SCHEMA_VERSION,
                    phase: run.phase.clone(),
                    seed: run.seed,
                    mode: res.mode,
                    k: s.k,
                    frame: s.frame,
                    log_mse: s.log_mse,
                    log_mse_raw: s.log_mse_raw,
                    recovery_objective: s.recovery_objective,
                    kkt_residual: s.kkt_residual,
                    lambda_rec: s.lambda_rec,
                });
            }
            summary.push(PredictionSummaryRow {
                schema_version: SCHEMA_VERSION,
                phase: run.phase.clone(),
                seed: run.seed,
                mode: res.mode,
                t_start: run.t_start,
                h: (pc.h_multiplier * pc.m as f64).round() as usize,
                k: pc.k,
                mean_log_mse: res.mean_log_mse,
                lambda_sc: run.lambda_sc,
            });
        }
    }
    Ok(PredictionComparison {
        runs,
        rows,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub schema_version: u32,
    pub window_center: usize,
    pub frame: usize,
    pub mse: f64,
    pub failed: bool,
}

/// Per-frame reconstruction MSE for every window of `h` codes.
pub fn reconstruction_over_time(
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    patches: &PatchSequence,
    h: usize,
    overlap: f64,
    cfg: &ExperimentConfig,
) -> Result<Vec<ReconstructionRow>> {
    if codes.width() != patches.len() {
        return Err(invalid("codes and patches differ in length"));
    }
    let mut rows = Vec::new();
    for start in window_starts(codes.width(), h, overlap) {
        let win = codes.window(start, h)?;
        let emb = solve_window(&win, &cfg.embedding)?;
        let per = reconstruct_window_mse(dict, &win, &emb, &patches.slice(start, h)?, &cfg.recovery)?;
        for f in per {
            rows.push(ReconstructionRow {
                schema_version: SCHEMA_VERSION,
                window_center: emb.center_time,
                frame: f.frame,
                mse: f.mse,
                failed: f.failed,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub window_center: usize,
    pub item_id: usize,
    pub component_size: usize,
}

/// Similarity graphs of sliding-window embeddings and the component trace of
/// the selected items.
pub fn run_topology(
    codes: &SparseCodeMatrix,
    h: usize,
    embedding: &EmbeddingConfig,
    topo: &TopologyConfig,
) -> Result<(Vec<SimilarityGraph>, Vec<TraceRow>)> {
    if !(0.0..1.0).contains(&topo.overlap) {
        return Err(invalid("overlap must be in [0, 1)"));
    }
    let starts = window_starts(codes.width(), h, topo.overlap);
    if starts.is_empty() {
        return Err(invalid(format!("window H = {h} exceeds {} codes", codes.width())));
    }
    let graphs = starts
        .par_iter()
        .map(|&s| {
            let emb = solve_window(&codes.window(s, h)?, embedding)?;
            build_graph(&cosine_similarity_columns(&emb), topo.threshold, emb.center_time)
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = component_trace(&graphs, &topo.items)?;
    let mut rows = Vec::new();
    for (t, sizes) in trace.times.iter().zip(&trace.sizes) {
        for (&item, &size) in trace.items.iter().zip(sizes) {
            rows.push(TraceRow {
                window_center: *t,
                item_id: item,
                component_size: size,
            });
        }
    }
    Ok((graphs, rows))
}

/// Predicted patches of a run as one `f32` matrix (one row per step).
pub fn predicted_patch_matrix(result: &PredictionResult) -> nalgebra::DMatrix<f64> {
    let n = result.steps.first().map(|s| s.predicted.len()).unwrap_or(0);
    nalgebra::DMatrix::from_fn(result.steps.len(), n, |r, c| result.steps[r].predicted[c])
}

/// Codes as a matrix over a dictionary, for tests and CLI plumbing.
pub fn codes_from_columns(columns: &[DVector<f64>], start: usize) -> Result<SparseCodeMatrix> {
    let m = columns.first().map(|c| c.len()).unwrap_or(0);
    let a = nalgebra::DMatrix::from_fn(m, columns.len(), |r, c| columns[c][r]);
    SparseCodeMatrix::with_start(a, start)
}

/// Encodes every patch with an existing dictionary.
pub fn encode_sequence(dict: &Dictionary, patches: &PatchSequence, coding: &CodingConfig) -> Result<SparseCodeMatrix> {
    Ok(encode_all(dict, patches, coding)?.codes)
}
