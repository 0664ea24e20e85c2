//! Sliding prediction loop and its static baselines.
//!
//! Each step receives the newest true frame, encodes it, re-solves the
//! embedding on the most recent `H` codes, extrapolates linearly in the
//! embedding (`beta = 2 P a_cur - P a_prev`), recovers a non-negative code
//! from `beta`, and maps it back through the dictionary.
//!
//! Baseline 2 keeps the embedding solved at initialization. Baseline 1 also
//! keeps the last two training codes and therefore predicts the same patch
//! at every step.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{solve_window, EmbeddingConfig, EmbeddingMatrix};
use crate::error::{invalid, shape, PsmtError, Result};
use crate::linalg::{column_norms, power_iteration_gram};
use crate::signal::PatchSequence;
use crate::sparse::{reconstruct, CodingConfig, Dictionary, SparseCodeMatrix, SparseEncoder};

/// MSE floor applied before taking the log.
pub const MSE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

/// `log(max(mean((a - b)^2), 1e-30))`.
pub fn log_mse(a: &[f64], b: &[f64], base: LogBase) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!("log_mse on lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid("log_mse of empty patches"));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    let mse = mse.max(MSE_FLOOR);
    Ok(match base {
        LogBase::Natural => mse.ln(),
        LogBase::Ten => mse.log10(),
    })
}

/// The floor value `log_mse` reports for identical inputs.
pub fn log_mse_floor(base: LogBase) -> f64 {
    match base {
        LogBase::Natural => MSE_FLOOR.ln(),
        LogBase::Ten => MSE_FLOOR.log10(),
    }
}

/// `2 P a_cur - P a_prev`.
pub fn predict_embedding(
    p: &EmbeddingMatrix,
    alpha_current: &DVector<f64>,
    alpha_prev: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = p.m();
    if alpha_current.len() != m || alpha_prev.len() != m {
        return Err(shape(format!(
            "codes of length {} and {} for an embedding with M = {m}",
            alpha_current.len(),
            alpha_prev.len()
        )));
    }
    Ok(&p.p * (alpha_current * 2.0 - alpha_prev))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Penalty weight; `None` means `0.01 * ||beta|| / mean(z)` per call.
    pub lambda_rec: Option<f64>,
    pub tolerance: f64,
    pub max_iters: usize,
    pub power_iters: usize,
    /// Atoms whose embedding column norm is at most this fraction of the
    /// largest are held at zero. Such atoms are barely used in the window,
    /// and their cheap penalty lets them absorb residuals with very large
    /// coefficients. 0 keeps every atom with a non-zero column.
    pub min_column: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            lambda_rec: None,
            tolerance: 1e-7,
            max_iters: 50_000,
            power_iters: 20,
            min_column: 1e-2,
        }
    }
}


#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub code: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
}

/// Non-negative weighted-L1 recovery of a code from an embedded vector:
///
/// ```text
/// min_a ||P a - beta||^2 + lambda * z^T a    s.t.  a >= 0,   z_j = ||P[:, j]||
/// ```
///
/// solved by accelerated projected gradient with step `1/L`. `L` is twice
/// the top eigenvalue of `P P^T` from power iteration, padded by 5% since the
/// iteration approaches it from below. Once the support stops changing the
/// restricted normal equations are tried directly.
#[derive(Debug, Clone)]
pub struct CodeRecovery<'a> {
    p: &'a DMatrix<f64>,
    z: DVector<f64>,
    /// Atoms whose column norm is at most `min_column` of the largest; the
    /// rest are held at zero.
    visible: Vec<bool>,
    lipschitz: f64,
    cfg: RecoveryConfig,
}

impl<'a> CodeRecovery<'a> {
    pub fn new(p: &'a EmbeddingMatrix, cfg: &RecoveryConfig) -> Result<Self> {
        if p.p.iter().any(|v| !v.is_finite()) {
            return Err(PsmtError::NonFinite("embedding matrix"));
        }
        if !(cfg.tolerance > 0.0) {
            return Err(invalid("recovery tolerance must be > 0"));
        }
        if !(0.0..1.0).contains(&cfg.min_column) {
            return Err(invalid(format!("min_column must be in [0, 1), got {}", cfg.min_column)));
        }
        let z = DVector::from_vec(column_norms(&p.p));
        let top = power_iteration_gram(&p.p, cfg.power_iters.max(1));
        let zmax = z.iter().fold(0.0f64, |a, &b| a.max(b));
        let visible = z.iter().map(|&v| v > cfg.min_column * zmax).collect();
        Ok(Self {
            p: &p.p,
            z,
            visible,
            lipschitz: 2.0 * top * 1.05,
            cfg: *cfg,
        })
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    /// The penalty weight used for `beta`.
    pub fn lambda_for(&self, beta: &DVector<f64>) -> f64 {
        self.cfg.lambda_rec.unwrap_or_else(|| {
            let mean_z = self.z.mean();
            if mean_z > 0.0 {
                0.01 * beta.norm() / mean_z
            } else {
                0.0
            }
        })
    }

    pub fn objective(&self, alpha: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
        (self.p * alpha - beta).norm_squared() + lambda * self.z.dot(alpha)
    }

    fn gradient(&self, alpha: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let r = self.p * alpha - beta;
        self.p.tr_mul(&r) * 2.0 + &self.z * lambda
    }

    pub fn kkt_residual(&self, alpha: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
        let g = self.gradient(alpha, beta, lambda);
        alpha
            .iter()
            .zip(g.iter())
            .zip(&self.visible)
            .filter(|(_, &vis)| vis)
            .map(|((&a, &g), _)| if a > 0.0 { g.abs() } else { (-g).max(0.0) })
            .fold(0.0, f64::max)
    }

    /// Stationary point restricted to `support` when it is strictly positive
    /// there and the restricted normal matrix is definite.
    fn solve_on_support(&self, support: &[usize], beta: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let k = support.len();
        if k > self.p.nrows() {
            return None;
        }
        let ps = self.p.select_columns(support);
        let rhs = ps.tr_mul(beta) - DVector::from_fn(k, |r, _| 0.5 * lambda * self.z[support[r]]);
        let sol = ps.tr_mul(&ps).cholesky()?.solve(&rhs);
        if sol.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let mut full = DVector::zeros(self.p.ncols());
        for (r, &j) in support.iter().enumerate() {
            full[j] = sol[r];
        }
        Some(full)
    }

    pub fn recover(&self, beta: &DVector<f64>) -> Result<Recovery> {
        let lambda = self.lambda_for(beta);
        self.recover_with(beta, lambda)
    }

    pub fn recover_with(&self, beta: &DVector<f64>, lambda: f64) -> Result<Recovery> {
        if beta.len() != self.p.nrows() {
            return Err(shape(format!(
                "embedded vector has length {}, embedding has f = {}",
                beta.len(),
                self.p.nrows()
            )));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(PsmtError::NonFinite("embedded vector"));
        }
        if !(lambda >= 0.0) {
            return Err(invalid(format!("lambda_rec must be >= 0, got {lambda}")));
        }
        let m = self.p.ncols();
        let zero = DVector::zeros(m);
        let zero_obj = beta.norm_squared();
        if self.lipschitz == 0.0 {
            return Ok(Recovery {
                kkt_residual: self.kkt_residual(&zero, beta, lambda),
                code: zero,
                objective: zero_obj,
                iterations: 0,
                converged: true,
                lambda,
            });
        }

        let step = 1.0 / self.lipschitz;
        let mut x = zero.clone();
        let mut y = zero;
        let mut theta = 1.0f64;
        let mut best = x.clone();
        let mut best_obj = zero_obj;
        let mut residual = self.kkt_residual(&x, beta, lambda);
        let mut iterations = 0;
        let mut last_support: Vec<usize> = Vec::new();

        while residual > self.cfg.tolerance && iterations < self.cfg.max_iters {
            iterations += 1;
            let g = self.gradient(&y, beta, lambda);
            let mut x_next = (&y - g * step).map(|v| v.max(0.0));
            for (v, &vis) in x_next.iter_mut().zip(&self.visible) {
                if !vis {
                    *v = 0.0;
                }
            }
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = (theta - 1.0) / theta_next;
            let dx = &x_next - &x;
            // gradient-based adaptive restart
            if (&y - &x_next).dot(&dx) > 0.0 {
                theta = 1.0;
                y = x_next.clone();
            } else {
                theta = theta_next;
                y = &x_next + dx * momentum;
            }
            x = x_next;

            if iterations % 10 == 0 || iterations == self.cfg.max_iters {
                let obj = self.objective(&x, beta, lambda);
                if obj <= best_obj {
                    best_obj = obj;
                    best.copy_from(&x);
                }
                residual = self.kkt_residual(&best, beta, lambda);
                let support: Vec<usize> = (0..m).filter(|&j| best[j] > 0.0).collect();
                if residual > self.cfg.tolerance && !support.is_empty() && support == last_support {
                    if let Some(exact) = self.solve_on_support(&support, beta, lambda) {
                        let obj = self.objective(&exact, beta, lambda);
                        let r = self.kkt_residual(&exact, beta, lambda);
                        if obj <= best_obj && r < residual {
                            best_obj = obj;
                            best.copy_from(&exact);
                            x.copy_from(&exact);
                            y.copy_from(&exact);
                            theta = 1.0;
                            residual = r;
                        }
                    }
                }
                last_support = support;
            }
        }
        let residual = self.kkt_residual(&best, beta, lambda);
        Ok(Recovery {
            converged: residual <= self.cfg.tolerance,
            code: best,
            objective: best_obj,
            kkt_residual: residual,
            iterations,
            lambda,
        })
    }
}

/// One-shot recovery with a fixed penalty weight.
pub fn recover_sparse_code(
    p: &EmbeddingMatrix,
    beta: &DVector<f64>,
    lambda_rec: f64,
    cfg: &RecoveryConfig,
) -> Result<Recovery> {
    CodeRecovery::new(p, cfg)?.recover_with(beta, lambda_rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Psmt,
    Baseline1,
    Baseline2,
}

impl PredictionMode {
    pub const ALL: [PredictionMode; 3] = [
        PredictionMode::Psmt,
        PredictionMode::Baseline1,
        PredictionMode::Baseline2,
    ];

    /// The feature switches that define this mode.
    pub fn switches(self) -> ModeSwitches {
        match self {
            PredictionMode::Psmt => ModeSwitches {
                resolve_embedding: true,
                reencode: true,
            },
            PredictionMode::Baseline2 => ModeSwitches {
                resolve_embedding: false,
                reencode: true,
            },
            PredictionMode::Baseline1 => ModeSwitches {
                resolve_embedding: false,
                reencode: false,
            },
        }
    }
}

impl FromStr for PredictionMode {
    type Err = PsmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psmt" => Ok(PredictionMode::Psmt),
            "baseline1" => Ok(PredictionMode::Baseline1),
            "baseline2" => Ok(PredictionMode::Baseline2),
            other => Err(invalid(format!("unknown prediction mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictionMode::Psmt => "psmt",
            PredictionMode::Baseline1 => "baseline1",
            PredictionMode::Baseline2 => "baseline2",
        })
    }
}

/// `resolve_embedding`: re-solve the embedding on the sliding window each
/// step. `reencode`: encode and append each arriving frame. Re-solving
/// without re-encoding is rejected since the window would never move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSwitches {
    pub resolve_embedding: bool,
    pub reencode: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub embedding: EmbeddingConfig,
    pub recovery: RecoveryConfig,
    pub coding: CodingConfig,
    pub log_base: LogBase,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            recovery: RecoveryConfig::default(),
            coding: CodingConfig::default(),
            log_base: LogBase::Natural,
        }
    }
}

/// State carried through the prediction loop.
#[derive(Debug, Clone)]
pub struct PredictorState {
    pub dict: Dictionary,
    /// Grows by one column per step when re-encoding.
    pub codes: SparseCodeMatrix,
    /// Window length H.
    pub window: usize,
    /// Embedding solved on the training window.
    pub initial_embedding: EmbeddingMatrix,
    pub switches: ModeSwitches,
    pub mode: PredictionMode,
    /// Codes Baseline 1 extrapolates from: the last two training codes.
    frozen_pair: (DVector<f64>, DVector<f64>),
    initial_window: (usize, usize),
    steps: usize,
}

impl PredictorState {
    /// `training_codes` are the codes of the frames before T (at least two).
    /// The initial embedding is solved on the most recent `min(H, width)` of them.
    pub fn new(
        dict: Dictionary,
        training_codes: SparseCodeMatrix,
        window: usize,
        mode: PredictionMode,
        cfg: &PredictorConfig,
    ) -> Result<Self> {
        Self::with_switches(dict, training_codes, window, mode, mode.switches(), cfg)
    }

    /// Same as [`PredictorState::new`] with explicit feature switches; `mode`
    /// is only a label.
    pub fn with_switches(
        dict: Dictionary,
        training_codes: SparseCodeMatrix,
        window: usize,
        mode: PredictionMode,
        switches: ModeSwitches,
        cfg: &PredictorConfig,
    ) -> Result<Self> {
        if switches.resolve_embedding && !switches.reencode {
            return Err(invalid("re-solving the embedding requires re-encoding"));
        }
        if training_codes.m() != dict.m() {
            return Err(shape(format!(
                "codes have {} rows, dictionary has {} atoms",
                training_codes.m(),
                dict.m()
            )));
        }
        let w = training_codes.width();
        if w < 3 {
            return Err(invalid("need at least 3 training codes"));
        }
        if window < 3 {
            return Err(invalid(format!("window H must be >= 3, got {window}")));
        }
        let init = training_codes.tail(window.min(w))?;
        let initial_embedding = solve_window(&init, &cfg.embedding)?;
        let fi = init.frame_indices();
        let initial_window = (fi[0], fi[fi.len() - 1]);
        let frozen_pair = (training_codes.column(w - 2), training_codes.column(w - 1));
        Ok(Self {
            dict,
            codes: training_codes,
            window,
            initial_embedding,
            switches,
            mode,
            frozen_pair,
            initial_window,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStep {
    pub k: usize,
    /// Frame index of the predicted frame.
    pub frame: usize,
    pub predicted: DVector<f64>,
    pub recovered_code: DVector<f64>,
    pub beta: DVector<f64>,
    /// Against the reconstruction of the directly-encoded true frame.
    pub log_mse: f64,
    /// Against the standardized input patch itself.
    pub log_mse_raw: f64,
    pub recovery_objective: f64,
    pub kkt_residual: f64,
    pub recovery_converged: bool,
    pub lambda_rec: f64,
    /// Frame indices `[first, last]` of the code window behind the embedding.
    pub window_frames: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub mode: PredictionMode,
    pub steps: Vec<PredictionStep>,
    pub mean_log_mse: f64,
}

/// Runs `k_steps` steps. `future` starts at frame T and must hold
/// `k_steps + 1` patches: the K delayed inputs plus the frame the last step
/// predicts, which is needed to score it.
pub fn run_prediction(
    state: &mut PredictorState,
    future: &PatchSequence,
    k_steps: usize,
    cfg: &PredictorConfig,
) -> Result<PredictionResult> {
    if k_steps == 0 {
        return Err(invalid("K must be >= 1"));
    }
    if future.len() < k_steps + 1 {
        return Err(invalid(format!(
            "future frames exhausted: K = {k_steps} needs {} patches, got {}",
            k_steps + 1,
            future.len()
        )));
    }
    if future.patch_len != state.dict.n() {
        return Err(shape(format!(
            "patches have length {}, dictionary expects {}",
            future.patch_len,
            state.dict.n()
        )));
    }
    let encoder = SparseEncoder::new(&state.dict, &cfg.coding)?;
    // codes of x_T .. x_{T+K}: delayed inputs and scoring targets
    let direct: Vec<DVector<f64>> = future.patches[..=k_steps]
        .iter()
        .map(|p| encoder.encode(p).map(|o| o.code))
        .collect::<Result<_>>()?;

    let mut steps = Vec::with_capacity(k_steps);
    for k in 1..=k_steps {
        let step = predict_step(state, future, &direct, k, cfg)
            .map_err(|e| PsmtError::AtStep {
                step: k,
                source: Box::new(e),
            })?;
        steps.push(step);
        state.steps += 1;
    }
    let mean_log_mse = steps.iter().map(|s| s.log_mse).sum::<f64>() / steps.len() as f64;
    Ok(PredictionResult {
        mode: state.mode,
        steps,
        mean_log_mse,
    })
}

fn predict_step(
    state: &mut PredictorState,
    future: &PatchSequence,
    direct: &[DVector<f64>],
    k: usize,
    cfg: &PredictorConfig,
) -> Result<PredictionStep> {
    let sw = state.switches;
    // receive the delayed input x_{T-1+k}, encode it and append
    let (alpha_prev, alpha_current) = if sw.reencode {
        let prev = state.codes.column(state.codes.width() - 1);
        let current = direct[k - 1].clone();
        state.codes.push(&current, future.start_index + k - 1)?;
        (prev, current)
    } else {
        state.frozen_pair.clone()
    };

    // embedding on the latest H codes
    let fresh;
    let embedding = if sw.resolve_embedding {
        let window = state.codes.tail(state.window.min(state.codes.width()))?;
        fresh = solve_window(&window, &cfg.embedding)?;
        &fresh
    } else {
        &state.initial_embedding
    };
    let window_frames = if sw.resolve_embedding {
        let fi = state.codes.frame_indices();
        let len = state.window.min(fi.len());
        (fi[fi.len() - len], fi[fi.len() - 1])
    } else {
        state.initial_window
    };

    // linear extrapolation
    let beta = predict_embedding(embedding, &alpha_current, &alpha_prev)?;
    // code recovery
    let solver = CodeRecovery::new(embedding, &cfg.recovery)?;
    let rec = solver.recover(&beta)?;
    debug_assert!(rec.code.iter().all(|&v| v >= 0.0));
    // back to pixels
    let predicted = reconstruct(&state.dict, &rec.code)?;

    let target = reconstruct(&state.dict, &direct[k])?;
    let score = log_mse(predicted.as_slice(), target.as_slice(), cfg.log_base)?;
    let score_raw = log_mse(predicted.as_slice(), &future.patches[k], cfg.log_base)?;

    Ok(PredictionStep {
        k,
        frame: future.start_index + k,
        predicted,
        recovered_code: rec.code,
        beta,
        log_mse: score,
        log_mse_raw: score_raw,
        recovery_objective: rec.objective,
        kkt_residual: rec.kkt_residual,
        recovery_converged: rec.converged,
        lambda_rec: rec.lambda,
        window_frames,
    })
}
