//! Non-negative sparse coding over an overcomplete dictionary.
//!
//! Codes solve the non-negative lasso
//!
//! ```text
//! min_a  1/2 ||x - Phi a||^2 + lambda * sum(a)    s.t.  a >= 0
//! ```
//!
//! by cyclic coordinate descent on the Gram matrix. The dictionary is learned
//! by alternating full encodes with a ridge-regularized least-squares
//! (method of optimal directions) update, followed by column renormalization.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, shape, PsmtError, Result};
use crate::io;
use crate::signal::PatchSequence;

const UNIT_NORM_TOL: f64 = 1e-8;

/// N x M matrix of unit-norm atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps `atoms`, which must be finite with unit-norm columns.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(PsmtError::NonFinite("dictionary"));
        }
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(invalid("dictionary must have at least one atom"));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(invalid(format!("atom {j} has norm {n}, expected 1")));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalizes every column; zero columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if n == 0.0 || !n.is_finite() {
                return Err(invalid(format!("atom {j} cannot be normalized")));
            }
            col /= n;
        }
        Self::new(atoms)
    }

    /// Input (pixel) dimension N.
    pub fn n(&self) -> usize {
        self.atoms.nrows()
    }

    /// Atom count M.
    pub fn m(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_overcomplete(&self) -> bool {
        self.n() < self.m()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.atoms.transpose() * &self.atoms
    }

    pub fn write(&self, data: &std::path::Path, meta: Map<String, Value>) -> Result<()> {
        io::write_matrix(data, "dictionary", &self.atoms, meta)
    }

    /// Reads a stored dictionary; columns are renormalized since storage is
    /// single precision.
    pub fn read(data: &std::path::Path) -> Result<Self> {
        let (atoms, side) = io::read_matrix(data)?;
        if side.kind != "dictionary" {
            return Err(invalid(format!("{} holds a '{}', not a dictionary", data.display(), side.kind)));
        }
        Self::from_unnormalized(atoms)
    }
}

/// M x W non-negative codes, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeMatrix {
    codes: DMatrix<f64>,
    frame_indices: Vec<usize>,
}

impl SparseCodeMatrix {
    pub fn new(codes: DMatrix<f64>, frame_indices: Vec<usize>) -> Result<Self> {
        if codes.ncols() != frame_indices.len() {
            return Err(shape(format!(
                "{} code columns but {} frame indices",
                codes.ncols(),
                frame_indices.len()
            )));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(PsmtError::NonFinite("sparse codes"));
        }
        if codes.iter().any(|&v| v < 0.0) {
            return Err(invalid("sparse codes must be non-negative"));
        }
        Ok(Self {
            codes,
            frame_indices,
        })
    }

    /// Codes with consecutive frame indices starting at `start`.
    pub fn with_start(codes: DMatrix<f64>, start: usize) -> Result<Self> {
        let w = codes.ncols();
        Self::new(codes, (start..start + w).collect())
    }

    pub fn codes(&self) -> &DMatrix<f64> {
        &self.codes
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn m(&self) -> usize {
        self.codes.nrows()
    }

    pub fn width(&self) -> usize {
        self.codes.ncols()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.codes.column(i).into_owned()
    }

    /// Appends one code column.
    pub fn push(&mut self, code: &DVector<f64>, frame_index: usize) -> Result<()> {
        if code.len() != self.m() {
            return Err(shape(format!("code length {} != M = {}", code.len(), self.m())));
        }
        if code.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(invalid("appended code must be finite and non-negative"));
        }
        let w = self.width();
        self.codes = std::mem::replace(&mut self.codes, DMatrix::zeros(0, 0)).insert_column(w, 0.0);
        self.codes.set_column(w, code);
        self.frame_indices.push(frame_index);
        Ok(())
    }

    /// The `len` columns starting at position `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<SparseCodeMatrix> {
        if len == 0 || start + len > self.width() {
            return Err(invalid(format!(
                "window [{start}, {}) outside {} code columns",
                start + len,
                self.width()
            )));
        }
        Ok(SparseCodeMatrix {
            codes: self.codes.columns(start, len).into_owned(),
            frame_indices: self.frame_indices[start..start + len].to_vec(),
        })
    }

    /// The most recent `len` columns.
    pub fn tail(&self, len: usize) -> Result<SparseCodeMatrix> {
        if len > self.width() {
            return Err(invalid(format!(
                "asked for {len} most recent codes, only {} available",
                self.width()
            )));
        }
        self.window(self.width() - len, len)
    }

    pub fn write(&self, data: &std::path::Path) -> Result<()> {
        let mut meta = Map::new();
        meta.insert("frame_indices".into(), Value::from(self.frame_indices.clone()));
        io::write_matrix(data, "codes", &self.codes, meta)
    }

    pub fn read(data: &std::path::Path) -> Result<Self> {
        let (codes, side) = io::read_matrix(data)?;
        if side.kind != "codes" {
            return Err(invalid(format!("{} holds a '{}', not codes", data.display(), side.kind)));
        }
        let frame_indices = match side.meta.get("frame_indices") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => (0..codes.ncols()).collect(),
        };
        Self::new(codes, frame_indices)
    }

    /// Mean number of strictly positive entries per column.
    pub fn mean_support(&self) -> f64 {
        if self.width() == 0 {
            return 0.0;
        }
        self.codes.iter().filter(|&&v| v > 0.0).count() as f64 / self.width() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodingConfig {
    /// L1 weight of the encoder.
    pub lambda_sc: f64,
    /// Coordinate-descent sweep cap per encode.
    pub max_iters: usize,
    /// KKT residual at which an encode stops.
    pub tolerance: f64,
    pub dict_learn_epochs: usize,
    /// Atoms whose largest code over an epoch stays below this are re-seeded.
    pub dead_atom_threshold: f64,
    /// Ridge added to `A A^T` in the dictionary update.
    pub ridge: f64,
}

impl Default for CodingConfig {
    fn default() -> Self {
        Self {
            lambda_sc: 0.1,
            max_iters: 5000,
            tolerance: 1e-7,
            dict_learn_epochs: 10,
            dead_atom_threshold: 1e-6,
            ridge: 1e-6,
        }
    }
}

impl CodingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda_sc > 0.0) || !self.lambda_sc.is_finite() {
            return Err(invalid(format!("lambda_sc must be > 0, got {}", self.lambda_sc)));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// `0.1 * mean(||x||_2) / sqrt(N)` over the non-constant patches; 0.1 for
/// standardized patches.
pub fn default_lambda_sc(patches: &PatchSequence) -> f64 {
    let norms: Vec<f64> = patches
        .patches
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .filter(|&n| n > 0.0)
        .collect();
    if norms.is_empty() || patches.patch_len == 0 {
        return 0.1;
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    0.1 * mean / (patches.patch_len as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutcome {
    pub code: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
    /// False when the sweep cap was hit before the KKT tolerance; `code` is
    /// then the best iterate found.
    pub converged: bool,
}

/// Coordinate-descent encoder with a cached Gram matrix.
#[derive(Debug, Clone)]
pub struct SparseEncoder<'a> {
    dict: &'a Dictionary,
    gram: DMatrix<f64>,
    lambda: f64,
    tolerance: f64,
    max_iters: usize,
}

impl<'a> SparseEncoder<'a> {
    pub fn new(dict: &'a Dictionary, cfg: &CodingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            dict,
            gram: dict.gram(),
            lambda: cfg.lambda_sc,
            tolerance: cfg.tolerance,
            max_iters: cfg.max_iters.max(1),
        })
    }

    pub fn encode(&self, patch: &[f64]) -> Result<EncodeOutcome> {
        self.encode_from(patch, None)
    }

    /// Encodes starting from `warm` instead of zero.
    pub fn encode_from(&self, patch: &[f64], warm: Option<&DVector<f64>>) -> Result<EncodeOutcome> {
        let m = self.dict.m();
        if patch.len() != self.dict.n() {
            return Err(shape(format!(
                "patch length {} != dictionary input dimension {}",
                patch.len(),
                self.dict.n()
            )));
        }
        if patch.iter().any(|v| !v.is_finite()) {
            return Err(PsmtError::NonFinite("patch"));
        }
        let x = DVector::from_column_slice(patch);
        let c = self.dict.atoms().tr_mul(&x);
        let mut alpha = match warm {
            Some(w) if w.len() == m => w.map(|v| v.max(0.0)),
            Some(w) => return Err(shape(format!("warm start length {} != {m}", w.len()))),
            None => DVector::zeros(m),
        };
        let zero_objective = 0.5 * x.norm_squared();
        let mut grad = &self.gram * &alpha - &c;

        let mut sweeps = 0;
        let mut residual = kkt(&alpha, &grad, self.lambda);
        let mut last_support: Vec<usize> = Vec::new();
        while residual > self.tolerance && sweeps < self.max_iters {
            for j in 0..m {
                let gj = grad[j] + self.lambda;
                let old = alpha[j];
                if old == 0.0 && gj >= 0.0 {
                    continue;
                }
                let new = (old - gj / self.gram[(j, j)]).max(0.0);
                let delta = new - old;
                if delta != 0.0 {
                    alpha[j] = new;
                    grad.axpy(delta, &self.gram.column(j), 1.0);
                }
            }
            sweeps += 1;
            // refresh to keep the certificate free of accumulated rounding
            grad = &self.gram * &alpha - &c;
            residual = kkt(&alpha, &grad, self.lambda);

            // Once the support settles, try the exact solution on it.
            let support: Vec<usize> = (0..m).filter(|&j| alpha[j] > 0.0).collect();
            if residual > self.tolerance && !support.is_empty() && support == last_support {
                let mut accepted = false;
                if let Some(exact) = self.solve_on_support(&support, &c) {
                    let g = &self.gram * &exact - &c;
                    let r = kkt(&exact, &g, self.lambda);
                    if r < residual {
                        alpha = exact;
                        grad = g;
                        residual = r;
                        accepted = true;
                    }
                }
                if !accepted {
                    if let Some(reduced) = self.drop_dependent_atom(&support, &alpha) {
                        if self.objective(&x, &reduced) <= self.objective(&x, &alpha) {
                            alpha = reduced;
                            grad = &self.gram * &alpha - &c;
                            residual = kkt(&alpha, &grad, self.lambda);
                        }
                    }
                }
            }
            last_support = (0..m).filter(|&j| alpha[j] > 0.0).collect();
        }

        let mut objective = self.objective(&x, &alpha);
        if objective > zero_objective {
            alpha.fill(0.0);
            objective = zero_objective;
            residual = kkt(&alpha, &(-&c), self.lambda);
        }
        Ok(EncodeOutcome {
            code: alpha,
            objective,
            kkt_residual: residual,
            sweeps,
            converged: residual <= self.tolerance,
        })
    }

    /// Stationary point of the lasso restricted to `support`, if it is
    /// strictly positive there and the restricted Gram matrix is definite.
    fn solve_on_support(&self, support: &[usize], c: &DVector<f64>) -> Option<DVector<f64>> {
        let k = support.len();
        if k > self.dict.n() {
            return None;
        }
        let g = DMatrix::from_fn(k, k, |r, q| self.gram[(support[r], support[q])]);
        let rhs = DVector::from_fn(k, |r, _| c[support[r]] - self.lambda);
        let sol = g.cholesky()?.solve(&rhs);
        if sol.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let mut full = DVector::zeros(self.dict.m());
        for (r, &j) in support.iter().enumerate() {
            full[j] = sol[r];
        }
        Some(full)
    }

    /// With linearly dependent atoms on `support`, moves along a null
    /// direction of the restricted Gram matrix until one coefficient reaches
    /// zero. The reconstruction is unchanged and the L1 term drops.
    fn drop_dependent_atom(&self, support: &[usize], alpha: &DVector<f64>) -> Option<DVector<f64>> {
        let k = support.len();
        if k < 2 {
            return None;
        }
        let g = DMatrix::from_fn(k, k, |r, q| self.gram[(support[r], support[q])]);
        let eig = g.symmetric_eigen();
        let (imin, &lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
        if lmin > 1e-10 * lmax {
            return None;
        }
        let mut v = eig.eigenvectors.column(imin).into_owned();
        let total = v.sum();
        if total.abs() < 1e-12 {
            return None;
        }
        if total < 0.0 {
            v.neg_mut();
        }
        let (hit, step) = (0..k)
            .filter(|&r| v[r] > 0.0)
            .map(|r| (r, alpha[support[r]] / v[r]))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let mut out = alpha.clone();
        for (r, &j) in support.iter().enumerate() {
            out[j] = (alpha[j] - step * v[r]).max(0.0);
        }
        out[support[hit]] = 0.0;
        Some(out)
    }

    fn objective(&self, x: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
        let r = x - self.dict.atoms() * alpha;
        0.5 * r.norm_squared() + self.lambda * alpha.sum()
    }
}

fn kkt(alpha: &DVector<f64>, grad: &DVector<f64>, lambda: f64) -> f64 {
    alpha
        .iter()
        .zip(grad.iter())
        .map(|(&a, &g)| {
            let g = g + lambda;
            if a > 0.0 {
                g.abs()
            } else {
                (-g).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// One-shot encode of a single patch.
pub fn encode(dict: &Dictionary, patch: &[f64], cfg: &CodingConfig) -> Result<EncodeOutcome> {
    SparseEncoder::new(dict, cfg)?.encode(patch)
}

/// Non-negative lasso objective `1/2 ||x - Phi a||^2 + lambda * sum(a)`.
pub fn lasso_objective(dict: &Dictionary, x: &[f64], alpha: &DVector<f64>, lambda: f64) -> f64 {
    let r = DVector::from_column_slice(x) - dict.atoms() * alpha;
    0.5 * r.norm_squared() + lambda * alpha.sum()
}

/// KKT residual of the non-negative lasso, computed directly from the atoms.
pub fn lasso_kkt_residual(dict: &Dictionary, x: &[f64], alpha: &DVector<f64>, lambda: f64) -> f64 {
    let r = dict.atoms() * alpha - DVector::from_column_slice(x);
    let grad = dict.atoms().tr_mul(&r);
    kkt(alpha, &grad, lambda)
}

/// `Phi * code`.
pub fn reconstruct(dict: &Dictionary, code: &DVector<f64>) -> Result<DVector<f64>> {
    if code.len() != dict.m() {
        return Err(shape(format!("code length {} != M = {}", code.len(), dict.m())));
    }
    if code.iter().any(|&v| v < 0.0) {
        return Err(invalid("codes passed to reconstruct must be non-negative"));
    }
    Ok(dict.atoms() * code)
}

/// Codes for every patch plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub codes: SparseCodeMatrix,
    /// Patches whose encode hit the sweep cap.
    pub unconverged: usize,
    pub max_kkt_residual: f64,
}

pub fn encode_all(
    dict: &Dictionary,
    patches: &PatchSequence,
    cfg: &CodingConfig,
) -> Result<EncodedSequence> {
    let encoder = SparseEncoder::new(dict, cfg)?;
    encode_all_with(&encoder, patches, None)
}

fn encode_all_with(
    encoder: &SparseEncoder<'_>,
    patches: &PatchSequence,
    warm: Option<&DMatrix<f64>>,
) -> Result<EncodedSequence> {
    let outcomes = patches
        .patches
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let w = warm.map(|w| w.column(i).into_owned());
            encoder.encode_from(p, w.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let m = encoder.dict.m();
    let mut codes = DMatrix::zeros(m, outcomes.len());
    let mut unconverged = 0;
    let mut max_kkt: f64 = 0.0;
    for (i, o) in outcomes.iter().enumerate() {
        codes.set_column(i, &o.code);
        unconverged += usize::from(!o.converged);
        max_kkt = max_kkt.max(o.kkt_residual);
    }
    Ok(EncodedSequence {
        codes: SparseCodeMatrix::with_start(codes, patches.start_index)?,
        unconverged,
        max_kkt_residual: max_kkt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Training MSE (per pixel) of the dictionary in use after this epoch.
    pub mse: f64,
    pub dead_atoms: usize,
    /// Mean number of active atoms per patch.
    pub mean_active: f64,
    /// Step fraction of the accepted update; 0 when every candidate was rejected.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct LearnedDictionary {
    pub dict: Dictionary,
    pub codes: SparseCodeMatrix,
    /// Entry 0 is the initial dictionary.
    pub history: Vec<EpochStats>,
}

/// Alternating dictionary learning.
///
/// Each epoch proposes the ridge least-squares dictionary for the current
/// codes, re-seeds dead atoms, renormalizes, and re-encodes. A proposal that
/// raises the training MSE is backtracked towards the previous dictionary
/// (halving the step up to four times) and dropped if it still does not
/// improve, so the recorded MSE never increases.
pub fn learn_dictionary(
    patches: &PatchSequence,
    m: usize,
    cfg: &CodingConfig,
    seed: u64,
) -> Result<LearnedDictionary> {
    cfg.validate()?;
    let n = patches.patch_len;
    let w = patches.len();
    if m <= n {
        return Err(invalid(format!(
            "dictionary must be overcomplete: M = {m} <= N = {n}"
        )));
    }
    if w <= m {
        return Err(invalid(format!(
            "need more patches than atoms: W = {w} <= M = {m}"
        )));
    }
    let nonzero: Vec<usize> = (0..w)
        .filter(|&i| patches.patches[i].iter().any(|&v| v != 0.0))
        .collect();
    if nonzero.is_empty() {
        return Err(invalid("all training patches are zero"));
    }

    let x = patches.to_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = nonzero.clone();
    order.shuffle(&mut rng);
    let mut init = DMatrix::zeros(n, m);
    for j in 0..m {
        init.set_column(j, &x.column(order[j % order.len()]));
    }
    let mut dict = Dictionary::from_unnormalized(init)?;

    let mut encoded = {
        let enc = SparseEncoder::new(&dict, cfg)?;
        encode_all_with(&enc, patches, None)?
    };
    let mut mse = training_mse(&x, &dict, encoded.codes.codes());
    let mut history = vec![EpochStats {
        epoch: 0,
        mse,
        dead_atoms: 0,
        mean_active: mean_active(encoded.codes.codes()),
        step: 0.0,
    }];

    for epoch in 1..=cfg.dict_learn_epochs {
        let a = encoded.codes.codes();
        let (target, dead) = mod_update(&x, a, &dict, cfg)?;
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..5 {
            let blended = if step == 1.0 {
                target.clone()
            } else {
                dict.atoms() * (1.0 - step) + &target * step
            };
            let Ok(candidate) = Dictionary::from_unnormalized(blended) else {
                step *= 0.5;
                continue;
            };
            let enc = SparseEncoder::new(&candidate, cfg)?;
            let cand_codes = encode_all_with(&enc, patches, Some(a))?;
            let cand_mse = training_mse(&x, &candidate, cand_codes.codes.codes());
            if cand_mse <= mse {
                accepted = Some((candidate, cand_codes, cand_mse));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((d, c, e)) => {
                dict = d;
                encoded = c;
                mse = e;
                history.push(EpochStats {
                    epoch,
                    mse,
                    dead_atoms: dead,
                    mean_active: mean_active(encoded.codes.codes()),
                    step,
                });
                log::debug!("epoch {epoch}: MSE {mse:.4e}, {:.2} active atoms per patch", history[epoch].mean_active);
            }
            None => {
                history.push(EpochStats {
                    epoch,
                    mse,
                    dead_atoms: dead,
                    mean_active: mean_active(encoded.codes.codes()),
                    step: 0.0,
                });
                log::debug!("dictionary learning stalled at epoch {epoch}");
                break;
            }
        }
    }

    Ok(LearnedDictionary {
        dict,
        codes: encoded.codes,
        history,
    })
}

fn mean_active(a: &DMatrix<f64>) -> f64 {
    a.iter().filter(|&&v| v > 0.0).count() as f64 / a.ncols().max(1) as f64
}

/// Ridge least-squares dictionary for fixed codes with dead atoms re-seeded
/// from the worst-reconstructed patches. Columns are not yet normalized.
fn mod_update(
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    dict: &Dictionary,
    cfg: &CodingConfig,
) -> Result<(DMatrix<f64>, usize)> {
    let m = a.nrows();
    let mut gram = a * a.transpose();
    for i in 0..m {
        gram[(i, i)] += cfg.ridge;
    }
    // (A A^T + rI) Phi^T = A X^T
    let rhs = a * x.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| invalid("code Gram matrix is not positive definite"))?;
    let mut target = chol.solve(&rhs).transpose();

    let usage: Vec<f64> = a.row_iter().map(|r| r.max()).collect();
    let dead: Vec<usize> = (0..m)
        .filter(|&j| usage[j] < cfg.dead_atom_threshold || target.column(j).norm() < 1e-12)
        .collect();
    if !dead.is_empty() {
        let residual = x - dict.atoms() * a;
        let mut worst: Vec<(usize, f64)> = residual
            .column_iter()
            .enumerate()
            .map(|(i, r)| (i, r.norm_squared()))
            .filter(|&(i, _)| x.column(i).norm() > 0.0)
            .collect();
        worst.sort_by(|p, q| q.1.partial_cmp(&p.1).expect("finite residual").then(p.0.cmp(&q.0)));
        for (k, &j) in dead.iter().enumerate() {
            let (i, _) = worst[k % worst.len()];
            target.set_column(j, &x.column(i));
        }
    }
    Ok((target, dead.len()))
}

/// Mean squared reconstruction error per pixel.
pub fn training_mse(x: &DMatrix<f64>, dict: &Dictionary, codes: &DMatrix<f64>) -> f64 {
    let r = x - dict.atoms() * codes;
    r.norm_squared() / r.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64) -> CodingConfig {
        CodingConfig {
            lambda_sc: lambda,
            tolerance: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn zero_patch_zero_code() {
        let d = Dictionary::from_unnormalized(DMatrix::from_fn(3, 5, |r, c| (r + 2 * c + 1) as f64))
            .unwrap();
        let out = encode(&d, &[0.0; 3], &cfg(0.1)).unwrap();
        assert_eq!(out.code, DVector::zeros(5));
        assert!(out.converged);
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let d = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        let (c, lambda) = (2.5, 0.3);
        let mut x = vec![0.0; 4];
        x[2] = c;
        let out = encode(&d, &x, &cfg(lambda)).unwrap();
        // grid oracle over the single active coordinate
        let best = (0..=300_000)
            .map(|i| i as f64 * 1e-5)
            .map(|a| (a, 0.5 * (c - a).powi(2) + lambda * a))
            .fold((0.0, f64::INFINITY), |b, p| if p.1 < b.1 { p } else { b });
        assert!((best.0 - (c - lambda)).abs() < 1e-5);
        let mut want = DVector::zeros(4);
        want[2] = c - lambda;
        assert!((out.code - want).norm() < 1e-12);
    }

    #[test]
    fn reconstruct_unit_and_linearity() {
        let d = Dictionary::from_unnormalized(DMatrix::from_fn(3, 4, |r, c| ((r * 4 + c) % 5) as f64 + 0.5))
            .unwrap();
        assert_eq!(reconstruct(&d, &DVector::zeros(4)).unwrap(), DVector::zeros(3));
        let e1 = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(reconstruct(&d, &e1).unwrap(), d.atoms().column(1).into_owned());
        let a1 = DVector::from_vec(vec![0.2, 0.0, 1.5, 0.3]);
        let a2 = DVector::from_vec(vec![0.0, 0.7, 0.1, 2.0]);
        let sum = reconstruct(&d, &(&a1 + &a2)).unwrap();
        let parts = reconstruct(&d, &a1).unwrap() + reconstruct(&d, &a2).unwrap();
        assert!((sum - parts).norm() < 1e-12);
        assert!(reconstruct(&d, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn dictionary_rejects_non_unit_columns() {
        assert!(Dictionary::new(DMatrix::from_element(2, 3, 1.0)).is_err());
        assert!(Dictionary::from_unnormalized(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn learn_rejects_bad_sizes() {
        let patches = PatchSequence::new(vec![vec![1.0, -1.0]; 10], 0).unwrap();
        assert!(learn_dictionary(&patches, 2, &CodingConfig::default(), 0).is_err());
        assert!(learn_dictionary(&patches, 10, &CodingConfig::default(), 0).is_err());
        let zeros = PatchSequence::new(vec![vec![0.0, 0.0]; 10], 0).unwrap();
        assert!(learn_dictionary(&zeros, 4, &CodingConfig::default(), 0).is_err());
    }

    #[test]
    fn code_matrix_push_and_tail() {
        let mut c = SparseCodeMatrix::with_start(DMatrix::from_element(2, 3, 1.0), 5).unwrap();
        c.push(&DVector::from_vec(vec![2.0, 0.0]), 8).unwrap();
        assert_eq!(c.width(), 4);
        let t = c.tail(2).unwrap();
        assert_eq!(t.frame_indices(), &[7, 8]);
        assert_eq!(t.column(1), DVector::from_vec(vec![2.0, 0.0]));
        assert!(c.push(&DVector::from_vec(vec![-1.0, 0.0]), 9).is_err());
        assert!(SparseCodeMatrix::with_start(DMatrix::from_element(2, 2, -1.0), 0).is_err());
    }

    #[test]
    fn default_lambda_for_standardized_patches() {
        let p = crate::signal::standardize_patch(&[1.0, 2.0, 4.0, 8.0], 1e-8).unwrap();
        let seq = PatchSequence::new(vec![p.values; 3], 0).unwrap();
        assert!((default_lambda_sc(&seq) - 0.1).abs() < 1e-12);
    }
}
