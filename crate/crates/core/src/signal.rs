//! Frames and the patch preprocessing chain: block-mean downsampling, center
//! patch extraction and per-patch standardization.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PsmtError, Result};

/// A grayscale frame with row-major luminance values.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub index: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, index: usize, pixels: Vec<f64>) -> Result<Self> {
        if width * height == 0 {
            return Err(invalid("frame must have at least one pixel"));
        }
        if pixels.len() != width * height {
            return Err(PsmtError::ShapeMismatch(format!(
                "frame {index}: {} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(PsmtError::NonFinite("frame pixels"));
        }
        Ok(Self {
            width,
            height,
            index,
            pixels,
        })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub downsample_factor: usize,
    pub patch_side: usize,
    /// Patches whose standard deviation falls below this are zeroed and flagged.
    pub constant_patch_epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            downsample_factor: 1,
            patch_side: 16,
            constant_patch_epsilon: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }
}

/// Standardized patches in source frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patches: Vec<Vec<f64>>,
    /// `constant[i]` is set when patch `i` had (near) zero variance.
    pub constant: Vec<bool>,
    pub patch_len: usize,
    pub start_index: usize,
}

impl PatchSequence {
    pub fn new(patches: Vec<Vec<f64>>, start_index: usize) -> Result<Self> {
        let patch_len = patches.first().map(Vec::len).unwrap_or(0);
        if let Some((i, p)) = patches.iter().enumerate().find(|(_, p)| p.len() != patch_len) {
            return Err(PsmtError::ShapeMismatch(format!(
                "patch {i} has length {}, expected {patch_len}",
                p.len()
            )));
        }
        let constant = vec![false; patches.len()];
        Ok(Self {
            patches,
            constant,
            patch_len,
            start_index,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Sub-sequence `[start, start + len)` by position.
    pub fn slice(&self, start: usize, len: usize) -> Result<PatchSequence> {
        if start + len > self.len() {
            return Err(invalid(format!(
                "slice [{start}, {}) exceeds {} patches",
                start + len,
                self.len()
            )));
        }
        Ok(PatchSequence {
            patches: self.patches[start..start + len].to_vec(),
            constant: self.constant[start..start + len].to_vec(),
            patch_len: self.patch_len,
            start_index: self.start_index + start,
        })
    }

    /// Column-per-patch matrix (N x W).
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.patch_len, self.len(), |r, c| self.patches[c][r])
    }
}

/// Block-mean downsampling by an integer factor.
pub fn downsample(frame: &Frame, factor: usize) -> Result<Frame> {
    if factor == 0 || !frame.width.is_multiple_of(factor) || !frame.height.is_multiple_of(factor) {
        return Err(invalid(format!(
            "downsample factor {factor} does not divide {}x{}",
            frame.width, frame.height
        )));
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let (w, h) = (frame.width / factor, frame.height / factor);
    let scale = 1.0 / (factor * factor) as f64;
    let mut pixels = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            for dr in 0..factor {
                let row = (r * factor + dr) * frame.width + c * factor;
                sum += frame.pixels[row..row + factor].iter().sum::<f64>();
            }
            pixels.push(sum * scale);
        }
    }
    Ok(Frame {
        width: w,
        height: h,
        index: frame.index,
        pixels,
    })
}

/// The `side`x`side` window at the frame center, flattened row-major.
///
/// The top-left corner is `((height - side) / 2, (width - side) / 2)` with
/// integer division.
pub fn extract_center_patch(frame: &Frame, side: usize) -> Result<Vec<f64>> {
    if side == 0 || side > frame.width.min(frame.height) {
        return Err(invalid(format!(
            "patch side {side} does not fit in {}x{} frame",
            frame.width, frame.height
        )));
    }
    let top = (frame.height - side) / 2;
    let left = (frame.width - side) / 2;
    let mut out = Vec::with_capacity(side * side);
    for r in top..top + side {
        let start = r * frame.width + left;
        out.extend_from_slice(&frame.pixels[start..start + side]);
    }
    Ok(out)
}

/// Result of [`standardize_patch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub constant: bool,
}

/// Zero-mean, unit population-variance standardization.
///
/// Patches with standard deviation below `epsilon` become all zeros and are
/// flagged constant.
pub fn standardize_patch(patch: &[f64], epsilon: f64) -> Result<Standardized> {
    if patch.is_empty() {
        return Err(invalid("cannot standardize an empty patch"));
    }
    if patch.iter().any(|v| !v.is_finite()) {
        return Err(PsmtError::NonFinite("patch"));
    }
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < epsilon {
        return Ok(Standardized {
            values: vec![0.0; patch.len()],
            constant: true,
        });
    }
    Ok(Standardized {
        values: patch.iter().map(|v| (v - mean) / std).collect(),
        constant: false,
    })
}

/// Full chain: downsample, center patch, standardize, for every frame.
pub fn preprocess(frames: &[Frame], cfg: &PreprocessConfig) -> Result<PatchSequence> {
    let first = frames
        .first()
        .ok_or_else(|| invalid("no frames to preprocess"))?;
    let mut patches = Vec::with_capacity(frames.len());
    let mut constant = Vec::with_capacity(frames.len());
    for frame in frames {
        let small = downsample(frame, cfg.downsample_factor)?;
        let raw = extract_center_patch(&small, cfg.patch_side)?;
        let s = standardize_patch(&raw, cfg.constant_patch_epsilon)?;
        patches.push(s.values);
        constant.push(s.constant);
    }
    Ok(PatchSequence {
        patches,
        constant,
        patch_len: cfg.patch_len(),
        start_index: first.index,
    })
}
