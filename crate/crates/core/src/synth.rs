//! Deterministic synthetic frame sequences.
//!
//! Three motion kinds stand in for natural footage: a Gaussian blob
//! translating on a torus, a drifting (and optionally rotating) sinusoidal
//! grating, and a piecewise-static scene that switches abruptly between
//! random stills.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PsmtError, Result};
use crate::signal::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Blob,
    Grating,
    Piecewise,
}

impl std::str::FromStr for SynthKind {
    type Err = PsmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blob" => Ok(SynthKind::Blob),
            "grating" => Ok(SynthKind::Grating),
            "piecewise" => Ok(SynthKind::Piecewise),
            other => Err(invalid(format!(
                "unknown synthetic kind '{other}' (expected blob, grating or piecewise)"
            ))),
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::Blob => "blob",
            SynthKind::Grating => "grating",
            SynthKind::Piecewise => "piecewise",
        })
    }
}

/// Generator settings shared by all kinds. Per-sequence parameters are drawn
/// from the seed within the ranges given here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Blob speed in pixels per frame; `None` draws it from `[0.3, 0.8]`.
    pub blob_speed: Option<f64>,
    pub blob_sigma: f64,
    /// Grating spatial frequency range in cycles per pixel.
    pub grating_freq: (f64, f64),
    /// Grating phase step range in radians per frame.
    pub grating_phase_step: (f64, f64),
    /// Maximum magnitude of the grating rotation rate in radians per frame.
    pub grating_rotation: f64,
    pub contrast: f64,
    /// Frames per still in the piecewise kind.
    pub segment_len: usize,
    /// Uniform per-pixel noise amplitude added to every frame.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            blob_speed: None,
            blob_sigma: 4.0,
            grating_freq: (0.05, 0.11),
            grating_phase_step: (0.15, 0.35),
            grating_rotation: 0.004,
            contrast: 0.8,
            segment_len: 60,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingParams {
    /// Cycles per pixel.
    pub freq: f64,
    pub orientation: f64,
    pub phase: f64,
    pub phase_step: f64,
    pub rotation_step: f64,
    pub contrast: f64,
}

impl GratingParams {
    /// Luminance at pixel `(row, col)` of frame `t`; rotation is about the frame center.
    pub fn value(&self, width: usize, height: usize, row: usize, col: usize, t: usize) -> f64 {
        let theta = self.orientation + self.rotation_step * t as f64;
        let x = col as f64 - (width as f64 - 1.0) / 2.0;
        let y = row as f64 - (height as f64 - 1.0) / 2.0;
        let arg = TAU * self.freq * (x * theta.cos() + y * theta.sin())
            + self.phase
            + self.phase_step * t as f64;
        0.5 + 0.5 * self.contrast * arg.sin()
    }

    pub fn frame(&self, width: usize, height: usize, t: usize) -> Vec<f64> {
        let mut px = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                px.push(self.value(width, height, r, c, t));
            }
        }
        px
    }

    /// Bound on the per-pixel change between consecutive frames.
    pub fn step_bound(&self, width: usize, height: usize) -> f64 {
        let radius = ((width as f64 / 2.0).powi(2) + (height as f64 / 2.0).powi(2)).sqrt();
        0.5 * self.contrast
            * (self.phase_step.abs() + TAU * self.freq * self.rotation_step.abs() * radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub center: (f64, f64),
    pub velocity: (f64, f64),
    pub sigma: f64,
    pub amplitude: f64,
    pub background: f64,
}

impl BlobParams {
    pub fn frame(&self, width: usize, height: usize, t: usize) -> Vec<f64> {
        let cx = self.center.0 + self.velocity.0 * t as f64;
        let cy = self.center.1 + self.velocity.1 * t as f64;
        let mut px = Vec::with_capacity(width * height);
        for r in 0..height {
            let dy = torus_delta(r as f64 - cy, height as f64);
            for c in 0..width {
                let dx = torus_delta(c as f64 - cx, width as f64);
                let d2 = dx * dx + dy * dy;
                px.push(
                    self.background
                        + self.amplitude * (-d2 / (2.0 * self.sigma * self.sigma)).exp(),
                );
            }
        }
        px
    }

    pub fn step_bound(&self) -> f64 {
        let speed = self.velocity.0.hypot(self.velocity.1);
        self.amplitude * speed * (-0.5f64).exp() / self.sigma
    }
}

fn torus_delta(d: f64, period: f64) -> f64 {
    let m = d.rem_euclid(period);
    if m > period / 2.0 {
        m - period
    } else {
        m
    }
}

/// A generated sequence with the per-pixel step bound of its kind
/// (`None` for kinds with abrupt changes).
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<Frame>,
    pub step_bound: Option<f64>,
}

/// Generates `length` frames with default settings.
pub fn generate_synthetic_sequence(kind: SynthKind, length: usize, seed: u64) -> Result<Vec<Frame>> {
    Ok(generate(&SynthConfig::default(), kind, length, seed)?.frames)
}

pub fn generate(cfg: &SynthConfig, kind: SynthKind, length: usize, seed: u64) -> Result<SynthSequence> {
    if length < 3 {
        return Err(invalid(format!("synthetic sequence needs >= 3 frames, got {length}")));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(invalid("synthetic frame size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let noise_bound = 2.0 * cfg.noise;

    let (mut frames, step_bound) = match kind {
        SynthKind::Grating => {
            let g = draw_grating(cfg, &mut rng);
            let frames: Vec<Vec<f64>> = (0..length).map(|t| g.frame(w, h, t)).collect();
            (frames, Some(g.step_bound(w, h) + noise_bound))
        }
        SynthKind::Blob => {
            let b = draw_blob(cfg, &mut rng);
            let frames: Vec<Vec<f64>> = (0..length).map(|t| b.frame(w, h, t)).collect();
            (frames, Some(b.step_bound() + noise_bound))
        }
        SynthKind::Piecewise => {
            let seg = cfg.segment_len.max(1);
            let mut frames = Vec::with_capacity(length);
            let mut still = Vec::new();
            for t in 0..length {
                if t % seg == 0 {
                    still = draw_still(cfg, &mut rng);
                }
                frames.push(still.clone());
            }
            (frames, None)
        }
    };

    if cfg.noise > 0.0 {
        for px in frames.iter_mut().flatten() {
            *px += rng.gen_range(-cfg.noise..=cfg.noise);
        }
    }

    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(t, px)| Frame::new(w, h, t, px))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthSequence { frames, step_bound })
}

fn draw_grating(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> GratingParams {
    let rotation_step = if cfg.grating_rotation > 0.0 {
        rng.gen_range(-cfg.grating_rotation..=cfg.grating_rotation)
    } else {
        0.0
    };
    GratingParams {
        freq: rng.gen_range(cfg.grating_freq.0..=cfg.grating_freq.1),
        orientation: rng.gen_range(0.0..PI),
        phase: rng.gen_range(0.0..TAU),
        phase_step: rng.gen_range(cfg.grating_phase_step.0..=cfg.grating_phase_step.1),
        rotation_step,
        contrast: cfg.contrast,
    }
}

fn draw_blob(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> BlobParams {
    let speed = cfg.blob_speed.unwrap_or_else(|| rng.gen_range(0.3..=0.8));
    let heading = rng.gen_range(0.0..TAU);
    BlobParams {
        center: (
            rng.gen_range(0.0..cfg.width as f64),
            rng.gen_range(0.0..cfg.height as f64),
        ),
        velocity: (speed * heading.cos(), speed * heading.sin()),
        sigma: cfg.blob_sigma,
        amplitude: 0.8,
        background: 0.1,
    }
}

fn draw_still(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = GratingParams {
        rotation_step: 0.0,
        phase_step: 0.0,
        contrast: rng.gen_range(0.3..=cfg.contrast.max(0.3)),
        ..draw_grating(cfg, rng)
    };
    let b = BlobParams {
        amplitude: rng.gen_range(0.1..0.4),
        background: 0.0,
        ..draw_blob(cfg, rng)
    };
    let (w, h) = (cfg.width, cfg.height);
    g.frame(w, h, 0)
        .into_iter()
        .zip(b.frame(w, h, 0))
        .map(|(a, b)| (0.8 * a + b).clamp(0.0, 1.0))
        .collect()
}
