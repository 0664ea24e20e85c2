//! File formats.
//!
//! * 8-bit binary graymaps (`P5`), one frame per file, ordered by file name.
//! * Raw little-endian `f32` streams with a JSON sidecar next to them
//!   (`frames.f32` + `frames.json`). Frame streams carry
//!   `{"width", "height", "count"}`; matrices carry `{"kind", "rows", "cols"}`
//!   plus free-form metadata. Values are stored row-major.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, PsmtError, Result};
use crate::signal::Frame;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    /// Directory of `P5` graymaps.
    Pgm,
    /// `f32` stream plus JSON sidecar.
    RawF32,
}

impl FrameFormat {
    /// Directories are graymaps, files are raw streams.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            FrameFormat::Pgm
        } else {
            FrameFormat::RawF32
        }
    }
}

impl std::str::FromStr for FrameFormat {
    type Err = PsmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(FrameFormat::Pgm),
            "raw" | "f32" => Ok(FrameFormat::RawF32),
            other => Err(invalid(format!("unknown frame format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub width: usize,
    pub height: usize,
    pub count: usize,
}

/// Sidecar path for a raw data file: same stem, `.json` extension.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn load_frames(path: &Path, format: FrameFormat) -> Result<Vec<Frame>> {
    if !path.exists() {
        return Err(PsmtError::MissingPath(path.to_path_buf()));
    }
    match format {
        FrameFormat::Pgm => load_pgm_dir(path),
        FrameFormat::RawF32 => load_raw_frames(path),
    }
}

fn load_pgm_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut frames: Vec<Frame> = Vec::with_capacity(files.len());
    for (index, file) in files.iter().enumerate() {
        let (width, height, pixels) = read_pgm(file)?;
        if let Some(first) = frames.first() {
            if (first.width, first.height) != (width, height) {
                return Err(PsmtError::DimensionMismatch {
                    index,
                    got_w: width,
                    got_h: height,
                    want_w: first.width,
                    want_h: first.height,
                });
            }
        }
        frames.push(Frame::new(width, height, index, pixels)?);
    }
    if frames.is_empty() {
        return Err(invalid(format!("no frames found in {}", dir.display())));
    }
    Ok(frames)
}

/// Reads one binary graymap with maxval <= 255; pixels scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let bad = |reason: &str| PsmtError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit graymaps (maxval 1..=255) are supported"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing whitespace after maxval")),
    }
    let data = &bytes[pos..];
    if data.len() < width * height {
        return Err(bad("pixel data shorter than width*height"));
    }
    let scale = 1.0 / maxval as f64;
    let pixels = data[..width * height]
        .iter()
        .map(|&b| (b as f64 * scale).min(1.0))
        .collect();
    Ok((width, height, pixels))
}

/// Writes a frame as an 8-bit graymap, clamping to `[0, 1]` and rounding.
pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(
        frame
            .pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

fn load_raw_frames(data: &Path) -> Result<Vec<Frame>> {
    let side = sidecar_path(data);
    if !side.exists() {
        return Err(PsmtError::MissingPath(side));
    }
    let header: FrameSidecar =
        serde_json::from_slice(&fs::read(&side)?).map_err(|e| PsmtError::MalformedHeader {
            path: side.clone(),
            reason: e.to_string(),
        })?;
    let per = header.width * header.height;
    if per == 0 || header.count == 0 {
        return Err(PsmtError::MalformedHeader {
            path: side,
            reason: "width, height and count must be positive".into(),
        });
    }
    let values = read_f32(data)?;
    if values.len() != per * header.count {
        return Err(PsmtError::MalformedHeader {
            path: side,
            reason: format!(
                "sidecar declares {} values, stream holds {}",
                per * header.count,
                values.len()
            ),
        });
    }
    values
        .chunks_exact(per)
        .enumerate()
        .map(|(i, chunk)| {
            Frame::new(
                header.width,
                header.height,
                i,
                chunk.iter().map(|&v| v as f64).collect(),
            )
        })
        .collect()
}

/// Writes frames as an `f32` stream plus sidecar. All frames must share a size.
pub fn write_raw_frames(data: &Path, frames: &[Frame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| invalid("no frames to write"))?;
    let mut values = Vec::with_capacity(frames.len() * first.pixels.len());
    for (index, f) in frames.iter().enumerate() {
        if (f.width, f.height) != (first.width, first.height) {
            return Err(PsmtError::DimensionMismatch {
                index,
                got_w: f.width,
                got_h: f.height,
                want_w: first.width,
                want_h: first.height,
            });
        }
        values.extend(f.pixels.iter().map(|&p| p as f32));
    }
    write_f32(data, &values)?;
    let header = FrameSidecar {
        width: first.width,
        height: first.height,
        count: frames.len(),
    };
    write_json(&sidecar_path(data), &header)
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(PsmtError::MalformedHeader {
            path: path.to_path_buf(),
            reason: "byte length is not a multiple of 4".into(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(PsmtError::MissingPath(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Sidecar for a stored matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub schema_version: u32,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

/// Stores a matrix row-major as `f32` with its sidecar.
pub fn write_matrix(
    data: &Path,
    kind: &str,
    m: &DMatrix<f64>,
    meta: Map<String, Value>,
) -> Result<()> {
    let mut values = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            values.push(m[(r, c)] as f32);
        }
    }
    write_f32(data, &values)?;
    let side = MatrixSidecar {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        rows: m.nrows(),
        cols: m.ncols(),
        meta,
    };
    write_json(&sidecar_path(data), &side)
}

pub fn read_matrix(data: &Path) -> Result<(DMatrix<f64>, MatrixSidecar)> {
    if !data.exists() {
        return Err(PsmtError::MissingPath(data.to_path_buf()));
    }
    let side_path = sidecar_path(data);
    let side: MatrixSidecar = read_json(&side_path)?;
    let values = read_f32(data)?;
    if values.len() != side.rows * side.cols {
        return Err(PsmtError::MalformedHeader {
            path: side_path,
            reason: format!(
                "sidecar declares {}x{}, stream holds {} values",
                side.rows,
                side.cols,
                values.len()
            ),
        });
    }
    let m = DMatrix::from_row_iterator(side.rows, side.cols, values.iter().map(|&v| v as f64));
    Ok((m, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(w: usize, h: usize, data: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n# made by a test\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn pgm_directory_ordered_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        for (name, val) in [("b.pgm", 255u8), ("a.pgm", 0), ("c.pgm", 51)] {
            fs::write(dir.path().join(name), pgm(2, 2, &[val; 4])).unwrap();
        }
        let frames = load_frames(dir.path(), FrameFormat::Pgm).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(
            frames.iter().map(|f| f.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(frames[0].pixels, vec![0.0; 4]);
        assert_eq!(frames[1].pixels, vec![1.0; 4]);
        assert!((frames[2].pixels[0] - 0.2).abs() < 1e-12);
        assert!(frames.iter().flat_map(|f| &f.pixels).all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn pgm_all_zero() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("f.pgm"), pgm(3, 2, &[0; 6])).unwrap();
        let frames = load_frames(dir.path(), FrameFormat::Pgm).unwrap();
        assert_eq!(frames[0].pixels, vec![0.0; 6]);
    }

    #[test]
    fn pgm_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("0.pgm"), pgm(8, 8, &[0; 64])).unwrap();
        fs::write(dir.path().join("1.pgm"), pgm(4, 4, &[0; 16])).unwrap();
        let err = load_frames(dir.path(), FrameFormat::Pgm).unwrap_err();
        assert!(matches!(err, PsmtError::DimensionMismatch { index: 1, .. }));
    }

    #[test]
    fn pgm_malformed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("0.pgm"), b"P2\n2 2\n255\n0 0 0 0").unwrap();
        assert!(matches!(
            load_frames(dir.path(), FrameFormat::Pgm).unwrap_err(),
            PsmtError::MalformedHeader { .. }
        ));
    }

    #[test]
    fn missing_path() {
        let err = load_frames(Path::new("/nonexistent/frames"), FrameFormat::Pgm).unwrap_err();
        assert!(matches!(err, PsmtError::MissingPath(_)));
    }

    #[test]
    fn raw_sidecar_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("x.f32");
        write_f32(&data, &[0.0; 10]).unwrap();
        write_json(
            &sidecar_path(&data),
            &FrameSidecar {
                width: 2,
                height: 2,
                count: 3,
            },
        )
        .unwrap();
        assert!(matches!(
            load_frames(&data, FrameFormat::RawF32).unwrap_err(),
            PsmtError::MalformedHeader { .. }
        ));
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("m.f32");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -0.5, 0.25, 8.0]);
        let mut meta = Map::new();
        meta.insert("f".into(), Value::from(2));
        write_matrix(&data, "test", &m, meta.clone()).unwrap();
        let (back, side) = read_matrix(&data).unwrap();
        assert_eq!(back, m);
        assert_eq!(side.meta, meta);
        assert_eq!((side.rows, side.cols), (2, 3));
    }
}
