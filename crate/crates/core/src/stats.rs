//! Summary statistics for metric tables.

use crate::error::{invalid, Result};

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("NaN in statistics input"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(v)
}

/// Mean and sample standard deviation after dropping `floor(proportion * n)`
/// values from each tail. The std of a single remaining value is 0.
pub fn trimmed_mean_std(values: &[f64], proportion: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid("trimmed mean of an empty list"));
    }
    if !(0.0..0.5).contains(&proportion) {
        return Err(invalid(format!("trim proportion must be in [0, 0.5), got {proportion}")));
    }
    let v = sorted(values)?;
    let cut = (proportion * v.len() as f64).floor() as usize;
    let kept = &v[cut..v.len() - cut];
    if kept.is_empty() {
        return Err(invalid("nothing left after trimming"));
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let std = if kept.len() > 1 {
        (kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

/// `(median, q1, q3)` with linear interpolation between order statistics.
pub fn median_iqr(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(invalid("median of an empty list"));
    }
    let v = sorted(values)?;
    Ok((
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.25),
        quantile_sorted(&v, 0.75),
    ))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
