//! First-order intensity statistics over a set of ROI pixels.

use super::ThermomicsError;

/// Name tokens of [`first_order_features`], in output order.
pub const FIRST_ORDER_TOKENS: [&str; 11] =
    ["10percentile", "90percentile", "max", "min", "median", "mean", "interquartile", "Gray range", "MAD", "std", "skewness"];

/// Name tokens of [`extra_features`], in output order.
pub const EXTRA_TOKENS: [&str; 3] = ["kurtosis", "energy", "entropy"];

/// Bins of the intensity histogram behind the entropy feature.
pub const ENTROPY_BINS: usize = 16;

/// Percentile with linear interpolation between closest ranks of an
/// ascending slice; `p` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn central_moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

/// The 11 statistics named by [`FIRST_ORDER_TOKENS`]. Skewness of a
/// constant sample is 0.
pub fn first_order_features(values: &[f64]) -> Result<[f64; 11], ThermomicsError> {
    if values.len() < 2 {
        return Err(ThermomicsError::TooFewPixels(values.len()));
    }
    let sorted = sorted_copy(values);
    let (mean, m2, m3, _) = central_moments(values);
    let std = m2.sqrt();
    let mad = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / values.len() as f64;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    Ok([
        percentile_sorted(&sorted, 10.0),
        percentile_sorted(&sorted, 90.0),
        max,
        min,
        percentile_sorted(&sorted, 50.0),
        mean,
        percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0),
        max - min,
        mad,
        std,
        skewness,
    ])
}

/// Excess kurtosis, mean square and histogram entropy (bits).
pub fn extra_features(values: &[f64]) -> Result<[f64; 3], ThermomicsError> {
    if values.len() < 2 {
        return Err(ThermomicsError::TooFewPixels(values.len()));
    }
    let (_, m2, _, m4) = central_moments(values);
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    let energy = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let entropy = if hi > lo {
        let mut counts = [0usize; ENTROPY_BINS];
        for v in values {
            let bin = (((v - lo) / (hi - lo)) * ENTROPY_BINS as f64) as usize;
            counts[bin.min(ENTROPY_BINS - 1)] += 1;
        }
        let n = values.len() as f64;
        counts.iter().filter(|c| **c > 0).map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        }).sum()
    } else {
        0.0
    };
    Ok([kurtosis, energy, entropy])
}
