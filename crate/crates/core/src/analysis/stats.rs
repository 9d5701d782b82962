//! Rank statistics, ROC, confidence intervals, SNR and Welch's t-test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use super::AnalysisError;
use crate::linalg;
use crate::thermal_data::Mask;
use crate::Matrix;

/// Largest pooled size for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 16;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        sizes.push(j - i + 1);
        i = j + 1;
    }
    sizes
}

/// `U` of the first sample, computed from midranks of the pooled data.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..a.len()].iter().sum();
    let na = a.len() as f64;
    ra - na * (na + 1.0) / 2.0
}

/// Number of rank arrangements giving each `U = 0 … na·nb` under the null.
pub fn exact_u_counts(na: usize, nb: usize) -> Vec<u64> {
    // f[i][j][u]: arrangements of i first-sample and j second-sample items
    let max = na * nb;
    let mut f = vec![vec![vec![0u64; max + 1]; nb + 1]; na + 1];
    for row in f[0].iter_mut() {
        row[0] = 1;
    }
    for i in 1..=na {
        f[i][0][0] = 1;
        for j in 1..=nb {
            for u in 0..=i * j {
                // the largest item belongs to sample a (beats all j) or b
                let from_a = if u >= j { f[i - 1][j][u - j] } else { 0 };
                f[i][j][u] = from_a + f[i][j - 1][u];
            }
        }
    }
    f[na][nb].clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MwuResult {
    pub u: f64,
    pub u_other: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MwuResult, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let u = u_statistic(a, b);
    let u_other = (na * nb) as f64 - u;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ties = tie_sizes(&pooled);
    let tie_free = ties.iter().all(|&t| t == 1);

    if tie_free && na + nb <= EXACT_LIMIT {
        let counts = exact_u_counts(na, nb);
        let total: u64 = counts.iter().sum();
        let u_int = u.round() as usize;
        let lower: u64 = counts[..=u_int].iter().sum();
        let upper: u64 = counts[u_int..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(MwuResult { u, u_other, p_two_sided: p, exact: true });
    }

    let n = (na + nb) as f64;
    let prod = (na * nb) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / (n * (n - 1.0));
    let var = prod / 12.0 * ((n + 1.0) - tie_term);
    let p = if var > 0.0 {
        let z = ((u - prod / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    } else {
        1.0
    };
    Ok(MwuResult { u, u_other, p_two_sided: p, exact: false })
}

fn split_by_label(scores: &[f64], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    if scores.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(AnalysisError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as `U₊ / (n₊ n₋)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, AnalysisError> {
    let (pos, neg) = split_by_label(scores, labels)?;
    Ok(u_statistic(&pos, &neg) / (pos.len() * neg.len()) as f64)
}

/// ROC points `(fpr, tpr)` from `(0,0)` to `(1,1)`, one per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let (pos, neg) = split_by_label(scores, labels)?;
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / nn, tp / np));
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Wilson score interval for `successes / n` at the given normal quantile.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// `10·log₁₀(|μ_S − μ_N|² / σ_N²)`.
pub fn snr_db(mu_s: f64, mu_n: f64, sigma_n: f64) -> Result<f64, AnalysisError> {
    if !(sigma_n > 0.0) {
        return Err(AnalysisError::ZeroNoiseStd);
    }
    Ok(10.0 * ((mu_s - mu_n).powi(2) / (sigma_n * sigma_n)).log10())
}

pub fn snr(image: &Matrix, signal: &Mask, noise: &Mask) -> Result<f64, AnalysisError> {
    for m in [signal, noise] {
        if m.shape() != image.shape() {
            return Err(AnalysisError::MaskShape { expected: image.shape(), got: m.shape() });
        }
    }
    let s = signal.gather(image);
    let n = noise.gather(image);
    if s.is_empty() || n.is_empty() {
        return Err(AnalysisError::EmptyRegion);
    }
    snr_db(linalg::mean(&s), linalg::mean(&n), linalg::std_dev(&n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::EmptySample);
    }
    let var = |x: &[f64]| {
        let m = linalg::mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (va, vb) = (var(a) / a.len() as f64, var(b) / b.len() as f64);
    let diff = linalg::mean(a) - linalg::mean(b);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Ok(TTest { t, df: (a.len() + b.len() - 2) as f64, p_two_sided: p });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| AnalysisError::ZeroNoiseStd)?;
    Ok(TTest { t, df, p_two_sided: (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0) })
}
