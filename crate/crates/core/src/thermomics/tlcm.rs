//! Thermal-level co-occurrence matrices and their Haralick statistics.

use std::f64::consts::PI;

use super::ThermomicsError;
use crate::thermal_data::Mask;
use crate::Matrix;

/// Offset directions, measured counter-clockwise from the +column axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlcmAngle {
    Zero,
    QuarterPi,
    HalfPi,
    ThreeQuarterPi,
    Pi,
}

impl TlcmAngle {
    pub const ALL: [TlcmAngle; 5] = [TlcmAngle::Zero, TlcmAngle::QuarterPi, TlcmAngle::HalfPi, TlcmAngle::ThreeQuarterPi, TlcmAngle::Pi];

    pub fn radians(self) -> f64 {
        match self {
            TlcmAngle::Zero => 0.0,
            TlcmAngle::QuarterPi => PI / 4.0,
            TlcmAngle::HalfPi => PI / 2.0,
            TlcmAngle::ThreeQuarterPi => 3.0 * PI / 4.0,
            TlcmAngle::Pi => PI,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TlcmAngle::Zero => "0",
            TlcmAngle::QuarterPi => "π/4",
            TlcmAngle::HalfPi => "π/2",
            TlcmAngle::ThreeQuarterPi => "3π/4",
            TlcmAngle::Pi => "π",
        }
    }

    /// `(Δrow, Δcol)` for a distance, rounded to the pixel grid.
    pub fn offset(self, distance: usize) -> (isize, isize) {
        let t = self.radians();
        let d = distance as f64;
        ((t.sin() * d).round() as isize, (t.cos() * d).round() as isize)
    }
}

pub const STAT_NAMES: [&str; 6] = ["Contrast", "Dissimilarity", "Correlation", "Energy", "Homogeneity", "ASM"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlcmStats {
    pub contrast: f64,
    pub dissimilarity: f64,
    pub correlation: f64,
    pub energy: f64,
    pub homogeneity: f64,
    pub asm: f64,
}

impl TlcmStats {
    /// Values in [`STAT_NAMES`] order.
    pub fn to_array(self) -> [f64; 6] {
        [self.contrast, self.dissimilarity, self.correlation, self.energy, self.homogeneity, self.asm]
    }
}

/// Quantize ROI pixels into `levels` bins over the ROI min–max. Pixels
/// outside the ROI map to `None`. A flat ROI maps to level 0.
pub fn quantize(image: &Matrix, roi: &Mask, levels: usize) -> Vec<Option<usize>> {
    let (rows, cols) = image.shape();
    let values = roi.gather(image);
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = vec![None; rows * cols];
    for (i, j) in roi.pixels() {
        let q = if span > 0.0 { (((image[(i, j)] - lo) / span) * levels as f64) as usize } else { 0 };
        out[i * cols + j] = Some(q.min(levels - 1));
    }
    out
}

/// Symmetric normalized co-occurrence matrix from a quantized image.
pub fn tlcm_quantized(
    quantized: &[Option<usize>],
    rows: usize,
    cols: usize,
    distance: usize,
    angle: TlcmAngle,
    levels: usize,
) -> Result<Matrix, ThermomicsError> {
    if distance == 0 {
        return Err(ThermomicsError::BadOffset(distance));
    }
    let (dr, dc) = angle.offset(distance);
    let mut counts = Matrix::zeros(levels, levels);
    let mut total = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let Some(a) = quantized[i * cols + j] else { continue };
            let (ni, nj) = (i as isize + dr, j as isize + dc);
            if ni < 0 || nj < 0 || ni >= rows as isize || nj >= cols as isize {
                continue;
            }
            let Some(b) = quantized[ni as usize * cols + nj as usize] else { continue };
            counts[(a, b)] += 1.0;
            counts[(b, a)] += 1.0;
            total += 2.0;
        }
    }
    if total == 0.0 {
        return Err(ThermomicsError::NoValidPairs { distance, angle: angle.label() });
    }
    Ok(counts / total)
}

/// Co-occurrence matrix of `image` restricted to `roi`, quantized to
/// `levels` over the ROI range. Pairs leaving the ROI are not counted.
pub fn tlcm(image: &Matrix, roi: &Mask, distance: usize, angle: TlcmAngle, levels: usize) -> Result<Matrix, ThermomicsError> {
    if levels < 2 {
        return Err(ThermomicsError::BadLevels(levels));
    }
    if roi.shape() != image.shape() {
        return Err(ThermomicsError::MaskShape { expected: image.shape(), got: roi.shape() });
    }
    let q = quantize(image, roi, levels);
    tlcm_quantized(&q, image.nrows(), image.ncols(), distance, angle, levels)
}

/// Haralick statistics of a normalized co-occurrence matrix. Correlation of
/// a matrix with zero marginal variance is 1.
pub fn tlcm_features(p: &Matrix) -> Result<TlcmStats, ThermomicsError> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
        return Err(ThermomicsError::NotNormalized(total));
    }
    let n = p.nrows();
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            mu_i += i as f64 * p[(i, j)];
            mu_j += j as f64 * p[(i, j)];
        }
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    let (mut contrast, mut dissimilarity, mut homogeneity, mut asm) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = p[(i, j)];
            let (di, dj) = (i as f64 - mu_i, j as f64 - mu_j);
            var_i += di * di * v;
            var_j += dj * dj * v;
            cov += di * dj * v;
            let diff = i as f64 - j as f64;
            contrast += diff * diff * v;
            dissimilarity += diff.abs() * v;
            homogeneity += v / (1.0 + diff * diff);
            asm += v * v;
        }
    }
    let denom = (var_i * var_j).sqrt();
    let correlation = if denom > 1e-15 { cov / denom } else { 1.0 };
    Ok(TlcmStats { contrast, dissimilarity, correlation, energy: asm.sqrt(), homogeneity, asm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_image_is_single_diagonal_entry() {
        let img = Matrix::from_element(6, 6, 3.0);
        let p = tlcm(&img, &Mask::full(6, 6), 1, TlcmAngle::Zero, 16).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p.iter().filter(|v| **v != 0.0).count(), 1);
        let s = tlcm_features(&p).unwrap();
        assert_eq!((s.contrast, s.dissimilarity, s.asm, s.energy, s.homogeneity, s.correlation), (0.0, 0.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn checkerboard_by_enumeration() {
        // two horizontal pairs (0,1) and (1,0), each counted both ways
        let img = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = tlcm(&img, &Mask::full(2, 2), 1, TlcmAngle::Zero, 2).unwrap();
        assert_eq!(p, Matrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        let s = tlcm_features(&p).unwrap();
        assert_eq!(s.contrast, 1.0);
        assert_eq!(s.dissimilarity, 1.0);
        assert_eq!(s.asm, 0.5);
        assert_abs_diff_eq!(s.correlation, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn pi_equals_zero_under_symmetric_counting() {
        let img = Matrix::from_fn(9, 11, |i, j| ((i * 13 + j * 7) % 10) as f64);
        let roi = Mask::disk(9, 11, (4.0, 5.0), 4.0);
        for d in 1..=5 {
            let a = tlcm(&img, &roi, d, TlcmAngle::Zero, 8).unwrap();
            let b = tlcm(&img, &roi, d, TlcmAngle::Pi, 8).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scaled_matrix_is_not_normalized() {
        let p = Matrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]) * 2.0;
        assert!(matches!(tlcm_features(&p), Err(ThermomicsError::NotNormalized(_))));
    }

    #[test]
    fn pairs_leaving_roi_are_excluded() {
        let img = Matrix::from_row_slice(1, 3, &[0.0, 1.0, 9.0]);
        let roi = Mask::from_fn(1, 3, |_, j| j < 2);
        let p = tlcm(&img, &roi, 1, TlcmAngle::Zero, 2).unwrap();
        assert_eq!(p, Matrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        assert!(matches!(tlcm(&img, &roi, 2, TlcmAngle::Zero, 2), Err(ThermomicsError::NoValidPairs { .. })));
        assert_eq!(tlcm(&img, &roi, 0, TlcmAngle::Zero, 2).unwrap_err(), ThermomicsError::BadOffset(0));
    }

    #[test]
    fn offsets() {
        assert_eq!(TlcmAngle::QuarterPi.offset(1), (1, 1));
        assert_eq!(TlcmAngle::HalfPi.offset(3), (3, 0));
        assert_eq!(TlcmAngle::ThreeQuarterPi.offset(2), (1, -1));
        assert_eq!(TlcmAngle::Pi.offset(4), (0, -4));
    }
}
