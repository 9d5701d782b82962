//! Sparsity measure and membership embedding of a basis set into one
//! avatar image.
//!
//! For bases `β₁ … β_k` (columns of `B`) the membership of basis `i` is the
//! image `η_i = exp((β_i − μ) / σ_i)`, with `μ` the grand mean over all basis
//! entries and `σ_i` the standard deviation of `β_i`. The avatar is
//! `Φ = Σ_i β_i ⊙ η_i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factorization::Method;
use crate::linalg;
use crate::thermal_data::{vector_to_image, RoiMask};
use crate::Matrix;

/// Magnitudes at or below this count as zero in [`sparsity`].
pub const ZERO_EPS: f64 = 1e-12;

/// Bases with a standard deviation below this get `η = 1`.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("bases contain non-finite values")]
    NonFinite,
    #[error("bases have {rows} rows, frames are {m}x{n}")]
    ShapeMismatch { rows: usize, m: usize, n: usize },
    #[error("ROI has no reference region")]
    MissingReference,
    #[error("reference mask is {got:?}, avatar is {expected:?}")]
    MaskShape { expected: (usize, usize), got: (usize, usize) },
}

/// Fraction of entries of `q` that are zero (`|q_ij| ≤ ZERO_EPS`).
pub fn sparsity(q: &Matrix) -> Result<f64, EmbedError> {
    if q.is_empty() {
        return Err(EmbedError::EmptyMatrix);
    }
    let zeros = q.iter().filter(|v| v.abs() <= ZERO_EPS).count();
    Ok(zeros as f64 / q.len() as f64)
}

/// How the membership images are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `Φ = Σ β_i ⊙ η_i`.
    #[default]
    Basis,
    /// `Φ = Σ η_i`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Avatar {
    pub image: Matrix,
    pub source_method: Option<Method>,
    pub normalization: Option<ReferenceStats>,
    /// `image = Φ · e^(−log_scale)`; nonzero only when memberships had to be
    /// rescaled to stay finite.
    pub log_scale: f64,
}

/// Exponents above this are shifted down before exponentiation.
pub const MAX_EXPONENT: f64 = 700.0;

/// Membership images, one column per basis, and the common log-scale `c`
/// they were divided by (`η_stored = η · e^(−c)`; `c = 0` unless the largest
/// exponent exceeds [`MAX_EXPONENT`]).
pub fn membership(bases: &Matrix) -> Result<(Matrix, f64), EmbedError> {
    if bases.is_empty() {
        return Err(EmbedError::EmptyMatrix);
    }
    if bases.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let grand_mean = bases.mean();
    let mut z = Matrix::zeros(bases.nrows(), bases.ncols());
    for (i, col) in bases.column_iter().enumerate() {
        let sigma = linalg::std_dev(col.as_slice());
        if sigma < DEGENERATE_STD {
            continue;
        }
        for (r, v) in col.iter().enumerate() {
            z[(r, i)] = (v - grand_mean) / sigma;
        }
    }
    let top = z.max();
    let log_scale = if top > MAX_EXPONENT { top } else { 0.0 };
    Ok((z.map(|e| (e - log_scale).exp()), log_scale))
}

/// Embed an `MN × k` basis matrix into an `M × N` avatar.
pub fn embed(bases: &Matrix, m: usize, n: usize, weighting: Weighting) -> Result<Avatar, EmbedError> {
    if bases.nrows() != m * n {
        return Err(EmbedError::ShapeMismatch { rows: bases.nrows(), m, n });
    }
    let (eta, log_scale) = membership(bases)?;
    let mut phi = vec![0.0; bases.nrows()];
    for i in 0..bases.ncols() {
        for (r, acc) in phi.iter_mut().enumerate() {
            *acc += match weighting {
                Weighting::Basis => bases[(r, i)] * eta[(r, i)],
                Weighting::Unit => eta[(r, i)],
            };
        }
    }
    Ok(Avatar { image: vector_to_image(&phi, m, n), source_method: None, normalization: None, log_scale })
}

/// Standardize an avatar by the mean and standard deviation of the
/// reference region: `(Φ − mean) / (std + 1e-12)`.
pub fn normalize_by_reference(avatar: &Avatar, roi: &RoiMask) -> Result<Avatar, EmbedError> {
    let reference = roi.reference().ok_or(EmbedError::MissingReference)?;
    if reference.shape() != avatar.image.shape() {
        return Err(EmbedError::MaskShape { expected: avatar.image.shape(), got: reference.shape() });
    }
    let values = reference.gather(&avatar.image);
    if values.is_empty() {
        return Err(EmbedError::MissingReference);
    }
    let stats = ReferenceStats { mean: linalg::mean(&values), std: linalg::std_dev(&values) };
    let image = avatar.image.map(|v| (v - stats.mean) / (stats.std + 1e-12));
    Ok(Avatar { image, source_method: avatar.source_method, normalization: Some(stats), log_scale: avatar.log_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal_data::Mask;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn large_exponents_are_rescaled() {
        // second basis is nearly constant and far above the grand mean
        let b = Matrix::from_fn(6, 2, |r, c| if c == 0 { r as f64 * 10.0 } else { 1000.0 + r as f64 * 1e-3 });
        let avatar = embed(&b, 2, 3, Weighting::Basis).unwrap();
        assert!(avatar.log_scale > MAX_EXPONENT);
        assert!(avatar.image.iter().all(|v| v.is_finite()));
        // log Φ_r = log Σ_i β_ri e^(z_ri) evaluated independently, minus the shift
        let mu = b.mean();
        let sd = |c: usize| {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            let m = col.iter().sum::<f64>() / 6.0;
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 6.0).sqrt()
        };
        for r in 0..6 {
            let terms: Vec<f64> = (0..2).map(|c| b[(r, c)].ln() + (b[(r, c)] - mu) / sd(c) - avatar.log_scale).collect();
            let expected: f64 = terms.iter().map(|t| t.exp()).sum();
            let got = avatar.image[(r / 3, r % 3)];
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1e-300), "{r}: {got} vs {expected}");
        }
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&Matrix::zeros(3, 3)).unwrap(), 1.0);
        assert_eq!(sparsity(&Matrix::from_element(4, 2, 1.0)).unwrap(), 0.0);
        assert_eq!(sparsity(&Matrix::identity(2, 2)).unwrap(), 0.5);
        assert_eq!(sparsity(&Matrix::zeros(0, 3)), Err(EmbedError::EmptyMatrix));
    }

    #[test]
    fn constant_basis_is_degenerate() {
        let b = Matrix::from_element(6, 1, 2.5);
        let a = embed(&b, 2, 3, Weighting::Basis).unwrap();
        assert_eq!(a.image, Matrix::from_element(2, 3, 2.5));
    }

    #[test]
    fn two_pixel_basis_by_hand() {
        // β = (0, 2): μ = 1, σ = 1 (population), η = (e^-1, e^1)
        let b = Matrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let a = embed(&b, 1, 2, Weighting::Basis).unwrap();
        assert_eq!(a.image[(0, 0)], 0.0);
        assert_abs_diff_eq!(a.image[(0, 1)], 2.0 * std::f64::consts::E, epsilon = 1e-14);
    }

    #[test]
    fn membership_is_shift_invariant() {
        let b = Matrix::from_fn(12, 3, |i, j| ((i * 5 + j * 7) % 9) as f64 - 3.0);
        let shifted = b.add_scalar(41.5);
        assert_eq!(membership(&b).unwrap(), membership(&shifted).unwrap());
    }

    #[test]
    fn embedding_is_permutation_invariant() {
        let b = Matrix::from_fn(12, 3, |i, j| ((i * 5 + j * 7) % 9) as f64 * 0.1);
        let mut p = b.clone();
        p.swap_columns(0, 2);
        let x = embed(&b, 3, 4, Weighting::Basis).unwrap().image;
        let y = embed(&p, 3, 4, Weighting::Basis).unwrap().image;
        for (u, v) in x.iter().zip(y.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12 * u.abs().max(1.0));
        }
    }

    fn roi_with_reference(rows: usize, cols: usize) -> RoiMask {
        let mask = Mask::from_fn(rows, cols, |i, _| i > 0);
        let reference = Mask::from_fn(rows, cols, |i, _| i == 0);
        RoiMask::new(mask, Some(reference)).unwrap()
    }

    #[test]
    fn reference_normalization_examples() {
        // reference row [3, 7]: mean 5, std 2
        let img = Matrix::from_row_slice(2, 2, &[3.0, 7.0, 9.0, 5.0]);
        let avatar = Avatar { image: img, source_method: None, normalization: None, log_scale: 0.0 };
        let n = normalize_by_reference(&avatar, &roi_with_reference(2, 2)).unwrap();
        assert_abs_diff_eq!(n.image[(1, 0)], 2.0, epsilon = 1e-10);
        assert_eq!(n.image[(1, 1)], 0.0);
        assert_eq!(n.normalization, Some(ReferenceStats { mean: 5.0, std: 2.0 }));

        let again = normalize_by_reference(&n, &roi_with_reference(2, 2)).unwrap();
        for (a, b) in again.image.iter().zip(n.image.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_image_at_reference_mean_is_zero() {
        let avatar = Avatar { image: Matrix::from_element(3, 3, 4.0), source_method: None, normalization: None, log_scale: 0.0 };
        let n = normalize_by_reference(&avatar, &roi_with_reference(3, 3)).unwrap();
        assert!(n.image.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn missing_reference() {
        let roi = RoiMask::new(Mask::full(2, 2), None).unwrap();
        let avatar = Avatar { image: Matrix::zeros(2, 2), source_method: None, normalization: None, log_scale: 0.0 };
        assert_eq!(normalize_by_reference(&avatar, &roi).unwrap_err(), EmbedError::MissingReference);
    }

    proptest! {
        #[test]
        fn sparsity_bounded_and_monotone(values in proptest::collection::vec(-3.0f64..3.0, 12), zero_at in 0usize..12) {
            let q = Matrix::from_vec(3, 4, values);
            let xi = sparsity(&q).unwrap();
            prop_assert!((0.0..=1.0).contains(&xi));
            let mut z = q.clone();
            z[zero_at] = 0.0;
            prop_assert!(sparsity(&z).unwrap() >= xi);
        }
    }
}
