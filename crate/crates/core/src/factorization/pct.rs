//! Principal component thermography: truncated SVD of the column-centered
//! heat matrix.

use super::{check_finite, check_rank, FactorError, Factorization, Method};
use crate::linalg;
use crate::Matrix;

fn center_columns(x: &Matrix) -> Matrix {
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let mu = col.mean();
        col.add_scalar_mut(-mu);
    }
    xc
}

/// Thin SVD sorted by descending singular value, with each left singular
/// vector signed so that its largest-magnitude entry is positive.
fn sorted_svd(x: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix), FactorError> {
    let (u, sv, vt) = linalg::thin_svd(x).ok_or(FactorError::SvdFailed)?;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut u_sorted = Matrix::zeros(u.nrows(), order.len());
    let mut vt_sorted = Matrix::zeros(order.len(), vt.ncols());
    let mut s = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        u_sorted.set_column(dst, &(col * sign));
        vt_sorted.set_row(dst, &(vt.row(src) * sign));
        s.push(sv[src]);
    }
    Ok((u_sorted, s, vt_sorted))
}

/// Singular values of the column-centered matrix, descending.
pub fn singular_values(x: &Matrix) -> Result<Vec<f64>, FactorError> {
    Ok(sorted_svd(&center_columns(x))?.1)
}

/// Rank-`k` PCT. `B` holds the top-`k` left singular vectors of the
/// centered matrix and `A = Σ_k V_kᵀ`, so `‖X_c − BA‖²_F` equals the energy of
/// the discarded singular values.
pub fn pct(x: &Matrix, k: usize) -> Result<Factorization, FactorError> {
    check_finite(x)?;
    check_rank(x, k)?;
    let xc = center_columns(x);
    let (u, s, vt) = sorted_svd(&xc)?;
    let bases = u.columns(0, k).into_owned();
    let mut coeffs = vt.rows(0, k).into_owned();
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        row *= s[i];
    }
    let cost = linalg::half_sq_dist(&xc, &(&bases * &coeffs));
    Ok(Factorization { bases, coeffs, objective_trace: vec![cost], method: Method::Pct, iterations: 1 })
}
