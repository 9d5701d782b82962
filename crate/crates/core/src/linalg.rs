//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;

use crate::Matrix;

/// Ridge added to Gram matrices before inversion.
pub const GRAM_RIDGE: f64 = 1e-12;

pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// `½‖X − Y‖²_F` without allocating the difference.
pub fn half_sq_dist(x: &Matrix, y: &Matrix) -> f64 {
    debug_assert_eq!(x.shape(), y.shape());
    0.5 * x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Elementwise positive part `(|M| + M) / 2`.
pub fn pos_part(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Elementwise negative part `(|M| − M) / 2`, nonnegative.
pub fn neg_part(m: &Matrix) -> Matrix {
    m.map(|v| (-v).max(0.0))
}

/// Inverse of a symmetric positive semi-definite Gram matrix with a ridge of
/// [`GRAM_RIDGE`] on the diagonal. Falls back to the pseudo-inverse when the
/// Cholesky factorization fails.
pub fn gram_inverse(gram: &Matrix) -> Matrix {
    let n = gram.nrows();
    let ridged = gram + DMatrix::identity(n, n) * GRAM_RIDGE;
    match ridged.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => pseudo_inverse(&ridged, 1e-14).unwrap_or_else(|| DMatrix::zeros(n, n)),
    }
}

/// Thin SVD `X = U diag(s) Vᵀ`; `None` if the iteration fails to converge.
pub fn thin_svd(x: &Matrix) -> Option<(Matrix, Vec<f64>, Matrix)> {
    let f = faer::Mat::<f64>::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let svd = f.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    Some((
        DMatrix::from_fn(x.nrows(), k, |i, j| u[(i, j)]),
        (0..k).map(|i| s[i]).collect(),
        DMatrix::from_fn(k, x.ncols(), |i, j| v[(j, i)]),
    ))
}

/// Moore–Penrose inverse, dropping singular values below `tol · s_max`.
pub fn pseudo_inverse(x: &Matrix, tol: f64) -> Option<Matrix> {
    let (u, s, vt) = thin_svd(x)?;
    let cutoff = tol * s.iter().copied().fold(0.0, f64::max);
    let inv: Vec<f64> = s.iter().map(|&v| if v > cutoff { 1.0 / v } else { 0.0 }).collect();
    let scaled = DMatrix::from_fn(vt.ncols(), u.ncols(), |i, j| vt[(j, i)] * inv[j]);
    Some(scaled * u.transpose())
}

/// Least-squares solution `B` of `X ≈ B A`, i.e. `X Aᵀ (A Aᵀ)⁻¹`.
pub fn solve_right(x: &Matrix, a: &Matrix) -> Matrix {
    let gram_inv = gram_inverse(&(a * a.transpose()));
    (x * a.transpose()) * gram_inv
}

/// Least-squares solution `M` of `X ≈ L M R`, i.e. `(LᵀL)⁻¹ Lᵀ X Rᵀ (RRᵀ)⁻¹`.
pub fn solve_sandwich(left: &Matrix, x: &Matrix, right: &Matrix) -> Matrix {
    let left_inv = gram_inverse(&(left.transpose() * left));
    let right_inv = gram_inverse(&(right * right.transpose()));
    left_inv * (left.transpose() * x * right.transpose()) * right_inv
}

/// Product of a chain of matrices; `None` for an empty chain.
pub fn chain_product<'a, I>(factors: I) -> Option<Matrix>
where
    I: IntoIterator<Item = &'a Matrix>,
{
    let mut iter = factors.into_iter();
    let first = iter.next()?.clone();
    Some(iter.fold(first, |acc, m| acc * m))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let mu = mean(values);
    (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64).sqrt()
}
