//! NMF and ℓ₁-penalized sparse NMF.
//!
//! Sparse NMF minimizes `½‖X − BA‖²_F + λ‖B‖₁` over `B, A ≥ 0`. With the
//! multiplicative solver the penalty enters the denominator of the `B`
//! update, which is the majorize–minimize step of the penalized cost; the
//! ANLS solver shifts the linear term of each row problem by `λ`.

use nalgebra::DVector;

use super::{
    check_finite, check_nonnegative, check_rank, converged, init_scale, random_factor, FactorError, Factorization, IterOptions,
    Method, NmfSolver, MU_EPS,
};
use crate::linalg;
use crate::rng::rng_from_seed;
use crate::Matrix;

pub fn nmf(x: &Matrix, k: usize, solver: NmfSolver, opts: &IterOptions) -> Result<Factorization, FactorError> {
    run(x, k, 0.0, solver, opts, Method::Nmf)
}

pub fn sparse_nmf(x: &Matrix, k: usize, lambda: f64, solver: NmfSolver, opts: &IterOptions) -> Result<Factorization, FactorError> {
    run(x, k, lambda, solver, opts, Method::SparseNmf)
}

fn run(x: &Matrix, k: usize, lambda: f64, solver: NmfSolver, opts: &IterOptions, method: Method) -> Result<Factorization, FactorError> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(FactorError::NegativeLambda(lambda));
    }
    check_finite(x)?;
    check_nonnegative(x)?;
    check_rank(x, k)?;
    let mut rng = rng_from_seed(opts.seed);
    let scale = init_scale(x, k);
    let b0 = random_factor(x.nrows(), k, scale, &mut rng);
    let a0 = random_factor(k, x.ncols(), scale, &mut rng);
    let mut f = sparse_nmf_from_init(x, b0, a0, lambda, solver, opts.max_iters, opts.tol)?;
    f.method = method;
    Ok(f)
}

fn penalized_cost(x: &Matrix, b: &Matrix, a: &Matrix, lambda: f64) -> f64 {
    let fit = linalg::half_sq_dist(x, &(b * a));
    if lambda > 0.0 {
        fit + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
    } else {
        fit
    }
}

/// Sparse NMF from explicit nonnegative initial factors (`λ = 0` is plain
/// NMF).
pub fn sparse_nmf_from_init(
    x: &Matrix,
    b0: Matrix,
    a0: Matrix,
    lambda: f64,
    solver: NmfSolver,
    max_iters: usize,
    tol: f64,
) -> Result<Factorization, FactorError> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(FactorError::NegativeLambda(lambda));
    }
    check_nonnegative(&b0)?;
    check_nonnegative(&a0)?;
    let (mut b, mut a) = (b0, a0);
    let mut trace = vec![penalized_cost(x, &b, &a, lambda)];
    let mut iterations = 0;
    for _ in 0..max_iters {
        let (nb, na) = match solver {
            NmfSolver::Multiplicative => mu_sweep(x, &b, &a, lambda),
            NmfSolver::Anls => anls_sweep(x, &b, &a, lambda),
        };
        let cost = penalized_cost(x, &nb, &na, lambda);
        let prev = *trace.last().unwrap();
        if cost > prev {
            break;
        }
        b = nb;
        a = na;
        trace.push(cost);
        iterations += 1;
        if converged(prev, cost, tol) {
            break;
        }
    }
    Ok(Factorization { bases: b, coeffs: a, objective_trace: trace, method: if lambda > 0.0 { Method::SparseNmf } else { Method::Nmf }, iterations })
}

fn mu_sweep(x: &Matrix, b: &Matrix, a: &Matrix, lambda: f64) -> (Matrix, Matrix) {
    let bt = b.transpose();
    let num = &bt * x;
    let den = (&bt * b) * a;
    let mut a = a.clone();
    a.zip_zip_apply(&num, &den, |v, n, d| *v *= (n + MU_EPS) / (d + MU_EPS));

    let at = a.transpose();
    let num = x * &at;
    let den = b * (&a * &at);
    let mut b = b.clone();
    b.zip_zip_apply(&num, &den, |v, n, d| *v *= (n + MU_EPS) / (d + lambda + MU_EPS));
    (b, a)
}

fn anls_sweep(x: &Matrix, b: &Matrix, _a: &Matrix, lambda: f64) -> (Matrix, Matrix) {
    let gram = b.transpose() * b;
    let rhs = b.transpose() * x;
    let mut a = Matrix::zeros(b.ncols(), x.ncols());
    for j in 0..x.ncols() {
        let h: Vec<f64> = rhs.column(j).iter().copied().collect();
        a.set_column(j, &DVector::from_vec(nnls_gram(&gram, &h)));
    }
    let gram = &a * a.transpose();
    let rhs = &a * x.transpose();
    let mut b_new = Matrix::zeros(x.nrows(), a.nrows());
    for r in 0..x.nrows() {
        let h: Vec<f64> = rhs.column(r).iter().map(|v| v - lambda).collect();
        let sol = nnls_gram(&gram, &h);
        for (c, v) in sol.into_iter().enumerate() {
            b_new[(r, c)] = v;
        }
    }
    (b_new, a)
}

fn solve_subsystem(gram: &Matrix, h: &[f64], idx: &[usize]) -> Vec<f64> {
    let n = idx.len();
    let sub = Matrix::from_fn(n, n, |i, j| gram[(idx[i], idx[j])]) + Matrix::identity(n, n) * linalg::GRAM_RIDGE;
    let rhs = DVector::from_iterator(n, idx.iter().map(|&i| h[i]));
    let sol = match sub.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => sub.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n)),
    };
    sol.iter().copied().collect()
}

/// Lawson–Hanson active-set solution of `min ½ xᵀGx − hᵀx` over `x ≥ 0`
/// for a symmetric positive semi-definite `G`.
pub fn nnls_gram(gram: &Matrix, h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let scale = 1.0 + h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    for _ in 0..(3 * n + 10) {
        let w: Vec<f64> = (0..n).map(|i| h[i] - (0..n).map(|j| gram[(i, j)] * x[j]).sum::<f64>()).collect();
        let candidate = (0..n).filter(|&i| !passive[i]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match candidate {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        for _ in 0..(3 * n + 10) {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            if idx.is_empty() {
                break;
            }
            let s = solve_subsystem(gram, h, &idx);
            if s.iter().all(|v| *v > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (pos, &i) in idx.iter().enumerate() {
                    x[i] = s[pos];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (pos, &i) in idx.iter().enumerate() {
                if s[pos] <= 0.0 {
                    let denom = x[i] - s[pos];
                    let step = if denom > 0.0 { x[i] / denom } else { 0.0 };
                    alpha = alpha.min(step);
                }
            }
            let mut full = vec![0.0; n];
            for (pos, &i) in idx.iter().enumerate() {
                full[i] = s[pos];
            }
            for i in 0..n {
                if passive[i] {
                    x[i] += alpha * (full[i] - x[i]);
                    if x[i] <= tol * 1e-3 {
                        x[i] = 0.0;
                        passive[i] = false;
                    }
                }
            }
        }
    }
    x
}
