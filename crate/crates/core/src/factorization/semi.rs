//! Semi-NMF: `X ≈ B A` with `A ≥ 0` and `B` unconstrained.
//!
//! Each sweep applies the square-root multiplicative rule to `A` and then
//! the closed-form least-squares solve `B = X Aᵀ (A Aᵀ)⁻¹`.

use super::{check_finite, check_rank, converged, init_scale, pct, random_factor, FactorError, Factorization, IterOptions, Method, MU_EPS};
use crate::linalg::{self, neg_part, pos_part};
use crate::rng::rng_from_seed;
use crate::Matrix;

/// Nonnegative coefficient step for `X ≈ Ψ A`:
/// `A ← A ⊙ √(([ΨᵀX]⁺ + [ΨᵀΨ]⁻A) / ([ΨᵀX]⁻ + [ΨᵀΨ]⁺A))`.
pub(crate) fn coefficient_step(x: &Matrix, psi: &Matrix, a: &Matrix) -> Matrix {
    let pt = psi.transpose();
    let ptx = &pt * x;
    let ptp = &pt * psi;
    let num = pos_part(&ptx) + neg_part(&ptp) * a;
    let den = neg_part(&ptx) + pos_part(&ptp) * a;
    let mut out = a.clone();
    out.zip_zip_apply(&num, &den, |v, n, d| *v *= ((n + MU_EPS) / (d + MU_EPS)).sqrt());
    out
}

/// Initial factors: `B₀` from the rank-`k` PCT bases, `A₀` seeded uniform.
pub fn semi_nmf_init(x: &Matrix, k: usize, seed: u64) -> Result<(Matrix, Matrix), FactorError> {
    check_finite(x)?;
    check_rank(x, k)?;
    let b0 = pct(x, k)?.bases;
    let mut rng = rng_from_seed(seed);
    let a0 = random_factor(k, x.ncols(), init_scale(x, k), &mut rng);
    Ok((b0, a0))
}

pub fn semi_nmf(x: &Matrix, k: usize, opts: &IterOptions) -> Result<Factorization, FactorError> {
    let (b0, a0) = semi_nmf_init(x, k, opts.seed)?;
    Ok(semi_nmf_from_init(x, b0, a0, opts.max_iters, opts.tol))
}

pub fn semi_nmf_from_init(x: &Matrix, b0: Matrix, a0: Matrix, max_iters: usize, tol: f64) -> Factorization {
    let (mut b, mut a) = (b0, a0);
    let mut trace = vec![linalg::half_sq_dist(x, &(&b * &a))];
    let mut iterations = 0;
    for _ in 0..max_iters {
        let na = coefficient_step(x, &b, &a);
        let nb = linalg::solve_right(x, &na);
        let cost = linalg::half_sq_dist(x, &(&nb * &na));
        let prev = *trace.last().unwrap();
        if cost > prev {
            break;
        }
        a = na;
        b = nb;
        trace.push(cost);
        iterations += 1;
        if converged(prev, cost, tol) {
            break;
        }
    }
    Factorization { bases: b, coeffs: a, objective_trace: trace, method: Method::SemiNmf, iterations }
}
