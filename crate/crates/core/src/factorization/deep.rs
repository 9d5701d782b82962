//! Deep semi-NMF: `X ≈ B₁ B₂ ⋯ B_m A_m` with nonnegative coefficients.
//!
//! Pretraining factors `X ≈ B₁A₁`, then each coefficient matrix
//! `A_{i−1} ≈ B_i A_i` with semi-NMF. Fine-tuning then alternates the
//! nonnegative step on `A_m` (basis `Ψ = B₁⋯B_m`) with the exact
//! least-squares solve of each `B_i` given all other factors, minimizing
//! `½‖X − B₁⋯B_m A_m‖²_F`. Sweeps that raise the cost are rolled back.

use serde::{Deserialize, Serialize};

use super::semi::coefficient_step;
use super::{check_finite, check_rank, converged, semi_nmf, DeepFactorization, FactorError, IterOptions};
use crate::linalg;
use crate::rng::derive_seed;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepOptions {
    pub layer_sizes: Vec<usize>,
    pub pretrain_iters: usize,
    pub finetune_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for DeepOptions {
    fn default() -> Self {
        Self { layer_sizes: vec![12, 8], pretrain_iters: 500, finetune_iters: 200, tol: 1e-6, seed: 0 }
    }
}

fn check_layers(x: &Matrix, sizes: &[usize]) -> Result<(), FactorError> {
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[1] > w[0]) {
        return Err(FactorError::BadLayerSizes(sizes.to_vec()));
    }
    check_rank(x, sizes[0])
}

fn deep_cost(x: &Matrix, layers: &[Matrix], top: &Matrix) -> f64 {
    let psi = linalg::chain_product(layers).expect("non-empty chain");
    linalg::half_sq_dist(x, &(psi * top))
}

pub fn deep_semi_nmf(x: &Matrix, opts: &DeepOptions) -> Result<DeepFactorization, FactorError> {
    check_finite(x)?;
    check_layers(x, &opts.layer_sizes)?;
    let mut layers = Vec::with_capacity(opts.layer_sizes.len());
    let mut coeffs = Vec::with_capacity(opts.layer_sizes.len());
    let mut input = x.clone();
    for (i, &k) in opts.layer_sizes.iter().enumerate() {
        let iter = IterOptions { max_iters: opts.pretrain_iters, tol: opts.tol, seed: derive_seed(opts.seed, &format!("layer{i}")) };
        let f = semi_nmf(&input, k, &iter)?;
        input = f.coeffs.clone();
        layers.push(f.bases);
        coeffs.push(f.coeffs);
    }
    let top = coeffs.pop().expect("at least one layer");
    let mut out = deep_finetune(x, layers, top, opts.finetune_iters, opts.tol)?;
    out.per_layer_coeffs = coeffs;
    Ok(out)
}

/// Fine-tune an explicit chain `B₁ … B_m, A_m`. `objective_trace[0]` is the
/// cost of the chain as given.
pub fn deep_finetune(x: &Matrix, layers: Vec<Matrix>, top: Matrix, max_iters: usize, tol: f64) -> Result<DeepFactorization, FactorError> {
    let sizes: Vec<usize> = layers.iter().map(|b| b.ncols()).collect();
    if layers.is_empty() || top.nrows() != *sizes.last().unwrap() || layers[0].nrows() != x.nrows() {
        return Err(FactorError::BadLayerSizes(sizes));
    }
    let m = layers.len();
    let mut layers = layers;
    let mut top = top;
    let mut trace = vec![deep_cost(x, &layers, &top)];
    let mut iterations = 0;
    for _ in 0..max_iters {
        let mut new_layers = layers.clone();
        let psi = linalg::chain_product(&new_layers).unwrap();
        let new_top = coefficient_step(x, &psi, &top);
        for i in 0..m {
            let right = match linalg::chain_product(&new_layers[i + 1..]) {
                Some(p) => p * &new_top,
                None => new_top.clone(),
            };
            new_layers[i] = match linalg::chain_product(&new_layers[..i]) {
                Some(left) => linalg::solve_sandwich(&left, x, &right),
                None => linalg::solve_right(x, &right),
            };
        }
        let cost = deep_cost(x, &new_layers, &new_top);
        let prev = *trace.last().unwrap();
        if !(cost <= prev) {
            break;
        }
        layers = new_layers;
        top = new_top;
        trace.push(cost);
        iterations += 1;
        if converged(prev, cost, tol) {
            break;
        }
    }
    Ok(DeepFactorization { layers, top_coeffs: top, per_layer_coeffs: Vec::new(), objective_trace: trace, iterations })
}
