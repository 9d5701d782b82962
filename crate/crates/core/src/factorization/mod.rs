//! Low-rank approximation of the heat matrix `X ≈ B A`.
//!
//! All iterative solvers record `objective_trace[0]` as the cost of the
//! initial factors and then one entry per full sweep. A sweep that would
//! raise the cost is rolled back and ends the run, so every trace is
//! non-increasing.

mod deep;
mod nmf;
mod pct;
mod semi;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, Header, IoError};
use crate::linalg;
use crate::rng;
use crate::Matrix;

pub use deep::{deep_finetune, deep_semi_nmf, DeepOptions};
pub use nmf::{nmf, nnls_gram, sparse_nmf, sparse_nmf_from_init};
pub use pct::{pct, singular_values};
pub use semi::{semi_nmf, semi_nmf_from_init, semi_nmf_init};

/// Guard added to numerators and denominators of multiplicative updates.
pub(crate) const MU_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("rank {k} outside 1..={max}")]
    RankTooLarge { k: usize, max: usize },
    #[error("input has a negative entry {value} at ({row}, {col})")]
    NegativeInput { row: usize, col: usize, value: f64 },
    #[error("l1 weight must be >= 0, got {0}")]
    NegativeLambda(f64),
    #[error("layer sizes {0:?} must be non-empty, non-increasing and >= 1")]
    BadLayerSizes(Vec<usize>),
    #[error("input matrix contains non-finite values")]
    NonFinite,
    #[error("singular value decomposition did not converge")]
    SvdFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pct,
    Nmf,
    SparseNmf,
    SemiNmf,
    DeepSemiNmf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pct, Method::Nmf, Method::SparseNmf, Method::SemiNmf, Method::DeepSemiNmf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pct => "pct",
            Method::Nmf => "nmf",
            Method::SparseNmf => "sparse-nmf",
            Method::SemiNmf => "semi-nmf",
            Method::DeepSemiNmf => "deep-semi-nmf",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Pct => "PCT",
            Method::Nmf => "NMF",
            Method::SparseNmf => "Sparse NMF",
            Method::SemiNmf => "Semi-NMF",
            Method::DeepSemiNmf => "Deep SemiNMF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Update rule for NMF and sparse NMF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmfSolver {
    /// Lee–Seung multiplicative updates.
    #[default]
    Multiplicative,
    /// Alternating exact nonnegative least squares (active set).
    Anls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterOptions {
    pub max_iters: usize,
    /// Stop when the relative cost change of a sweep drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// `MN × k` basis matrix, one basis image per column.
    pub bases: Matrix,
    /// `k × τ` coefficient matrix.
    pub coeffs: Matrix,
    pub objective_trace: Vec<f64>,
    pub method: Method,
    /// Number of completed sweeps.
    pub iterations: usize,
}

impl Factorization {
    pub fn rank(&self) -> usize {
        self.bases.ncols()
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.bases * &self.coeffs
    }

    pub fn final_cost(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// `X ≈ B₁ B₂ ⋯ B_m A_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepFactorization {
    pub layers: Vec<Matrix>,
    pub top_coeffs: Matrix,
    /// Coefficient matrices `A₁ … A_{m−1}` from layer-wise pretraining.
    pub per_layer_coeffs: Vec<Matrix>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl DeepFactorization {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|b| b.ncols()).collect()
    }

    /// Effective basis `B₁ ⋯ B_m`, `MN × k_m`.
    pub fn basis_product(&self) -> Matrix {
        linalg::chain_product(&self.layers).expect("at least one layer")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.basis_product() * &self.top_coeffs
    }

    pub fn final_cost(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Any factorization produced by [`factorize`].
#[derive(Debug, Clone, PartialEq)]
pub enum LowRank {
    Shallow(Factorization),
    Deep(DeepFactorization),
}

impl LowRank {
    pub fn method(&self) -> Method {
        match self {
            LowRank::Shallow(f) => f.method,
            LowRank::Deep(_) => Method::DeepSemiNmf,
        }
    }

    /// Basis images as columns (for the deep model, the product chain).
    pub fn bases(&self) -> Matrix {
        match self {
            LowRank::Shallow(f) => f.bases.clone(),
            LowRank::Deep(d) => d.basis_product(),
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        match self {
            LowRank::Shallow(f) => f.reconstruct(),
            LowRank::Deep(d) => d.reconstruct(),
        }
    }

    pub fn objective_trace(&self) -> &[f64] {
        match self {
            LowRank::Shallow(f) => &f.objective_trace,
            LowRank::Deep(d) => &d.objective_trace,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            LowRank::Shallow(f) => f.iterations,
            LowRank::Deep(d) => d.iterations,
        }
    }

    /// Write one CSV per factor plus `basis.csv` and `metadata.txt`.
    pub fn write_dir(&self, dir: &Path, header: &Header) -> Result<(), IoError> {
        let mut meta = header.clone();
        meta.push("method", self.method());
        match self {
            LowRank::Shallow(f) => {
                meta.push("rank", f.rank());
                io::write_matrix_csv(&dir.join("B.csv"), &f.bases, header)?;
                io::write_matrix_csv(&dir.join("A.csv"), &f.coeffs, header)?;
            }
            LowRank::Deep(d) => {
                let sizes: Vec<String> = d.layer_sizes().iter().map(|k| k.to_string()).collect();
                meta.push("layer_sizes", sizes.join(","));
                for (i, b) in d.layers.iter().enumerate() {
                    io::write_matrix_csv(&dir.join(format!("B{}.csv", i + 1)), b, header)?;
                }
                for (i, a) in d.per_layer_coeffs.iter().enumerate() {
                    io::write_matrix_csv(&dir.join(format!("A{}.csv", i + 1)), a, header)?;
                }
                io::write_matrix_csv(&dir.join(format!("A{}.csv", d.layers.len())), &d.top_coeffs, header)?;
            }
        }
        io::write_matrix_csv(&dir.join("basis.csv"), &self.bases(), header)?;
        meta.push("iterations", self.iterations());
        let trace = self.objective_trace();
        meta.push("final_cost", io::fmt_f64(*trace.last().unwrap_or(&f64::NAN)));
        let mut text = meta.render();
        text.push_str("# objective_trace\n");
        for c in trace {
            text.push_str(&io::fmt_f64(*c));
            text.push('\n');
        }
        io::write_text(&dir.join("metadata.txt"), &text)
    }
}

/// Settings for [`factorize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorizeOptions {
    pub rank: usize,
    pub layer_sizes: Vec<usize>,
    pub lambda: f64,
    pub max_iters: usize,
    pub finetune_iters: usize,
    pub tol: f64,
    pub solver: NmfSolver,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self { rank: 8, layer_sizes: vec![12, 8], lambda: 0.1, max_iters: 500, finetune_iters: 200, tol: 1e-6, solver: NmfSolver::Multiplicative }
    }
}

/// Run `method` on `x` with the given options and seed.
pub fn factorize(x: &Matrix, method: Method, opts: &FactorizeOptions, seed: u64) -> Result<LowRank, FactorError> {
    let iter = IterOptions { max_iters: opts.max_iters, tol: opts.tol, seed };
    Ok(match method {
        Method::Pct => LowRank::Shallow(pct(x, opts.rank)?),
        Method::Nmf => LowRank::Shallow(nmf(x, opts.rank, opts.solver, &iter)?),
        Method::SparseNmf => LowRank::Shallow(sparse_nmf(x, opts.rank, opts.lambda, opts.solver, &iter)?),
        Method::SemiNmf => LowRank::Shallow(semi_nmf(x, opts.rank, &iter)?),
        Method::DeepSemiNmf => LowRank::Deep(deep_semi_nmf(
            x,
            &DeepOptions {
                layer_sizes: opts.layer_sizes.clone(),
                pretrain_iters: opts.max_iters,
                finetune_iters: opts.finetune_iters,
                tol: opts.tol,
                seed,
            },
        )?),
    })
}

pub(crate) fn check_rank(x: &Matrix, k: usize) -> Result<(), FactorError> {
    let max = x.nrows().min(x.ncols());
    if k == 0 || k > max {
        return Err(FactorError::RankTooLarge { k, max });
    }
    Ok(())
}

pub(crate) fn check_finite(x: &Matrix) -> Result<(), FactorError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FactorError::NonFinite)
    }
}

pub(crate) fn check_nonnegative(x: &Matrix) -> Result<(), FactorError> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let value = x[(i, j)];
            if value < 0.0 {
                return Err(FactorError::NegativeInput { row: i, col: j, value });
            }
        }
    }
    Ok(())
}

/// Seeded uniform(0,1) matrix scaled by `√(mean(|X|)/k)`.
pub(crate) fn random_factor(rows: usize, cols: usize, scale: f64, rng: &mut rng::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * scale)
}

pub(crate) fn init_scale(x: &Matrix, k: usize) -> f64 {
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64;
    (mean_abs / k as f64).sqrt()
}

/// Relative change test shared by all solvers.
pub(crate) fn converged(prev: f64, cost: f64, tol: f64) -> bool {
    if prev <= 0.0 {
        return true;
    }
    (prev - cost).abs() / prev < tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("svd".parse::<Method>().is_err());
    }

    #[test]
    fn deep_reconstruct_with_identity_middle_layers() {
        let b1 = Matrix::from_row_slice(4, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 0.0, 1.0, 1.0]);
        let eye = Matrix::identity(2, 2);
        let a = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, 1.0, 0.0]);
        let d = DeepFactorization {
            layers: vec![b1.clone(), eye.clone(), eye],
            top_coeffs: a.clone(),
            per_layer_coeffs: vec![],
            objective_trace: vec![0.0],
            iterations: 0,
        };
        assert_eq!(d.reconstruct(), &b1 * &a);
    }

    #[test]
    fn written_directory_has_all_factors() {
        let dir = tempfile::tempdir().unwrap();
        let x = Matrix::from_fn(30, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.5);
        let opts = FactorizeOptions { layer_sizes: vec![4, 2], max_iters: 20, finetune_iters: 5, ..Default::default() };
        let model = factorize(&x, Method::DeepSemiNmf, &opts, 3).unwrap();
        model.write_dir(dir.path(), &Header::new().with("seed", 3)).unwrap();
        for f in ["B1.csv", "B2.csv", "A1.csv", "A2.csv", "basis.csv", "metadata.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let basis = io::read_matrix_csv(&dir.path().join("basis.csv")).unwrap();
        assert_eq!(basis, model.bases());
    }
}
