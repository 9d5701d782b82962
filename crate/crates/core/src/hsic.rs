//! Block HSIC lasso feature selection.
//!
//! Samples are shuffled once with a seeded permutation shared by every
//! feature, cut into contiguous blocks of `delta` (the trailing partial block
//! is dropped) and each block's Gram matrices are centered and normalized.
//! The dependence between two variables is the mean of the per-block
//! `tr(K̄ C̄)` over blocks where both kernels are non-degenerate.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, Header, IoError};
use crate::rng::rng_from_seed;
use crate::thermomics::FeatureMatrix;
use crate::Matrix;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const NORM_TOL: f64 = 1e-9;
pub const DEGENERATE_NORM: f64 = 1e-10;
pub const CD_TOL: f64 = 1e-8;
pub const CD_MAX_SWEEPS: usize = 10_000;
pub const NONZERO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HsicError {
    #[error("kernel bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("centered kernel is zero (constant variable)")]
    DegenerateKernel,
    #[error("gram sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("gram matrix is not centered and normalized")]
    NotNormalized,
    #[error("block size {delta} invalid for {n} samples")]
    BlockTooSmall { delta: usize, n: usize },
    #[error("lambda must be >= 0, got {0}")]
    NegativeLambda(f64),
    #[error("every feature is constant")]
    AllFeaturesDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `K_ij = 1` when the values are equal.
    #[default]
    Delta,
    /// Gaussian kernel with median-heuristic bandwidth.
    Rbf,
}

impl Kernel {
    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Delta => "delta",
            Kernel::Rbf => "rbf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub data: Matrix,
    pub normalized: bool,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        let d = &self.data;
        d.is_square() && (0..d.nrows()).all(|i| (0..i).all(|j| (d[(i, j)] - d[(j, i)]).abs() <= SYMMETRY_TOL))
    }
}

pub fn rbf_gram(x: &[f64], sigma: f64) -> Result<GramMatrix, HsicError> {
    if !(sigma > 0.0) {
        return Err(HsicError::NonPositiveBandwidth(sigma));
    }
    if x.len() < 2 {
        return Err(HsicError::BlockTooSmall { delta: x.len(), n: x.len() });
    }
    let s2 = 2.0 * sigma * sigma;
    let data = Matrix::from_fn(x.len(), x.len(), |i, j| (-(x[i] - x[j]).powi(2) / s2).exp());
    Ok(GramMatrix { data, normalized: false })
}

pub fn delta_gram(x: &[f64]) -> GramMatrix {
    let data = Matrix::from_fn(x.len(), x.len(), |i, j| if x[i] == x[j] { 1.0 } else { 0.0 });
    GramMatrix { data, normalized: false }
}

/// Median of pairwise absolute differences, 1.0 when that median is zero.
pub fn median_bandwidth(x: &[f64]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for i in 0..x.len() {
        for j in 0..i {
            d.push((x[i] - x[j]).abs());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

pub fn gram(x: &[f64], kernel: Kernel) -> Result<GramMatrix, HsicError> {
    match kernel {
        Kernel::Delta => Ok(delta_gram(x)),
        Kernel::Rbf => rbf_gram(x, median_bandwidth(x)),
    }
}

/// `ΓKΓ / ‖ΓKΓ‖_F` with `Γ = I − 11ᵀ/δ`.
pub fn center_normalize(k: &GramMatrix) -> Result<GramMatrix, HsicError> {
    let n = k.size();
    let row_means: Vec<f64> = (0..n).map(|i| k.data.row(i).sum() / n as f64).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.data.column(j).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut c = Matrix::from_fn(n, n, |i, j| k.data[(i, j)] - row_means[i] - col_means[j] + grand);
    let norm = c.norm();
    if !(norm > DEGENERATE_NORM) {
        return Err(HsicError::DegenerateKernel);
    }
    c /= norm;
    Ok(GramMatrix { data: c, normalized: true })
}

/// `tr(K̄ C̄)` of two normalized Grams.
pub fn hsic_v(k: &GramMatrix, c: &GramMatrix) -> Result<f64, HsicError> {
    if k.size() != c.size() {
        return Err(HsicError::SizeMismatch(k.size(), c.size()));
    }
    if !k.normalized || !c.normalized {
        return Err(HsicError::NotNormalized);
    }
    Ok(trace_product(&k.data, &c.data))
}

fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Seeded partition of `0..n` into blocks of `delta`; indices within a block
/// are ascending.
pub fn block_partition(n: usize, delta: usize, seed: u64) -> Result<Vec<Vec<usize>>, HsicError> {
    if delta < 2 || delta > n {
        return Err(HsicError::BlockTooSmall { delta, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    if delta < n {
        perm.shuffle(&mut rng_from_seed(seed));
    }
    Ok(perm
        .chunks_exact(delta)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect())
}

/// Per-block normalized Grams of one variable; `None` for degenerate blocks.
pub fn block_grams(x: &[f64], blocks: &[Vec<usize>], kernel: Kernel) -> Result<Vec<Option<GramMatrix>>, HsicError> {
    blocks
        .iter()
        .map(|b| {
            let sub: Vec<f64> = b.iter().map(|&i| x[i]).collect();
            match center_normalize(&gram(&sub, kernel)?) {
                Ok(g) => Ok(Some(g)),
                Err(HsicError::DegenerateKernel) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Mean per-block HSIC over blocks where both sides survive.
pub fn block_hsic_from_grams(a: &[Option<GramMatrix>], b: &[Option<GramMatrix>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ga, gb) in a.iter().zip(b) {
        if let (Some(ga), Some(gb)) = (ga, gb) {
            sum += trace_product(&ga.data, &gb.data);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockParams {
    pub delta: usize,
    pub feature_kernel: Kernel,
    pub label_kernel: Kernel,
    pub seed: u64,
}

impl Default for BlockParams {
    fn default() -> Self {
        Self { delta: 20, feature_kernel: Kernel::Rbf, label_kernel: Kernel::Delta, seed: 0 }
    }
}

pub fn block_hsic(feature: &[f64], labels: &[f64], params: &BlockParams) -> Result<f64, HsicError> {
    if feature.len() != labels.len() {
        return Err(HsicError::SizeMismatch(feature.len(), labels.len()));
    }
    let blocks = block_partition(feature.len(), params.delta, params.seed)?;
    let kf = block_grams(feature, &blocks, params.feature_kernel)?;
    let kc = block_grams(labels, &blocks, params.label_kernel)?;
    block_hsic_from_grams(&kf, &kc).ok_or(HsicError::DegenerateKernel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub lambda: f64,
    pub delta: usize,
    pub feature_kernel: Kernel,
    pub label_kernel: Kernel,
    pub bandwidth_rule: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// All input feature names, in input order.
    pub names: Vec<String>,
    /// One weight per name; dropped constant features get 0.
    pub weights: Vec<f64>,
    /// Nonzero features as `(name, w / max w)`, descending.
    pub ranked: Vec<(String, f64)>,
    pub params: SelectionParams,
    /// Minimized objective `½wᵀQw − hᵀw + λ‖w‖₁` after each sweep.
    pub objective_trace: Vec<f64>,
    pub dropped: Vec<String>,
}

impl SelectionResult {
    pub fn weight_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.weights[i])
    }

    pub fn nonzero(&self) -> usize {
        self.ranked.len()
    }
}

/// Dependence vector `h` and redundancy matrix `Q` of the lasso.
#[derive(Debug, Clone)]
pub struct HsicProblem {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub h: Vec<f64>,
    pub q: Matrix,
}

pub fn build_problem(fm: &FeatureMatrix, params: &BlockParams) -> Result<HsicProblem, HsicError> {
    let n = fm.n_cases();
    let blocks = block_partition(n, params.delta, params.seed)?;
    let labels: Vec<f64> = fm.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let kc = block_grams(&labels, &blocks, params.label_kernel)?;
    if kc.iter().all(Option::is_none) {
        return Err(HsicError::DegenerateKernel);
    }
    let grams: Vec<Vec<Option<GramMatrix>>> = (0..fm.n_features())
        .into_par_iter()
        .map(|k| block_grams(&fm.column(k), &blocks, params.feature_kernel))
        .collect::<Result<_, _>>()?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut h = Vec::new();
    for (k, g) in grams.iter().enumerate() {
        match block_hsic_from_grams(g, &kc) {
            Some(v) => {
                kept.push(k);
                h.push(v);
            }
            None => {
                log::warn!("dropping constant feature {:?}", fm.names[k]);
                dropped.push(k);
            }
        }
    }
    if kept.is_empty() {
        return Err(HsicError::AllFeaturesDegenerate);
    }
    let d = kept.len();
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|a| (0..=a).map(|b| block_hsic_from_grams(&grams[kept[a]], &grams[kept[b]]).unwrap_or(0.0)).collect())
        .collect();
    let q = Matrix::from_fn(d, d, |a, b| if b <= a { rows[a][b] } else { rows[b][a] });
    Ok(HsicProblem { kept, dropped, h, q })
}

fn lasso_objective(q: &Matrix, h: &[f64], w: &[f64], lambda: f64) -> f64 {
    let d = w.len();
    let mut quad = 0.0;
    for a in 0..d {
        if w[a] == 0.0 {
            continue;
        }
        for b in 0..d {
            quad += w[a] * q[(a, b)] * w[b];
        }
    }
    0.5 * quad - h.iter().zip(w).map(|(hi, wi)| hi * wi).sum::<f64>() + lambda * w.iter().sum::<f64>()
}

/// Nonnegative lasso `min ½wᵀQw − hᵀw + λΣw, w ≥ 0` by cyclic coordinate
/// descent. Returns the weights and the per-sweep objective.
pub fn nonnegative_lasso(q: &Matrix, h: &[f64], lambda: f64, init: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let mut w = init.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
    // grad[a] = (Qw)_a
    let mut qw: Vec<f64> = (0..d).map(|a| (0..d).map(|b| q[(a, b)] * w[b]).sum()).collect();
    let mut trace = vec![lasso_objective(q, h, &w, lambda)];
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for a in 0..d {
            let qaa = q[(a, a)];
            if !(qaa > 0.0) {
                continue;
            }
            let rest = qw[a] - qaa * w[a];
            let new = ((h[a] - lambda - rest) / qaa).max(0.0);
            let step = new - w[a];
            if step != 0.0 {
                for (b, v) in qw.iter_mut().enumerate() {
                    *v += q[(b, a)] * step;
                }
                w[a] = new;
                max_change = max_change.max(step.abs());
            }
        }
        trace.push(lasso_objective(q, h, &w, lambda));
        if max_change < CD_TOL {
            break;
        }
    }
    (w, trace)
}

fn rank_weights(names: &[String], weights: &[f64]) -> Vec<(String, f64)> {
    let max = weights.iter().copied().fold(0.0, f64::max);
    if !(max > NONZERO) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > NONZERO).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.into_iter().map(|i| (names[i].clone(), if weights[i] == max { 1.0 } else { weights[i] / max })).collect()
}

fn assemble(fm: &FeatureMatrix, problem: &HsicProblem, w: &[f64], trace: Vec<f64>, lambda: f64, params: &BlockParams) -> SelectionResult {
    let mut weights = vec![0.0; fm.n_features()];
    for (slot, &k) in problem.kept.iter().enumerate() {
        weights[k] = w[slot];
    }
    SelectionResult {
        names: fm.names.clone(),
        ranked: rank_weights(&fm.names, &weights),
        weights,
        params: SelectionParams {
            lambda,
            delta: params.delta,
            feature_kernel: params.feature_kernel,
            label_kernel: params.label_kernel,
            bandwidth_rule: "median".into(),
            seed: params.seed,
        },
        objective_trace: trace,
        dropped: problem.dropped.iter().map(|&k| fm.names[k].clone()).collect(),
    }
}

pub fn block_hsic_lasso(fm: &FeatureMatrix, lambda: f64, params: &BlockParams) -> Result<SelectionResult, HsicError> {
    if !(lambda >= 0.0) {
        return Err(HsicError::NegativeLambda(lambda));
    }
    let problem = build_problem(fm, params)?;
    let (w, trace) = nonnegative_lasso(&problem.q, &problem.h, lambda, None);
    Ok(assemble(fm, &problem, &w, trace, lambda, params))
}

const BISECTION_STEPS: usize = 40;

/// Geometric λ path from `max h` down to `max h · 1e-3`.
pub fn lambda_path(h: &[f64], points: usize) -> Vec<f64> {
    let top = h.iter().copied().fold(0.0, f64::max);
    if points <= 1 {
        return vec![top];
    }
    (0..points).map(|i| top * 1e-3f64.powf(i as f64 / (points - 1) as f64)).collect()
}

/// Walk the λ path (warm-started) and keep the smallest λ leaving at most
/// `target` nonzero weights. When the path jumps from no selected feature
/// to more than `target`, the gap is bisected geometrically.
pub fn block_hsic_lasso_path(fm: &FeatureMatrix, target: usize, points: usize, params: &BlockParams) -> Result<SelectionResult, HsicError> {
    let problem = build_problem(fm, params)?;
    let count = |w: &[f64]| w.iter().filter(|&&v| v > NONZERO).count();
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut crowded: Option<f64> = None;
    for lambda in lambda_path(&problem.h, points) {
        let warm = best.as_ref().map(|b| b.0.as_slice());
        let (w, trace) = nonnegative_lasso(&problem.q, &problem.h, lambda, warm);
        if count(&w) > target {
            crowded = Some(lambda);
            break;
        }
        best = Some((w, trace, lambda));
    }
    let (mut w, mut trace, mut lambda) = best.expect("path starts at a lambda with all-zero weights");
    if let (0, Some(mut lo)) = (count(&w), crowded) {
        let mut hi = lambda;
        for _ in 0..BISECTION_STEPS {
            let mid = (lo * hi).sqrt();
            let (wm, tm) = nonnegative_lasso(&problem.q, &problem.h, mid, None);
            match count(&wm) {
                0 => hi = mid,
                n if n > target => lo = mid,
                _ => {
                    (w, trace, lambda) = (wm, tm, mid);
                    break;
                }
            }
        }
    }
    Ok(assemble(fm, &problem, &w, trace, lambda, params))
}

/// First `k` ranked entries.
pub fn select_top_k(result: &SelectionResult, k: usize) -> Vec<(String, f64)> {
    result.ranked.iter().take(k).cloned().collect()
}

pub fn write_selection_csv(path: &Path, result: &SelectionResult, header: &Header) -> Result<(), IoError> {
    let mut meta = header.clone();
    meta.push("lambda", io::fmt_f64(result.params.lambda));
    meta.push("delta", result.params.delta);
    meta.push("feature_kernel", result.params.feature_kernel.as_str());
    meta.push("label_kernel", result.params.label_kernel.as_str());
    meta.push("bandwidth_rule", &result.params.bandwidth_rule);
    meta.push("shuffle_seed", result.params.seed);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let werr = |e: String| IoError::Write { path: path.to_path_buf(), reason: e };
    writer.write_record(["rank", "feature", "weight", "relatedness_score"]).map_err(|e| werr(e.to_string()))?;
    for (rank, (name, score)) in result.ranked.iter().enumerate() {
        let w = result.weight_of(name).unwrap_or(0.0);
        writer
            .write_record([(rank + 1).to_string(), name.clone(), io::fmt_f64(w), format!("{score:.2}")])
            .map_err(|e| werr(e.to_string()))?;
    }
    let mut out = meta.render().into_bytes();
    out.write_all(&writer.into_inner().map_err(|e| werr(e.to_string()))?).map_err(|e| werr(e.to_string()))?;
    io::write_text(path, &String::from_utf8(out).map_err(|e| werr(e.to_string()))?)
}

/// Read back `(feature, relatedness_score)` rows of a selection report.
pub fn read_selection_csv(path: &Path) -> Result<Vec<(String, f64)>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io::read_err(path, e))?;
    let malformed = |reason: String| IoError::Malformed { path: path.to_path_buf(), reason };
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        if rec.len() != 4 {
            return Err(malformed(format!("expected 4 columns, got {}", rec.len())));
        }
        let score = rec[3].parse::<f64>().map_err(|e| malformed(e.to_string()))?;
        out.push((rec[1].to_string(), score));
    }
    Ok(out)
}
