//! Bagged Gini decision trees.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or at `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: None, min_leaf: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { positive: bool },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { positive } => return positive,
                Node::Split { feature, threshold, left, right } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf { positive: 2 * pos > idx.len() });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize], rng: &mut Rng) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let parent = gini(total_pos, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut candidates = sample(rng, d, self.mtry).into_vec();
        candidates.sort_unstable();
        let mut sorted = idx.to_vec();
        for f in candidates {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for cut in 1..n {
                if self.y[sorted[cut - 1]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[sorted[cut - 1]][f], self.x[sorted[cut]][f]);
                if lo == hi || cut < self.params.min_leaf || n - cut < self.params.min_leaf {
                    continue;
                }
                let impurity = (cut as f64 * gini(left_pos, cut) + (n - cut) as f64 * gini(total_pos - left_pos, n - cut)) / n as f64;
                let gain = parent - impurity;
                if gain > 1e-15 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, lo + (hi - lo) / 2.0, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let pure = pos == 0 || pos == idx.len();
        let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || idx.len() < 2 * self.params.min_leaf {
            return self.leaf(idx);
        }
        let Some((feature, threshold, _)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { positive: false });
        let left = self.grow(&left_idx, depth + 1, rng);
        let right = self.grow(&right_idx, depth + 1, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

pub fn fit_tree(x: &[Vec<f64>], y: &[bool], idx: &[usize], params: &ForestParams, rng: &mut Rng) -> Tree {
    let d = x[0].len();
    let mtry = ((d as f64).sqrt().ceil() as usize).clamp(1, d);
    let mut b = Builder { x, y, params, mtry, nodes: Vec::new() };
    b.grow(idx, 0, rng);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: bool,
    /// Fraction of trees voting positive.
    pub score: f64,
}

pub fn random_forest_fit(x: &[Vec<f64>], y: &[bool], params: &ForestParams) -> Result<RandomForest, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewCases(x.len()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::RaggedRows);
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(AnalysisError::SingleClass);
    }
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(params.seed, &format!("tree{t}")));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_tree(x, y, &idx, params, &mut rng)
        })
        .collect();
    Ok(RandomForest { trees, n_features: d })
}

pub fn random_forest_predict(model: &RandomForest, row: &[f64]) -> Prediction {
    let votes = model.trees.iter().filter(|t| t.predict(row)).count();
    let score = votes as f64 / model.trees.len().max(1) as f64;
    Prediction { label: score > 0.5, score }
}
