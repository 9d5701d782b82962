//! Classification and statistical evaluation.

mod forest;
mod noise;
mod stats;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::EmbedError;
use crate::factorization::FactorError;
use crate::io::{self, Header, IoError};
use crate::rng::derive_seed;
use crate::thermomics::FeatureMatrix;

pub use forest::{fit_tree, random_forest_fit, random_forest_predict, ForestParams, Prediction, RandomForest, Tree};
pub use noise::{add_noise, avatar_snr, input_snr, noise_field, noise_robustness_sweep, temporal_mean, NoiseSweepReport, SweepSetup, DEFAULT_LEVELS};
pub use stats::{
    exact_u_counts, mann_whitney_u, midranks, roc_auc, roc_curve, snr, snr_db, trapezoid_area, u_statistic, welch_t_test, wilson_interval,
    MwuResult, TTest, EXACT_LIMIT, Z95,
};

/// Significance threshold used when reporting group separation.
pub const SIGNIFICANCE: f64 = 0.005;
pub const INTERVAL_NAME: &str = "wilson-95";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("sample is empty or too small")]
    EmptySample,
    #[error("only one class present")]
    SingleClass,
    #[error("need more cases, got {0}")]
    TooFewCases(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("feature rows are empty or of unequal length")]
    RaggedRows,
    #[error("noise region has zero standard deviation")]
    ZeroNoiseStd,
    #[error("signal or noise region is empty")]
    EmptyRegion,
    #[error("mask is {got:?}, image is {expected:?}")]
    MaskShape { expected: (usize, usize), got: (usize, usize) },
    #[error("noise levels must be >= 0 and strictly increasing")]
    BadLevels,
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTest {
    pub feature: String,
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CasePrediction {
    pub case_id: String,
    pub label: bool,
    pub score: f64,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_cases: usize,
    pub accuracy: f64,
    pub accuracy_low: f64,
    pub accuracy_high: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub mwu: Vec<FeatureTest>,
    pub predictions: Vec<CasePrediction>,
    /// Wall-clock seconds; never written to report files.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl EvalReport {
    /// Per-case correctness as 0/1, in case order.
    pub fn fold_outcomes(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| if p.predicted == p.label { 1.0 } else { 0.0 }).collect()
    }

    pub fn accuracy_cell(&self) -> String {
        format!("{:.1} ({:.1}-{:.1})", self.accuracy * 100.0, self.accuracy_low * 100.0, self.accuracy_high * 100.0)
    }

    pub fn roc(&self) -> Result<Vec<(f64, f64)>, AnalysisError> {
        let scores: Vec<f64> = self.predictions.iter().map(|p| p.score).collect();
        let labels: Vec<bool> = self.predictions.iter().map(|p| p.label).collect();
        roc_curve(&scores, &labels)
    }
}

/// Mann–Whitney U of every column between the two label groups.
pub fn feature_tests(fm: &FeatureMatrix) -> Result<Vec<FeatureTest>, AnalysisError> {
    (0..fm.n_features())
        .map(|k| {
            let col = fm.column(k);
            let pos: Vec<f64> = col.iter().zip(&fm.labels).filter(|(_, &l)| l).map(|(v, _)| *v).collect();
            let neg: Vec<f64> = col.iter().zip(&fm.labels).filter(|(_, &l)| !l).map(|(v, _)| *v).collect();
            let r = mann_whitney_u(&pos, &neg)?;
            Ok(FeatureTest { feature: fm.names[k].clone(), u: r.u, p_two_sided: r.p_two_sided, exact: r.exact })
        })
        .collect()
}

/// Leave-one-out cross-validation of a random forest. Fold `i` is fitted
/// with the seed derived from `(params.seed, i)`.
pub fn loocv(fm: &FeatureMatrix, params: &ForestParams) -> Result<EvalReport, AnalysisError> {
    let start = std::time::Instant::now();
    let n = fm.n_cases();
    if n < 3 {
        return Err(AnalysisError::TooFewCases(n));
    }
    if fm.n_features() == 0 {
        return Err(AnalysisError::RaggedRows);
    }
    let predictions: Vec<Prediction> = (0..n)
        .into_par_iter()
        .map(|held| {
            let x: Vec<Vec<f64>> = (0..n).filter(|&i| i != held).map(|i| fm.rows[i].clone()).collect();
            let y: Vec<bool> = (0..n).filter(|&i| i != held).map(|i| fm.labels[i]).collect();
            let fold = ForestParams { seed: derive_seed(params.seed, &format!("fold{held}")), ..*params };
            let model = random_forest_fit(&x, &y, &fold)?;
            Ok(random_forest_predict(&model, &fm.rows[held]))
        })
        .collect::<Result<_, AnalysisError>>()?;

    let mut confusion = Confusion::default();
    for (p, &label) in predictions.iter().zip(&fm.labels) {
        match (p.label, label) {
            (true, true) => confusion.tp += 1,
            (true, false) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
            (false, true) => confusion.fn_ += 1,
        }
    }
    let correct = confusion.tp + confusion.tn;
    let (accuracy_low, accuracy_high) = wilson_interval(correct, n, Z95);
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    Ok(EvalReport {
        n_cases: n,
        accuracy: correct as f64 / n as f64,
        accuracy_low,
        accuracy_high,
        auc: roc_auc(&scores, &fm.labels)?,
        confusion,
        mwu: feature_tests(fm)?,
        predictions: predictions
            .iter()
            .zip(fm.labels.iter().zip(&fm.case_ids))
            .map(|(p, (&label, id))| CasePrediction { case_id: id.clone(), label, score: p.score, predicted: p.label })
            .collect(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

fn ttest_vs_reference(rows: &[(String, EvalReport)], i: usize) -> Option<TTest> {
    if i == 0 {
        return None;
    }
    welch_t_test(&rows[0].1.fold_outcomes(), &rows[i].1.fold_outcomes()).ok()
}

/// Summary CSV with one row per method; t-tests compare fold outcomes with
/// the first row.
pub fn eval_table_csv(rows: &[(String, EvalReport)], header: &Header) -> String {
    let mut meta = header.clone();
    meta.push("accuracy_interval", INTERVAL_NAME);
    let mut text = meta.render();
    text.push_str("method,n_cases,accuracy,accuracy_low,accuracy_high,auc,tp,fp,tn,fn,t_statistic,p_value\n");
    for (i, (name, r)) in rows.iter().enumerate() {
        let (t, p) = match ttest_vs_reference(rows, i) {
            Some(tt) => (io::fmt_f64(tt.t), io::fmt_f64(tt.p_two_sided)),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{},{},{},{},{},{t},{p}",
            r.n_cases,
            io::fmt_f64(r.accuracy),
            io::fmt_f64(r.accuracy_low),
            io::fmt_f64(r.accuracy_high),
            io::fmt_f64(r.auc),
            r.confusion.tp,
            r.confusion.fp,
            r.confusion.tn,
            r.confusion.fn_
        );
    }
    text
}

/// Fixed-width text table: method, accuracy with interval, AUC, t, p.
pub fn eval_table_text(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    let mut text = format!("{:<width$}  {:<20}  {:>6}  {:>8}  {:>8}\n", "Method", "Accuracy (%)", "AUC", "t", "p");
    for (i, (name, r)) in rows.iter().enumerate() {
        let (t, p) = match ttest_vs_reference(rows, i) {
            Some(tt) => (format!("{:.3}", tt.t), format!("{:.3}", tt.p_two_sided)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(text, "{name:<width$}  {:<20}  {:>6.3}  {t:>8}  {p:>8}", r.accuracy_cell(), r.auc);
    }
    text
}

pub fn predictions_csv(report: &EvalReport, header: &Header) -> String {
    let mut text = header.render();
    text.push_str("case_id,label,score,predicted\n");
    for p in &report.predictions {
        let _ = writeln!(text, "{},{},{},{}", p.case_id, p.label as u8, io::fmt_f64(p.score), p.predicted as u8);
    }
    text
}

pub fn roc_csv(report: &EvalReport, header: &Header) -> Result<String, AnalysisError> {
    let mut text = header.render();
    text.push_str("fpr,tpr\n");
    for (fpr, tpr) in report.roc()? {
        let _ = writeln!(text, "{},{}", io::fmt_f64(fpr), io::fmt_f64(tpr));
    }
    Ok(text)
}

pub fn mwu_csv(report: &EvalReport, header: &Header) -> String {
    let mut text = header.render();
    text.push_str("feature,u,p_value,exact,significant\n");
    for t in &report.mwu {
        let _ = writeln!(
            text,
            "\"{}\",{},{},{},{}",
            t.feature.replace('"', "\"\""),
            io::fmt_f64(t.u),
            io::fmt_f64(t.p_two_sided),
            t.exact as u8,
            (t.p_two_sided < SIGNIFICANCE) as u8
        );
    }
    text
}

pub fn write_report_files(dir: &Path, name: &str, report: &EvalReport, header: &Header) -> Result<(), IoError> {
    io::write_text(&dir.join(format!("{name}_predictions.csv")), &predictions_csv(report, header))?;
    let roc = roc_csv(report, header).map_err(|e| IoError::Write { path: dir.to_path_buf(), reason: e.to_string() })?;
    io::write_text(&dir.join(format!("{name}_roc.csv")), &roc)?;
    io::write_text(&dir.join(format!("{name}_mwu.csv")), &mwu_csv(report, header))
}
