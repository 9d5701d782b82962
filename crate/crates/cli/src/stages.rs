//! Pipeline stages. Each stage reads its upstream artifacts from the output
//! tree, writes its own, and is a pure function of (inputs, config, seed).
//!
//! Output tree:
//!
//! ```text
//! cohort/                       phantom frames, cohort.csv, roi.png, reference.png
//! factorizations/<method>/<case>/  factor CSVs, basis.csv, metadata.txt
//! avatars/<method>/<case>.csv   avatar image (+ .png preview)
//! features/<method>.csv         300 thermomics per case
//! selection/<method>.csv        ranked block HSIC lasso selection
//! classification/               eval.csv, eval.txt, per-method predictions, ROC, MWU
//! sweep/noise_sweep.csv         avatar SNR per method and noise level
//! ```

use std::path::{Path, PathBuf};

use deeptherm::analysis::{eval_table_csv, eval_table_text, loocv, noise_robustness_sweep, write_report_files, EvalReport, ForestParams, SweepSetup};
use deeptherm::embedding::{embed, normalize_by_reference, Avatar};
use deeptherm::factorization::{factorize, Method};
use deeptherm::hsic::{block_hsic_lasso, block_hsic_lasso_path, read_selection_csv, write_selection_csv, BlockParams};
use deeptherm::io::{self, Header};
use deeptherm::phantom::{make_cohort, read_cohort_manifest, snr_regions, write_cohort, Cohort, Lesion};
use deeptherm::rng::derive_seed;
use deeptherm::thermal_data::{load_mask, load_sequence, scale_sequence, stack_vectorize, FrameFormat, RoiMask, ThermalSequence};
use deeptherm::thermomics::{extract_thermomics, FeatureMatrix};
use deeptherm::{Matrix, NoiseSweepReport};
use rayon::prelude::*;

use crate::config::{PipelineConfig, Source};
use crate::error::CliError;

pub const COHORT_DIR: &str = "cohort";
pub const FACTOR_DIR: &str = "factorizations";
pub const AVATAR_DIR: &str = "avatars";
pub const FEATURE_DIR: &str = "features";
pub const SELECTION_DIR: &str = "selection";
pub const CLASSIFY_DIR: &str = "classification";
pub const SWEEP_DIR: &str = "sweep";

/// A validated config together with its hash.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub config_hash: String,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self, CliError> {
        config.validate()?;
        let config_hash = config.hash();
        Ok(Self { config, config_hash })
    }

    pub fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    /// Metadata written at the top of every artifact.
    pub fn header(&self, stage: &str) -> Header {
        Header::new()
            .with("tool", format!("deeptherm-cli {}", env!("CARGO_PKG_VERSION")))
            .with("library", format!("deeptherm {}", deeptherm::VERSION))
            .with("stage", stage)
            .with("config_sha256", &self.config_hash)
            .with("seed", self.config.seed)
            .with("input_scaling", self.config.input.scaling.as_str())
    }

    fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label)
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingUpstreamArtifact { path, stage })
    }
}

/// Warn when an upstream artifact was written under a different config.
fn check_fresh(ctx: &Context, path: &Path) {
    let Ok(text) = std::fs::read_to_string(path) else { return };
    let header = Header::parse(&text);
    if let Some(h) = header.get("config_sha256") {
        if h != ctx.config_hash {
            log::warn!("{} was produced under config {h}, current config is {}", path.display(), ctx.config_hash);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseEntry {
    pub case_id: String,
    pub label: bool,
    pub lesions: Vec<Lesion>,
}

/// Cases, frame layout and masks of the configured input.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub format: FrameFormat,
    pub cases: Vec<CaseEntry>,
    pub roi: RoiMask,
}

impl Dataset {
    pub fn load_case(&self, entry: &CaseEntry) -> Result<ThermalSequence, CliError> {
        Ok(load_sequence(&self.root.join(&entry.case_id), self.format, &entry.case_id, Some(entry.label))?)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.cases.iter().map(|c| c.label).collect()
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.case_id.clone()).collect()
    }
}

/// `case_id,label[,…]` manifest without lesion columns.
fn read_plain_manifest(path: &Path) -> Result<Vec<CaseEntry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let head: Vec<&str> = lines.next().ok_or_else(|| bad("empty manifest".into()))?.split(',').map(str::trim).collect();
    let col = |name: &str| head.iter().position(|h| *h == name).ok_or_else(|| bad(format!("no {name} column")));
    let (id_col, label_col) = (col("case_id")?, col("label")?);
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |i: usize| fields.get(i).copied().ok_or_else(|| bad(format!("short row {line:?}")));
            let label = match get(label_col)? {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("label {other:?}"))),
            };
            Ok(CaseEntry { case_id: get(id_col)?.to_string(), label, lesions: Vec::new() })
        })
        .collect()
}

pub fn dataset(ctx: &Context) -> Result<Dataset, CliError> {
    let (root, format, manifest, roi_path, reference_path, stage) = match ctx.config.input.source {
        Source::Phantom => {
            let root = ctx.out(COHORT_DIR);
            (root.clone(), FrameFormat::CsvFrames, root.join("cohort.csv"), root.join("roi.png"), Some(root.join("reference.png")), "phantom")
        }
        Source::Directory => {
            let d = &ctx.config.input.directory;
            (d.path.clone(), d.format, d.path.join(&d.manifest), d.path.join(&d.roi), d.reference.as_ref().map(|r| d.path.join(r)), "input")
        }
    };
    let manifest = require(manifest, stage)?;
    let cases = match read_cohort_manifest(&manifest) {
        Ok(entries) => entries.into_iter().map(|e| CaseEntry { case_id: e.case_id, label: e.label, lesions: e.lesions }).collect(),
        Err(_) => read_plain_manifest(&manifest)?,
    };
    if cases.len() < 3 {
        return Err(CliError::Data(format!("{} lists {} cases, need at least 3", manifest.display(), cases.len())));
    }
    let roi_mask = load_mask(&require(roi_path, stage)?)?;
    let reference = match reference_path {
        Some(p) => Some(load_mask(&require(p, stage)?)?),
        None => None,
    };
    let roi = RoiMask::new(roi_mask, reference)?;
    Ok(Dataset { root, format, cases, roi })
}

fn method_dir(ctx: &Context, stage_dir: &str, method: Method) -> PathBuf {
    ctx.out(stage_dir).join(method.as_str())
}

/// Simulate the phantom cohort into `cohort/`.
pub fn cmd_phantom(ctx: &Context) -> Result<Cohort, CliError> {
    if ctx.config.input.source != Source::Phantom {
        return Err(CliError::ConfigInvalid("the phantom stage needs input.source = \"phantom\"".into()));
    }
    let c = &ctx.config.input.phantom;
    let cohort = make_cohort(c.n_cases, c.lesion_fraction, &c.params, ctx.stage_seed("phantom"))?;
    write_cohort(&ctx.out(COHORT_DIR), &cohort, &ctx.header("phantom"))?;
    log::info!("phantom: {} cases", cohort.cases.len());
    Ok(cohort)
}

/// Factorize every case with every configured method.
pub fn cmd_factorize(ctx: &Context) -> Result<(), CliError> {
    let ds = dataset(ctx)?;
    let opts = ctx.config.factorization.options();
    let scaling = ctx.config.input.scaling;
    let sequences: Vec<ThermalSequence> = ds.cases.par_iter().map(|c| ds.load_case(c)).collect::<Result<_, _>>()?;
    for &method in &ctx.config.factorization.methods {
        sequences.par_iter().try_for_each(|seq| -> Result<(), CliError> {
            let heat = stack_vectorize(&scale_sequence(seq, scaling));
            let seed = ctx.stage_seed(&format!("factorize/{method}/{}", seq.case_id()));
            let low_rank = factorize(heat.data(), method, &opts, seed)?;
            let header = ctx.header("factorize").with("case_id", seq.case_id()).with("factorization_seed", seed);
            low_rank.write_dir(&method_dir(ctx, FACTOR_DIR, method).join(seq.case_id()), &header)?;
            Ok(())
        })?;
        log::info!("factorize: {method} done for {} cases", sequences.len());
    }
    Ok(())
}

fn avatar_path(ctx: &Context, method: Method, case_id: &str) -> PathBuf {
    method_dir(ctx, AVATAR_DIR, method).join(format!("{case_id}.csv"))
}

/// Embed the bases of every case into an avatar.
pub fn cmd_embed(ctx: &Context) -> Result<(), CliError> {
    let ds = dataset(ctx)?;
    let (rows, cols) = ds.roi.shape();
    let cfg = &ctx.config.embedding;
    for &method in &ctx.config.factorization.methods {
        ds.cases.par_iter().try_for_each(|c| -> Result<(), CliError> {
            let basis_path = require(method_dir(ctx, FACTOR_DIR, method).join(&c.case_id).join("basis.csv"), "factorize")?;
            check_fresh(ctx, &basis_path);
            let bases = io::read_matrix_csv(&basis_path)?;
            let mut avatar = embed(&bases, rows, cols, cfg.weighting)?;
            avatar.source_method = Some(method);
            if cfg.normalize {
                avatar = normalize_by_reference(&avatar, &ds.roi)?;
            }
            let mut header = ctx.header("embed").with("method", method).with("case_id", &c.case_id).with("log_scale", io::fmt_f64(avatar.log_scale));
            if let Some(n) = avatar.normalization {
                header.push("reference_mean", io::fmt_f64(n.mean));
                header.push("reference_std", io::fmt_f64(n.std));
            }
            let path = avatar_path(ctx, method, &c.case_id);
            io::write_matrix_csv(&path, &avatar.image, &header)?;
            io::write_png16_preview(&path.with_extension("png"), &avatar.image)?;
            Ok(())
        })?;
        log::info!("embed: {method} done");
    }
    Ok(())
}

fn read_avatar(ctx: &Context, method: Method, case_id: &str) -> Result<Avatar, CliError> {
    let path = require(avatar_path(ctx, method, case_id), "embed")?;
    check_fresh(ctx, &path);
    let image: Matrix = io::read_matrix_csv(&path)?;
    Ok(Avatar { image, source_method: Some(method), normalization: None, log_scale: 0.0 })
}

pub fn feature_path(ctx: &Context, method: Method) -> PathBuf {
    ctx.out(FEATURE_DIR).join(format!("{method}.csv"))
}

/// Thermomic feature matrix of every method.
pub fn cmd_features(ctx: &Context) -> Result<Vec<FeatureMatrix>, CliError> {
    let ds = dataset(ctx)?;
    let mut out = Vec::new();
    for &method in &ctx.config.factorization.methods {
        let vectors = ds
            .cases
            .par_iter()
            .map(|c| Ok(extract_thermomics(&read_avatar(ctx, method, &c.case_id)?, &ds.roi)?))
            .collect::<Result<Vec<_>, CliError>>()?;
        let fm = FeatureMatrix::from_vectors(vectors, ds.labels(), ds.case_ids())?;
        fm.write_csv(&feature_path(ctx, method), &ctx.header("features").with("method", method))?;
        log::info!("features: {method} {} x {}", fm.n_cases(), fm.n_features());
        out.push(fm);
    }
    Ok(out)
}

fn read_features(ctx: &Context, method: Method) -> Result<FeatureMatrix, CliError> {
    let path = require(feature_path(ctx, method), "features")?;
    check_fresh(ctx, &path);
    Ok(FeatureMatrix::read_csv(&path)?.0)
}

pub fn selection_path(ctx: &Context, method: Method) -> PathBuf {
    ctx.out(SELECTION_DIR).join(format!("{method}.csv"))
}

/// Block HSIC lasso selection report per method.
pub fn cmd_select(ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.config.selection;
    for &method in &ctx.config.factorization.methods {
        let fm = read_features(ctx, method)?;
        let params = BlockParams { delta: s.delta, feature_kernel: s.feature_kernel, label_kernel: s.label_kernel, seed: ctx.stage_seed(&format!("select/{method}")) };
        let result = match s.lambda {
            Some(lambda) => block_hsic_lasso(&fm, lambda, &params)?,
            None => block_hsic_lasso_path(&fm, s.top_k, s.path_points, &params)?,
        };
        for name in &result.dropped {
            log::warn!("select: {method}: feature {name:?} is constant in every block and was dropped");
        }
        write_selection_csv(&selection_path(ctx, method), &result, &ctx.header("select").with("method", method).with("top_k", s.top_k))?;
        log::info!("select: {method}: {} nonzero weights", result.nonzero());
    }
    Ok(())
}

/// LOOCV of a forest on the top-k selected features of each method.
pub fn cmd_classify(ctx: &Context) -> Result<Vec<(Method, EvalReport)>, CliError> {
    let a = &ctx.config.analysis;
    let dir = ctx.out(CLASSIFY_DIR);
    let mut reports = Vec::new();
    for &method in &ctx.config.factorization.methods {
        let fm = read_features(ctx, method)?;
        let sel_path = require(selection_path(ctx, method), "select")?;
        check_fresh(ctx, &sel_path);
        let ranked = read_selection_csv(&sel_path)?;
        let names: Vec<&str> = ranked.iter().take(ctx.config.selection.top_k).map(|r| r.0.as_str()).collect();
        if names.is_empty() {
            return Err(CliError::Numerical(format!("selection for {method} has no feature with positive weight")));
        }
        let sub = fm.select(&names)?;
        let params = ForestParams { n_trees: a.n_trees, max_depth: a.max_depth, min_leaf: a.min_leaf, seed: ctx.stage_seed(&format!("classify/{method}")) };
        let report = loocv(&sub, &params)?;
        write_report_files(&dir, method.as_str(), &report, &ctx.header("classify").with("method", method).with("features", names.join(";")))?;
        log::info!("classify: {method}: accuracy {:.3} in {:.1}s", report.accuracy, report.runtime_secs);
        reports.push((method, report));
    }
    let rows: Vec<(String, EvalReport)> = reports.iter().map(|(m, r)| (m.display_name().to_string(), r.clone())).collect();
    let header = ctx.header("classify").with("cases", rows.first().map_or(0, |r| r.1.n_cases));
    io::write_text(&dir.join("eval.csv"), &eval_table_csv(&rows, &header))?;
    io::write_text(&dir.join("eval.txt"), &eval_table_text(&rows))?;
    Ok(reports)
}

/// Noise robustness sweep on one case.
pub fn cmd_sweep(ctx: &Context) -> Result<NoiseSweepReport, CliError> {
    let ds = dataset(ctx)?;
    let cfg = &ctx.config.sweep;
    let entry = match &cfg.case {
        Some(id) => ds.cases.iter().find(|c| &c.case_id == id).ok_or_else(|| CliError::ConfigInvalid(format!("sweep.case {id:?} is not in the dataset")))?,
        None => ds.cases.iter().find(|c| c.label).unwrap_or(&ds.cases[0]),
    };
    let (signal, noise) = match (&cfg.signal_mask, &cfg.noise_mask) {
        (Some(s), Some(n)) => (load_mask(s)?, load_mask(n)?),
        _ if !entry.lesions.is_empty() => snr_regions(&ds.roi, &entry.lesions, cfg.margin),
        _ => return Err(CliError::ConfigInvalid(format!("case {:?} has no lesions; set sweep.signal_mask and sweep.noise_mask", entry.case_id))),
    };
    let seq = ds.load_case(entry)?;
    let setup = SweepSetup { options: ctx.config.factorization.options(), scaling: ctx.config.input.scaling };
    let report = noise_robustness_sweep(&seq, &ctx.config.factorization.methods, &cfg.levels, &setup, &signal, &noise, ctx.stage_seed("sweep"))?;
    report.write_csv(&ctx.out(SWEEP_DIR).join("noise_sweep.csv"), &ctx.header("sweep").with("case_id", &entry.case_id))?;
    log::info!("sweep: case {} done", entry.case_id);
    Ok(report)
}

/// Everything in stage order.
pub fn cmd_pipeline(ctx: &Context) -> Result<Vec<(Method, EvalReport)>, CliError> {
    if ctx.config.input.source == Source::Phantom {
        cmd_phantom(ctx)?;
    }
    cmd_factorize(ctx)?;
    cmd_embed(ctx)?;
    cmd_features(ctx)?;
    cmd_select(ctx)?;
    let reports = cmd_classify(ctx)?;
    cmd_sweep(ctx)?;
    Ok(reports)
}
