//! Pipeline configuration: a TOML file, dotted `key=value` overrides and
//! validation.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set`
//! overrides in command-line order, then the dedicated `--seed` and
//! `--output` flags.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use deeptherm::analysis::{ForestParams, DEFAULT_LEVELS};
use deeptherm::embedding::Weighting;
use deeptherm::factorization::{FactorizeOptions, Method, NmfSolver};
use deeptherm::hsic::Kernel;
use deeptherm::phantom::PhantomParams;
use deeptherm::thermal_data::{FrameFormat, InputScaling};
use deeptherm::thermomics::MANIFEST_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input: InputConfig,
    pub factorization: FactorizationConfig,
    pub embedding: EmbeddingConfig,
    pub thermomics: ThermomicsConfig,
    pub selection: SelectionConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("deeptherm-out"),
            input: InputConfig::default(),
            factorization: FactorizationConfig::default(),
            embedding: EmbeddingConfig::default(),
            thermomics: ThermomicsConfig::default(),
            selection: SelectionConfig::default(),
            analysis: AnalysisConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Synthetic cohort written by the `phantom` stage.
    #[default]
    Phantom,
    /// Existing frame directories listed in a manifest.
    Directory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub source: Source,
    pub scaling: InputScaling,
    pub phantom: CohortConfig,
    pub directory: DirectoryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_cases: usize,
    pub lesion_fraction: f64,
    pub params: PhantomParams,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self { n_cases: 60, lesion_fraction: 0.5, params: PhantomParams::default() }
    }
}

/// Layout of a directory input: `manifest` lists `case_id,label`; frames
/// of case `c` live in `path/c/`; mask paths are relative to `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectoryConfig {
    pub path: PathBuf,
    pub format: FrameFormat,
    pub manifest: PathBuf,
    pub roi: PathBuf,
    pub reference: Option<PathBuf>,
}

impl Default for DirectoryConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            format: FrameFormat::CsvFrames,
            manifest: PathBuf::from("cohort.csv"),
            roi: PathBuf::from("roi.png"),
            reference: Some(PathBuf::from("reference.png")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorizationConfig {
    pub methods: Vec<Method>,
    pub rank: usize,
    pub layer_sizes: Vec<usize>,
    pub lambda: f64,
    pub max_iters: usize,
    pub finetune_iters: usize,
    pub tol: f64,
    pub solver: NmfSolver,
}

impl Default for FactorizationConfig {
    fn default() -> Self {
        let o = FactorizeOptions::default();
        Self {
            methods: Method::ALL.to_vec(),
            rank: o.rank,
            layer_sizes: o.layer_sizes,
            lambda: o.lambda,
            max_iters: o.max_iters,
            finetune_iters: o.finetune_iters,
            tol: o.tol,
            solver: o.solver,
        }
    }
}

impl FactorizationConfig {
    pub fn options(&self) -> FactorizeOptions {
        FactorizeOptions {
            rank: self.rank,
            layer_sizes: self.layer_sizes.clone(),
            lambda: self.lambda,
            max_iters: self.max_iters,
            finetune_iters: self.finetune_iters,
            tol: self.tol,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub weighting: Weighting,
    /// Standardize each avatar by its reference region.
    pub normalize: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { weighting: Weighting::Basis, normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermomicsConfig {
    pub manifest: String,
}

impl Default for ThermomicsConfig {
    fn default() -> Self {
        Self { manifest: MANIFEST_VERSION.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub delta: usize,
    pub feature_kernel: Kernel,
    pub label_kernel: Kernel,
    pub top_k: usize,
    /// Fixed λ; when absent the λ path picks the smallest λ with at most
    /// `top_k` selected features.
    pub lambda: Option<f64>,
    pub path_points: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { delta: 20, feature_kernel: Kernel::Rbf, label_kernel: Kernel::Delta, top_k: 3, lambda: None, path_points: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let f = ForestParams::default();
        Self { n_trees: f.n_trees, max_depth: f.max_depth, min_leaf: f.min_leaf }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Noise std as fractions of the clean dynamic range.
    pub levels: Vec<f64>,
    /// Case to perturb; defaults to the first case labelled 1.
    pub case: Option<String>,
    /// Explicit signal and noise masks; phantom cohorts derive them from
    /// the lesion list when absent.
    pub signal_mask: Option<PathBuf>,
    pub noise_mask: Option<PathBuf>,
    /// Pixels between a lesion edge and the noise region.
    pub margin: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { levels: DEFAULT_LEVELS.to_vec(), case: None, signal_mask: None, noise_mask: None, margin: 2.0 }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::ConfigInvalid(msg.into())
}

/// Parse the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply one `dotted.key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| invalid(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("override key {key:?} is malformed")));
    }
    let mut at = table;
    for part in &parts[..parts.len() - 1] {
        let entry = at.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        at = entry.as_table_mut().ok_or_else(|| invalid(format!("override key {key:?}: {part:?} is not a table")))?;
    }
    at.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Read `path` (or start from defaults), apply overrides and validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: PipelineConfig = toml::from_str(&table.to_string()).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// sha256 of the canonical TOML form without `output_dir`.
    pub fn hash(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.remove("output_dir");
        hex::encode(Sha256::digest(table.to_string().as_bytes()))
    }

    /// Frame count when it is known before reading data.
    fn known_frames(&self) -> Option<usize> {
        match self.input.source {
            Source::Phantom => Some(self.input.phantom.params.frames),
            Source::Directory => None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let f = &self.factorization;
        if f.methods.is_empty() {
            return Err(invalid("factorization.methods is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(m) = f.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(invalid(format!("factorization.methods lists {m} twice")));
        }
        if f.rank == 0 {
            return Err(invalid("factorization.rank must be >= 1"));
        }
        if f.layer_sizes.is_empty() || f.layer_sizes.contains(&0) || f.layer_sizes.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid(format!("factorization.layer_sizes {:?} must be non-empty, non-increasing and >= 1", f.layer_sizes)));
        }
        if let Some(tau) = self.known_frames() {
            if f.rank > tau || f.layer_sizes[0] > tau {
                return Err(invalid(format!("factorization rank exceeds the {tau} frames per case")));
            }
        }
        if !(f.lambda >= 0.0) || !(f.tol >= 0.0) || f.max_iters == 0 {
            return Err(invalid("factorization.lambda and tol must be >= 0, max_iters >= 1"));
        }
        match self.input.source {
            Source::Phantom => {
                let c = &self.input.phantom;
                if c.n_cases < 3 {
                    return Err(invalid("input.phantom.n_cases must be >= 3"));
                }
                if !(0.0..=1.0).contains(&c.lesion_fraction) {
                    return Err(invalid("input.phantom.lesion_fraction must be in [0, 1]"));
                }
                c.params.validate().map_err(|e| invalid(format!("input.phantom.params: {e}")))?;
            }
            Source::Directory => {
                if self.input.directory.path.as_os_str().is_empty() {
                    return Err(invalid("input.directory.path is required for source = \"directory\""));
                }
            }
        }
        if self.thermomics.manifest != MANIFEST_VERSION {
            return Err(invalid(format!("thermomics.manifest {:?} is not available (have {MANIFEST_VERSION:?})", self.thermomics.manifest)));
        }
        let s = &self.selection;
        if s.delta < 2 || s.top_k == 0 || s.path_points < 2 {
            return Err(invalid("selection.delta must be >= 2, top_k >= 1, path_points >= 2"));
        }
        if s.lambda.is_some_and(|l| !(l >= 0.0)) {
            return Err(invalid("selection.lambda must be >= 0"));
        }
        if self.analysis.n_trees == 0 || self.analysis.min_leaf == 0 {
            return Err(invalid("analysis.n_trees and min_leaf must be >= 1"));
        }
        let levels = &self.sweep.levels;
        if levels.is_empty() || levels.iter().any(|l| !(*l >= 0.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep.levels must be non-empty, >= 0 and strictly increasing"));
        }
        if self.sweep.signal_mask.is_some() != self.sweep.noise_mask.is_some() {
            return Err(invalid("sweep.signal_mask and sweep.noise_mask must be given together"));
        }
        if !(self.sweep.margin >= 0.0) {
            return Err(invalid("sweep.margin must be >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_parse_typed_values() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "seed=7").unwrap();
        apply_override(&mut t, "factorization.methods=[\"pct\", \"nmf\"]").unwrap();
        apply_override(&mut t, "input.phantom.params.rows = 32").unwrap();
        apply_override(&mut t, "output_dir=/tmp/x").unwrap();
        let c: PipelineConfig = toml::from_str(&t.to_string()).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.factorization.methods, vec![Method::Pct, Method::Nmf]);
        assert_eq!(c.input.phantom.params.rows, 32);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn malformed_override() {
        let mut t = toml::Table::new();
        assert!(matches!(apply_override(&mut t, "seed"), Err(CliError::ConfigInvalid(_))));
        assert!(matches!(apply_override(&mut t, "a..b=1"), Err(CliError::ConfigInvalid(_))));
        apply_override(&mut t, "seed=1").unwrap();
        assert!(matches!(apply_override(&mut t, "seed.x=1"), Err(CliError::ConfigInvalid(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sede = 3"), Err(CliError::ConfigInvalid(_))));
        assert!(matches!(PipelineConfig::from_toml("[selection]\ntopk = 3"), Err(CliError::ConfigInvalid(_))));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { output_dir: PathBuf::from("elsewhere"), ..a.clone() };
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_errors() {
        let bad = |f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = PipelineConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(CliError::ConfigInvalid(_))));
        };
        bad(&|c| c.factorization.layer_sizes = vec![8, 12]);
        bad(&|c| c.factorization.methods = vec![]);
        bad(&|c| c.factorization.methods = vec![Method::Pct, Method::Pct]);
        bad(&|c| c.factorization.rank = 24);
        bad(&|c| c.input.phantom.params.dt = 1e6);
        bad(&|c| c.input.source = Source::Directory);
        bad(&|c| c.thermomics.manifest = "thermomics-v0".into());
        bad(&|c| c.sweep.levels = vec![0.1, 0.05]);
        bad(&|c| c.selection.lambda = Some(-1.0));
    }
}
