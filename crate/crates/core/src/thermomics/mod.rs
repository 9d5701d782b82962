//! Thermomics: the fixed 300-feature description of an avatar's ROI.
//!
//! Composition (the shipped manifest lists every name in order):
//!
//! | block | count |
//! |-------|-------|
//! | first-order statistics of the raw ROI | 11 |
//! | TLCM: 6 statistics × distances 1–5 × 5 angles | 150 |
//! | filter bank: 9 images × 14 statistics + `Wavelet-HH` × 13 | 139 |
//!
//! The 14 statistics of a filtered image are the 11 first-order ones plus
//! kurtosis, energy and entropy; `Wavelet-HH` omits entropy. Filters run on
//! the avatar with out-of-ROI pixels replaced by the ROI mean, so no feature
//! depends on pixels outside the mask.

mod filters;
mod first_order;
mod tlcm;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::Avatar;
use crate::io::{self, Header, IoError};
use crate::thermal_data::{Mask, RoiMask};
use crate::Matrix;

pub use filters::{correlate, filter_bank, gabor_kernel, haar_subbands, log_kernel, FILTER_NAMES};
pub use first_order::{extra_features, first_order_features, percentile_sorted, EXTRA_TOKENS, FIRST_ORDER_TOKENS};
pub use tlcm::{quantize, tlcm, tlcm_features, tlcm_quantized, TlcmAngle, TlcmStats, STAT_NAMES};

pub const FEATURE_COUNT: usize = 300;
pub const TLCM_DISTANCES: [usize; 5] = [1, 2, 3, 4, 5];
pub const TLCM_LEVELS: usize = 16;
pub const MANIFEST_VERSION: &str = "thermomics-v1";
pub const MANIFEST_TEXT: &str = include_str!("../../manifest/thermomics-v1.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermomicsError {
    #[error("need at least 2 ROI pixels, got {0}")]
    TooFewPixels(usize),
    #[error("no valid pixel pairs at distance {distance}, angle {angle}")]
    NoValidPairs { distance: usize, angle: &'static str },
    #[error("co-occurrence distance must be >= 1, got {0}")]
    BadOffset(usize),
    #[error("need at least 2 quantization levels, got {0}")]
    BadLevels(usize),
    #[error("co-occurrence matrix sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("image {0}x{1} is smaller than 8x8")]
    ImageTooSmall(usize, usize),
    #[error("mask is {got:?}, image is {expected:?}")]
    MaskShape { expected: (usize, usize), got: (usize, usize) },
    #[error("avatar contains non-finite values")]
    NonFinite,
    #[error("feature matrix: {0}")]
    Table(String),
}

fn build_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);
    for tok in FIRST_ORDER_TOKENS {
        names.push(format!("First order-{tok}"));
    }
    for d in TLCM_DISTANCES {
        for angle in TlcmAngle::ALL {
            for stat in STAT_NAMES {
                names.push(format!("{stat} {d}-{}", angle.label()));
            }
        }
    }
    for filter in FILTER_NAMES {
        for tok in FIRST_ORDER_TOKENS {
            names.push(format!("{filter}-firstorder-{tok}"));
        }
        let extras = if filter == "Wavelet-HH" { &EXTRA_TOKENS[..2] } else { &EXTRA_TOKENS[..] };
        for tok in extras {
            names.push(format!("{filter}-firstorder-{tok}"));
        }
    }
    names
}

/// The 300 feature names in output order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(build_names)
}

/// SHA-256 of the shipped manifest, lowercase hex.
pub fn manifest_hash() -> String {
    let digest = Sha256::digest(MANIFEST_TEXT.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Manifest text for the current composition.
pub fn render_manifest() -> String {
    let mut text = format!("# {MANIFEST_VERSION}\n");
    for name in feature_names() {
        text.push_str(name);
        text.push('\n');
    }
    text
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

fn fill_outside(image: &Matrix, roi: &Mask, fill: f64) -> Matrix {
    Matrix::from_fn(image.nrows(), image.ncols(), |i, j| if roi.get(i, j) { image[(i, j)] } else { fill })
}

/// Extract the 300 thermomic features of an avatar over the ROI.
pub fn extract_thermomics(avatar: &Avatar, roi: &RoiMask) -> Result<FeatureVector, ThermomicsError> {
    extract_from_image(&avatar.image, roi.mask())
}

pub fn extract_from_image(image: &Matrix, roi: &Mask) -> Result<FeatureVector, ThermomicsError> {
    if roi.shape() != image.shape() {
        return Err(ThermomicsError::MaskShape { expected: image.shape(), got: roi.shape() });
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(ThermomicsError::NonFinite);
    }
    let pixels = roi.gather(image);
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.extend(first_order_features(&pixels)?);

    let q = quantize(image, roi, TLCM_LEVELS);
    for d in TLCM_DISTANCES {
        for angle in TlcmAngle::ALL {
            let p = tlcm_quantized(&q, image.nrows(), image.ncols(), d, angle, TLCM_LEVELS)?;
            values.extend(tlcm_features(&p)?.to_array());
        }
    }

    let roi_mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
    let filled = fill_outside(image, roi, roi_mean);
    for (name, response) in filter_bank(&filled)? {
        let inside = roi.gather(&response);
        values.extend(first_order_features(&inside)?);
        let extra = extra_features(&inside)?;
        let take = if name == "Wavelet-HH" { 2 } else { 3 };
        values.extend(&extra[..take]);
    }
    debug_assert_eq!(values.len(), FEATURE_COUNT);
    Ok(FeatureVector { names: feature_names().to_vec(), values })
}

/// One feature vector per case plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    /// `n_cases` rows of `names.len()` values.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub case_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<bool>, case_ids: Vec<String>) -> Result<Self, ThermomicsError> {
        if rows.len() != labels.len() || rows.len() != case_ids.len() {
            return Err(ThermomicsError::Table(format!("{} rows, {} labels, {} case ids", rows.len(), labels.len(), case_ids.len())));
        }
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != names.len()) {
            return Err(ThermomicsError::Table(format!("row {i} has wrong width")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ThermomicsError::Table("missing or non-finite value".into()));
        }
        Ok(Self { names, rows, labels, case_ids })
    }

    pub fn from_vectors(vectors: Vec<FeatureVector>, labels: Vec<bool>, case_ids: Vec<String>) -> Result<Self, ThermomicsError> {
        let names = vectors.first().map(|v| v.names.clone()).unwrap_or_else(|| feature_names().to_vec());
        if vectors.iter().any(|v| v.names != names) {
            return Err(ThermomicsError::Table("inconsistent feature names".into()));
        }
        Self::new(names, vectors.into_iter().map(|v| v.values).collect(), labels, case_ids)
    }

    pub fn n_cases(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keep only the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<FeatureMatrix, ThermomicsError> {
        let idx = names
            .iter()
            .map(|n| self.index_of(n).ok_or_else(|| ThermomicsError::Table(format!("no feature {n:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureMatrix {
            names: names.iter().map(|n| n.to_string()).collect(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&k| r[k]).collect()).collect(),
            labels: self.labels.clone(),
            case_ids: self.case_ids.clone(),
        })
    }

    pub fn to_csv(&self, header: &Header) -> Result<String, ThermomicsError> {
        let mut meta = Header::new().with("manifest", MANIFEST_VERSION).with("manifest_sha256", manifest_hash());
        meta.0.extend(header.0.iter().cloned());
        let mut writer = csv::Writer::from_writer(Vec::new());
        let table_err = |e: csv::Error| ThermomicsError::Table(e.to_string());
        let mut head: Vec<&str> = self.names.iter().map(String::as_str).collect();
        head.extend(["case_id", "label"]);
        writer.write_record(&head).map_err(table_err)?;
        for ((row, case), label) in self.rows.iter().zip(&self.case_ids).zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| io::fmt_f64(*v)).collect();
            rec.push(case.clone());
            rec.push(if *label { "1".into() } else { "0".into() });
            writer.write_record(&rec).map_err(table_err)?;
        }
        let body = String::from_utf8(writer.into_inner().map_err(|e| ThermomicsError::Table(e.to_string()))?)
            .map_err(|e| ThermomicsError::Table(e.to_string()))?;
        Ok(meta.render() + &body)
    }

    pub fn write_csv(&self, path: &Path, header: &Header) -> Result<(), IoError> {
        let text = self.to_csv(header).map_err(|e| IoError::Write { path: path.to_path_buf(), reason: e.to_string() })?;
        io::write_text(path, &text)
    }

    pub fn read_csv(path: &Path) -> Result<(FeatureMatrix, Header), IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| io::read_err(path, e))?;
        let header = Header::parse(&text);
        let malformed = |reason: String| IoError::Malformed { path: path.to_path_buf(), reason };
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let head = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
        let width = head.len();
        if width < 2 || &head[width - 2] != "case_id" || &head[width - 1] != "label" {
            return Err(malformed("last columns must be case_id,label".into()));
        }
        let names: Vec<String> = head.iter().take(width - 2).map(str::to_string).collect();
        let (mut rows, mut labels, mut case_ids) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            let row = rec
                .iter()
                .take(width - 2)
                .map(|v| v.parse::<f64>().map_err(|e| malformed(format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
            case_ids.push(rec[width - 2].to_string());
            labels.push(match &rec[width - 1] {
                "1" => true,
                "0" => false,
                other => return Err(malformed(format!("label {other:?}"))),
            });
        }
        let fm = FeatureMatrix::new(names, rows, labels, case_ids).map_err(|e| malformed(e.to_string()))?;
        Ok((fm, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use std::collections::HashSet;

    fn random_image(seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(32, 32, |i, j| 30.0 + ((i as f64 - 16.0).powi(2) + (j as f64 - 16.0).powi(2)).sqrt() * 0.1 + rng.random::<f64>())
    }

    #[test]
    fn names_are_unique_and_complete() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        let unique: HashSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), FEATURE_COUNT);
        for expected in ["Dissimilarity 2-π", "Homogeneity 4-π/2", "Contrast 1-3π/4", "ASM 5-3π/4", "Energy 5-π/2", "Correlation 3-π/4", "First order-min", "First order-MAD", "First order-Gray range", "LOG-1-0-firstorder-interquartile"] {
            assert!(names.iter().any(|n| n == expected), "{expected}");
        }
    }

    #[test]
    fn shipped_manifest_matches_composition() {
        assert_eq!(MANIFEST_TEXT, render_manifest());
        assert_eq!(manifest_hash().len(), 64);
    }

    #[test]
    #[ignore = "regenerates manifest/thermomics-v1.txt"]
    fn write_manifest() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("manifest/thermomics-v1.txt");
        std::fs::write(path, render_manifest()).unwrap();
    }

    #[test]
    fn extraction_is_deterministic_and_roi_local() {
        let img = random_image(3);
        let roi = RoiMask::new(Mask::disk(32, 32, (16.0, 16.0), 12.0), None).unwrap();
        let avatar = Avatar { image: img.clone(), source_method: None, normalization: None, log_scale: 0.0 };
        let a = extract_thermomics(&avatar, &roi).unwrap();
        let b = extract_thermomics(&avatar, &roi).unwrap();
        assert_eq!(a.values.len(), FEATURE_COUNT);
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));

        let mut outside_changed = img.clone();
        for i in 0..32 {
            for j in 0..32 {
                if !roi.mask().get(i, j) {
                    outside_changed[(i, j)] = -1000.0 + (i * j) as f64;
                }
            }
        }
        let c = extract_from_image(&outside_changed, roi.mask()).unwrap();
        assert!(a.values.iter().zip(&c.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let roi = Mask::disk(32, 32, (16.0, 16.0), 12.0);
        let vectors: Vec<FeatureVector> = (0..3).map(|s| extract_from_image(&random_image(s), &roi).unwrap()).collect();
        let fm = FeatureMatrix::from_vectors(vectors, vec![true, false, true], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let path = dir.path().join("features.csv");
        fm.write_csv(&path, &Header::new().with("seed", 1)).unwrap();
        let (back, header) = FeatureMatrix::read_csv(&path).unwrap();
        assert_eq!(back, fm);
        assert_eq!(header.get("manifest_sha256"), Some(manifest_hash().as_str()));
        assert_eq!(header.get("seed"), Some("1"));
    }
}
