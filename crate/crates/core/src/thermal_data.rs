//! Thermal frame sequences, the stacked heat matrix and ROI masks.
//!
//! Vectorization is row-major: pixel `(i, j)` of an `M × N` frame lands on
//! row `i * N + j` of the heat matrix. Frame `t` is column `t`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 frames, found {found}")]
    MissingFrames { found: usize },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch { index: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("heat matrix has {rows} rows but {m}x{n} frames need {}", m * n)]
    ShapeInconsistent { rows: usize, m: usize, n: usize },
    #[error("frames must be at least 2x2, got {0}x{1}")]
    FrameTooSmall(usize, usize),
    #[error("non-finite value in frame {frame} at ({row}, {col})")]
    NonFinite { frame: usize, row: usize, col: usize },
    #[error("ROI mask has no pixels inside")]
    EmptyMask,
    #[error("reference region overlaps the ROI")]
    ReferenceOverlap,
    #[error("mask is {got:?}, frames are {expected:?}")]
    MaskShape { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// On-disk layout of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameFormat {
    /// One CSV per frame; values read verbatim.
    CsvFrames,
    /// 16-bit PGM, mapped linearly to `[0, 1]`.
    Pgm16,
    /// 16-bit PNG, mapped linearly to `[0, 1]`.
    Png16,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::CsvFrames => "csv",
            FrameFormat::Pgm16 => "pgm",
            FrameFormat::Png16 => "png",
        }
    }
}

/// A time-ordered stack of equally sized frames for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSequence {
    frames: Vec<Matrix>,
    case_id: String,
    label: Option<bool>,
}

impl ThermalSequence {
    pub fn new(frames: Vec<Matrix>, case_id: impl Into<String>, label: Option<bool>) -> Result<Self, DataError> {
        if frames.len() < 2 {
            return Err(DataError::MissingFrames { found: frames.len() });
        }
        let expected = frames[0].shape();
        if expected.0 < 2 || expected.1 < 2 {
            return Err(DataError::FrameTooSmall(expected.0, expected.1));
        }
        for (index, f) in frames.iter().enumerate() {
            if f.shape() != expected {
                return Err(DataError::DimensionMismatch { index, expected, got: f.shape() });
            }
            if let Some(pos) = f.iter().position(|v| !v.is_finite()) {
                // nalgebra storage is column-major
                let (row, col) = (pos % expected.0, pos / expected.0);
                return Err(DataError::NonFinite { frame: index, row, col });
            }
        }
        Ok(Self { frames, case_id: case_id.into(), label })
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Matrix> {
        self.frames
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn label(&self) -> Option<bool> {
        self.label
    }

    pub fn rows(&self) -> usize {
        self.frames[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.frames[0].ncols()
    }

    /// Number of frames τ.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Global min and max over all frames.
    pub fn value_range(&self) -> (f64, f64) {
        self.frames
            .iter()
            .flat_map(|f| f.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Per-sequence rescaling applied before factorization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputScaling {
    /// Values used as loaded.
    Raw,
    /// Linear map of the sequence range onto `[0, 1]`.
    #[default]
    Range,
    /// Every frame minus the first frame.
    FirstFrame,
}

impl InputScaling {
    pub fn as_str(self) -> &'static str {
        match self {
            InputScaling::Raw => "raw",
            InputScaling::Range => "range",
            InputScaling::FirstFrame => "first-frame",
        }
    }
}

/// Rescale a sequence. A constant sequence maps to zeros under `Range`.
pub fn scale_sequence(seq: &ThermalSequence, scaling: InputScaling) -> ThermalSequence {
    let frames = match scaling {
        InputScaling::Raw => seq.frames.clone(),
        InputScaling::Range => {
            let (lo, hi) = seq.value_range();
            let span = hi - lo;
            seq.frames.iter().map(|f| f.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })).collect()
        }
        InputScaling::FirstFrame => seq.frames.iter().map(|f| f - &seq.frames[0]).collect(),
    };
    ThermalSequence { frames, case_id: seq.case_id.clone(), label: seq.label }
}

/// `MN × τ` matrix of row-major vectorized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMatrix {
    data: Matrix,
    m_rows: usize,
    n_cols: usize,
}

impl HeatMatrix {
    pub fn new(data: Matrix, m_rows: usize, n_cols: usize) -> Result<Self, DataError> {
        if data.nrows() != m_rows * n_cols {
            return Err(DataError::ShapeInconsistent { rows: data.nrows(), m: m_rows, n: n_cols });
        }
        Ok(Self { data, m_rows, n_cols })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    pub fn frame_rows(&self) -> usize {
        self.m_rows
    }

    pub fn frame_cols(&self) -> usize {
        self.n_cols
    }

    /// Inverse of [`stack_vectorize`].
    pub fn unstack(&self, case_id: impl Into<String>, label: Option<bool>) -> Result<ThermalSequence, DataError> {
        let frames = (0..self.data.ncols())
            .map(|t| vector_to_image(self.data.column(t).as_slice(), self.m_rows, self.n_cols))
            .collect();
        ThermalSequence::new(frames, case_id, label)
    }
}

/// Row-major reshape of a length-`M·N` slice into an `M × N` image.
pub fn vector_to_image(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_row_slice(rows, cols, v)
}

/// Row-major vectorization of an image.
pub fn image_to_vector(img: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.len());
    for i in 0..img.nrows() {
        for j in 0..img.ncols() {
            out.push(img[(i, j)]);
        }
    }
    out
}

/// Stack the frames of a sequence as the columns of the heat matrix.
pub fn stack_vectorize(seq: &ThermalSequence) -> HeatMatrix {
    let (m, n) = (seq.rows(), seq.cols());
    let mut data = Matrix::zeros(m * n, seq.len());
    for (t, frame) in seq.frames().iter().enumerate() {
        for i in 0..m {
            for j in 0..n {
                data[(i * n + j, t)] = frame[(i, j)];
            }
        }
    }
    HeatMatrix { data, m_rows: m, n_cols: n }
}

/// Boolean image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![true; rows * cols] }
    }

    /// Filled disk of the given center and radius (pixels).
    pub fn disk(rows: usize, cols: usize, center: (f64, f64), radius: f64) -> Self {
        Self::from_fn(rows, cols, |i, j| {
            let (di, dj) = (i as f64 - center.0, j as f64 - center.1);
            di * di + dj * dj <= radius * radius
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Coordinates of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.data.iter().enumerate().filter(|(_, b)| **b).map(move |(k, _)| (k / cols, k % cols))
    }

    /// Values of `img` at set pixels, row-major.
    pub fn gather(&self, img: &Matrix) -> Vec<f64> {
        self.pixels().map(|(i, j)| img[(i, j)]).collect()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!(self.shape(), other.shape());
        Mask { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect() }
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        assert_eq!(self.shape(), other.shape());
        Mask { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| *a && !*b).collect() }
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !(*a && *b))
    }
}

/// Breast ROI plus the optional reference-label region used for
/// normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    mask: Mask,
    reference: Option<Mask>,
}

impl RoiMask {
    pub fn new(mask: Mask, reference: Option<Mask>) -> Result<Self, DataError> {
        if mask.count() == 0 {
            return Err(DataError::EmptyMask);
        }
        if let Some(r) = &reference {
            if r.shape() != mask.shape() {
                return Err(DataError::MaskShape { expected: mask.shape(), got: r.shape() });
            }
            if !mask.is_disjoint(r) {
                return Err(DataError::ReferenceOverlap);
            }
        }
        Ok(Self { mask, reference })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn reference(&self) -> Option<&Mask> {
        self.reference.as_ref()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }
}

fn frame_files(dir: &Path, format: FrameFormat) -> Result<Vec<PathBuf>, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| DataError::UnreadableFile { path: dir.to_path_buf(), reason: e.to_string() })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case(format.extension())))
        .collect();
    files.sort();
    Ok(files)
}

fn read_frame(path: &Path, format: FrameFormat) -> Result<Matrix, DataError> {
    let unreadable = |reason: String| DataError::UnreadableFile { path: path.to_path_buf(), reason };
    match format {
        FrameFormat::CsvFrames => io::read_matrix_csv(path).map_err(|e| unreadable(e.to_string())),
        FrameFormat::Pgm16 | FrameFormat::Png16 => {
            let img = image::open(path).map_err(|e| unreadable(e.to_string()))?.into_luma16();
            let (w, h) = img.dimensions();
            Ok(Matrix::from_fn(h as usize, w as usize, |i, j| img.get_pixel(j as u32, i as u32)[0] as f64 / 65535.0))
        }
    }
}

/// Load every frame file of `dir` with the format's extension, ordered by
/// file name.
pub fn load_sequence(dir: &Path, format: FrameFormat, case_id: &str, label: Option<bool>) -> Result<ThermalSequence, DataError> {
    let files = frame_files(dir, format)?;
    if files.len() < 2 {
        return Err(DataError::MissingFrames { found: files.len() });
    }
    let frames = files.iter().map(|p| read_frame(p, format)).collect::<Result<Vec<_>, _>>()?;
    ThermalSequence::new(frames, case_id, label)
}

/// Write frames as `frame_000.csv`, `frame_001.csv`, … (CSV, lossless).
pub fn write_sequence_csv(dir: &Path, seq: &ThermalSequence) -> Result<(), DataError> {
    let width = seq.len().to_string().len().max(3);
    for (t, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{t:0width$}.csv"));
        io::write_text(&path, &io::matrix_to_csv(frame))?;
    }
    Ok(())
}

/// Read a PGM/PNG mask; nonzero pixels are inside.
pub fn load_mask(path: &Path) -> Result<Mask, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok(Mask::from_fn(h as usize, w as usize, |i, j| img.get_pixel(j as u32, i as u32)[0] != 0))
}

/// Write a mask as an 8-bit PNG (255 inside, 0 outside).
pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), DataError> {
    let (rows, cols) = mask.shape();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(cols as u32, rows as u32, |x, y| Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }]));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io::write_err(parent, e))?;
    }
    img.save(path).map_err(|e| DataError::Io(io::write_err(path, e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn input_scaling() {
        let frames = vec![Matrix::from_row_slice(2, 2, &[30.0, 31.0, 32.0, 34.0]), Matrix::from_row_slice(2, 2, &[31.0, 33.0, 35.0, 38.0])];
        let seq = ThermalSequence::new(frames, "s", Some(true)).unwrap();
        assert_eq!(scale_sequence(&seq, InputScaling::Raw), seq);
        let r = scale_sequence(&seq, InputScaling::Range);
        assert_eq!(r.value_range(), (0.0, 1.0));
        assert_eq!(r.frames()[1][(0, 1)], 3.0 / 8.0);
        let f = scale_sequence(&seq, InputScaling::FirstFrame);
        assert!(f.frames()[0].iter().all(|&v| v == 0.0));
        assert_eq!(f.frames()[1], Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let flat = ThermalSequence::new(vec![Matrix::repeat(2, 2, 5.0); 2], "c", None).unwrap();
        assert_eq!(scale_sequence(&flat, InputScaling::Range).value_range(), (0.0, 0.0));
    }

    fn random_sequence(m: usize, n: usize, tau: usize, seed: u64) -> ThermalSequence {
        let mut rng = crate::rng::rng_from_seed(seed);
        let frames = (0..tau).map(|_| Matrix::from_fn(m, n, |_, _| rng.random_range(-5.0..40.0))).collect();
        ThermalSequence::new(frames, "case", None).unwrap()
    }

    #[test]
    fn row_major_column() {
        let f = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let seq = ThermalSequence::new(vec![f.clone(), f], "c", None).unwrap();
        let x = stack_vectorize(&seq);
        assert_eq!(x.data().column(0).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unstack_column_back_to_frame() {
        let data = Matrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let seq = HeatMatrix::new(data, 2, 2).unwrap().unstack("c", None).unwrap();
        assert_eq!(seq.frames()[0], Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn round_trip_is_identity() {
        let seq = random_sequence(8, 8, 5, 3);
        let x = stack_vectorize(&seq);
        let back = x.unstack("case", None).unwrap();
        assert_eq!(back, seq);
        assert_eq!(stack_vectorize(&back), x);
    }

    #[test]
    fn shape_inconsistent() {
        let err = HeatMatrix::new(Matrix::zeros(8, 2), 3, 3).unwrap_err();
        assert!(matches!(err, DataError::ShapeInconsistent { rows: 8, m: 3, n: 3 }));
    }

    #[test]
    fn full_size_heat_matrix() {
        let seq = random_sequence(64, 64, 23, 1);
        let x = stack_vectorize(&seq);
        assert_eq!(x.data().shape(), (4096, 23));
    }

    #[test]
    fn column_statistics_match_frame() {
        let seq = random_sequence(6, 7, 3, 9);
        let x = stack_vectorize(&seq);
        for (t, f) in seq.frames().iter().enumerate() {
            let col = x.data().column(t);
            assert_eq!(col.max(), f.max());
            assert_eq!(col.min(), f.min());
            assert!((col.mean() - f.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_invariants() {
        assert!(matches!(ThermalSequence::new(vec![Matrix::zeros(3, 3)], "c", None), Err(DataError::MissingFrames { found: 1 })));
        let bad = vec![Matrix::zeros(3, 3), Matrix::zeros(2, 3)];
        assert!(matches!(ThermalSequence::new(bad, "c", None), Err(DataError::DimensionMismatch { index: 1, .. })));
        let mut f = Matrix::zeros(3, 3);
        f[(1, 2)] = f64::NAN;
        let err = ThermalSequence::new(vec![Matrix::zeros(3, 3), f], "c", None).unwrap_err();
        assert!(matches!(err, DataError::NonFinite { frame: 1, row: 1, col: 2 }));
    }

    #[test]
    fn roi_reference_must_be_disjoint() {
        let roi = Mask::from_fn(4, 4, |i, _| i >= 2);
        let overlapping = Mask::from_fn(4, 4, |i, _| i >= 1);
        assert!(matches!(RoiMask::new(roi.clone(), Some(overlapping)), Err(DataError::ReferenceOverlap)));
        assert!(matches!(RoiMask::new(Mask::from_fn(4, 4, |_, _| false), None), Err(DataError::EmptyMask)));
        let reference = Mask::from_fn(4, 4, |i, _| i == 0);
        assert!(RoiMask::new(roi, Some(reference)).is_ok());
    }

    #[test]
    fn load_csv_directory() {
        let dir = tempfile::tempdir().unwrap();
        let seq = random_sequence(64, 64, 23, 5);
        write_sequence_csv(dir.path(), &seq).unwrap();
        let loaded = load_sequence(dir.path(), FrameFormat::CsvFrames, "case", None).unwrap();
        assert_eq!((loaded.len(), loaded.rows(), loaded.cols()), (23, 64, 64));
        assert_eq!(loaded, seq);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        io::write_text(&dir.path().join("a.csv"), "1,2\n3,4\n").unwrap();
        assert!(matches!(load_sequence(dir.path(), FrameFormat::CsvFrames, "c", None), Err(DataError::MissingFrames { found: 1 })));

        let small = Matrix::zeros(32, 32);
        io::write_text(&dir.path().join("b.csv"), &io::matrix_to_csv(&Matrix::zeros(64, 64))).unwrap();
        io::write_text(&dir.path().join("c.csv"), &io::matrix_to_csv(&small)).unwrap();
        io::write_text(&dir.path().join("a.csv"), &io::matrix_to_csv(&Matrix::zeros(64, 64))).unwrap();
        assert!(matches!(load_sequence(dir.path(), FrameFormat::CsvFrames, "c", None), Err(DataError::DimensionMismatch { .. })));

        io::write_text(&dir.path().join("c.csv"), "1,x\n").unwrap();
        assert!(matches!(load_sequence(dir.path(), FrameFormat::CsvFrames, "c", None), Err(DataError::UnreadableFile { .. })));
    }

    #[test]
    fn load_png16_and_pgm16() {
        let dir = tempfile::tempdir().unwrap();
        for (k, value) in [0u16, 65535].iter().enumerate() {
            let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(3, 2, |x, _| Luma([if x == 0 { *value } else { 32768 }]));
            img.save(dir.path().join(format!("f{k}.png"))).unwrap();
            img.save_with_format(dir.path().join(format!("f{k}.pgm")), image::ImageFormat::Pnm).unwrap();
        }
        for format in [FrameFormat::Png16, FrameFormat::Pgm16] {
            let seq = load_sequence(dir.path(), format, "c", None).unwrap();
            assert_eq!((seq.rows(), seq.cols()), (2, 3));
            assert_eq!(seq.frames()[0][(0, 0)], 0.0);
            assert_eq!(seq.frames()[1][(1, 0)], 1.0);
            assert!((seq.frames()[1][(0, 2)] - 32768.0 / 65535.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Mask::disk(9, 11, (4.0, 5.0), 3.0);
        let path = dir.path().join("roi.png");
        write_mask(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }
}
