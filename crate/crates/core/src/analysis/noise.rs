//! Noise robustness sweep: avatar SNR of each method as Gaussian noise is
//! added to the input sequence.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::stats::snr;
use super::AnalysisError;
use crate::embedding::{embed, Weighting};
use crate::factorization::{factorize, FactorizeOptions, Method};
use crate::io::{self, Header, IoError};
use crate::rng::{derive_seed, derived_rng};
use crate::thermal_data::{scale_sequence, stack_vectorize, InputScaling, Mask, ThermalSequence};
use crate::Matrix;

/// Default noise levels as fractions of the clean dynamic range.
pub const DEFAULT_LEVELS: [f64; 8] = [0.03, 0.05, 0.075, 0.10, 0.125, 0.15, 0.175, 0.20];

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSweepReport {
    pub methods: Vec<Method>,
    /// Fractions of the dynamic range, strictly increasing.
    pub levels: Vec<f64>,
    /// `snr_db[method][level]`.
    pub snr_db: Vec<Vec<f64>>,
    /// SNR of the temporal-mean image of each noisy input.
    pub input_snr_db: Vec<f64>,
}

impl NoiseSweepReport {
    pub fn to_csv(&self, header: &Header) -> String {
        let mut text = header.render();
        text.push_str("method,noise_percent,snr_db\n");
        let mut row = |name: &str, level: f64, v: f64| {
            text.push_str(&format!("{name},{},{}\n", io::fmt_f64(level * 100.0), io::fmt_f64(v)));
        };
        for (li, &level) in self.levels.iter().enumerate() {
            row("input", level, self.input_snr_db[li]);
        }
        for (mi, m) in self.methods.iter().enumerate() {
            for (li, &level) in self.levels.iter().enumerate() {
                row(m.as_str(), level, self.snr_db[mi][li]);
            }
        }
        text
    }

    pub fn write_csv(&self, path: &std::path::Path, header: &Header) -> Result<(), IoError> {
        io::write_text(path, &self.to_csv(header))
    }
}

/// One standard-normal field per frame, shared by every noise level.
pub fn noise_field(seq: &ThermalSequence, seed: u64) -> Vec<Matrix> {
    let mut rng = derived_rng(seed, "noise-field");
    seq.frames().iter().map(|f| Matrix::from_fn(f.nrows(), f.ncols(), |_, _| StandardNormal.sample(&mut rng))).collect()
}

/// `frame + level · range · z` per frame.
pub fn add_noise(seq: &ThermalSequence, level: f64, field: &[Matrix]) -> Result<ThermalSequence, AnalysisError> {
    let (lo, hi) = seq.value_range();
    let scale = level * (hi - lo);
    let frames = seq.frames().iter().zip(field).map(|(f, z)| f + z * scale).collect();
    ThermalSequence::new(frames, seq.case_id(), seq.label()).map_err(|e| AnalysisError::Data(e.to_string()))
}

pub fn temporal_mean(seq: &ThermalSequence) -> Matrix {
    let mut acc = Matrix::zeros(seq.rows(), seq.cols());
    for f in seq.frames() {
        acc += f;
    }
    acc / seq.len() as f64
}

pub fn input_snr(seq: &ThermalSequence, signal: &Mask, noise: &Mask) -> Result<f64, AnalysisError> {
    snr(&temporal_mean(seq), signal, noise)
}

/// Factorization settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSetup {
    pub options: FactorizeOptions,
    pub scaling: InputScaling,
}

/// Avatar SNR of `method` on `seq`.
pub fn avatar_snr(seq: &ThermalSequence, method: Method, setup: &SweepSetup, signal: &Mask, noise: &Mask, seed: u64) -> Result<f64, AnalysisError> {
    let heat = stack_vectorize(&scale_sequence(seq, setup.scaling));
    let opts = &setup.options;
    let low_rank = factorize(heat.data(), method, opts, seed)?;
    let avatar = embed(&low_rank.bases(), seq.rows(), seq.cols(), Weighting::Basis)?;
    snr(&avatar.image, signal, noise)
}

pub fn noise_robustness_sweep(
    seq: &ThermalSequence,
    methods: &[Method],
    levels: &[f64],
    setup: &SweepSetup,
    signal: &Mask,
    noise: &Mask,
    seed: u64,
) -> Result<NoiseSweepReport, AnalysisError> {
    if levels.iter().any(|l| !(*l >= 0.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::BadLevels);
    }
    let field = noise_field(seq, seed);
    let noisy: Vec<ThermalSequence> = levels.iter().map(|&l| add_noise(seq, l, &field)).collect::<Result<_, _>>()?;
    let input_snr_db = noisy.iter().map(|s| input_snr(s, signal, noise)).collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> = (0..methods.len()).flat_map(|m| (0..levels.len()).map(move |l| (m, l))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(m, l)| avatar_snr(&noisy[l], methods[m], setup, signal, noise, derive_seed(seed, methods[m].as_str())))
        .collect::<Result<_, _>>()?;
    let snr_db = values.chunks(levels.len().max(1)).map(<[f64]>::to_vec).collect();
    Ok(NoiseSweepReport { methods: methods.to_vec(), levels: levels.to_vec(), snr_db, input_snr_db })
}
