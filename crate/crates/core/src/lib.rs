//! Low-rank analysis of thermal image sequences.
//!
//! The crate covers the whole chain from raw frames to a diagnostic model:
//!
//! * [`thermal_data`]: frame sequences, the stacked heat matrix and ROI masks.
//! * [`factorization`]: PCT, NMF, sparse NMF, semi-NMF and deep semi-NMF.
//! * [`embedding`]: sparsity measure and membership embedding of a basis set
//!   into a single avatar image.
//! * [`thermomics`]: the 300-feature thermomic vector of an avatar.
//! * [`hsic`]: block HSIC lasso feature selection.
//! * [`analysis`]: random forest LOOCV, Mann–Whitney U, ROC/AUC, SNR and the
//!   noise robustness sweep.
//! * [`phantom`]: Pennes bioheat finite-difference phantoms and synthetic
//!   cohorts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod embedding;
pub mod factorization;
pub mod hsic;
pub mod io;
pub mod linalg;
pub mod phantom;
pub mod rng;
pub mod thermal_data;
pub mod thermomics;

pub use analysis::{EvalReport, NoiseSweepReport};
pub use embedding::Avatar;
pub use factorization::{DeepFactorization, Factorization, Method};
pub use hsic::SelectionResult;
pub use thermal_data::{HeatMatrix, InputScaling, Mask, RoiMask, ThermalSequence};
pub use thermomics::{FeatureMatrix, FeatureVector};

/// Crate version written into artifact headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
