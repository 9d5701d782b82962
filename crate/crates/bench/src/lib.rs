//! Shared inputs for the criterion benchmarks.

use deeptherm::phantom::{simulate, Lesion, PhantomParams};
use deeptherm::thermal_data::{stack_vectorize, ThermalSequence};
use deeptherm::Matrix;

/// A 64×64×23 phantom sequence with one lesion.
pub fn lesion_sequence(seed: u64) -> ThermalSequence {
    let params = PhantomParams {
        lesions: vec![Lesion { center: (30.0, 34.0), radius: 5.0, extra_q: 10_000.0 }],
        seed,
        ..PhantomParams::default()
    };
    simulate(&params, "bench", Some(true)).expect("default phantom parameters are valid")
}

pub fn heat_matrix(seed: u64) -> Matrix {
    stack_vectorize(&lesion_sequence(seed)).into_data()
}
