//! Shared fixtures for the criterion benchmarks.

use trajod_core::synth::{generate, SynthConfig, SynthData};

/// The default separable synthetic benchmark at a reduced sample count.
pub fn fixture(n_train: usize, n_test: usize) -> SynthData {
    let cfg = SynthConfig {
        n_train,
        n_test_in: n_test,
        n_test_out: n_test,
        ..SynthConfig::separable(1)
    };
    generate(&cfg).expect("default synthetic config is valid")
}
