//! Shared fixtures for the benchmarks under `benches/`.

use raindrop_core::data::{synth_generate, SynthConfig};
use raindrop_core::train::config_for;
use raindrop_core::{Dataset, ModelParams};

/// The desk-scale synthetic corpus and freshly initialized parameters for it.
pub fn fixture(n_sensors: usize, obs: usize) -> (Dataset, ModelParams) {
    let ds = synth_generate(&SynthConfig::new(n_sensors, 64, obs, 0.6, 0)).expect("valid synthetic config");
    let params = ModelParams::init(&config_for(&ds), 0).expect("valid model config");
    (ds, params)
}
