//! Shared fixtures for the benchmarks.

use psp_core::data::{generate_sbm, SbmConfig};
use psp_core::experiment::make_split;
use psp_core::{EncoderParams, ExperimentConfig, GraphData, LabeledSet, Tensor};

/// The desk-scale homophilous graph: 300 nodes, 3 classes, h = 0.8.
pub fn desk_graph() -> GraphData {
    generate_sbm(&SbmConfig::default()).expect("default SBM is valid")
}

/// Deterministic dense matrix with entries in [-1, 1).
pub fn dense(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let data = (0..rows * cols)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

/// Freshly initialized, frozen encoders and the 3-shot training set of seed 0.
pub fn frozen_setup(g: &GraphData, hidden_dim: usize) -> (EncoderParams, LabeledSet) {
    let mut params = EncoderParams::init(g.n_features(), hidden_dim, 0);
    params.frozen = true;
    let split = make_split(g, &ExperimentConfig::default(), 0).expect("split");
    let train = split.train_set(g.labels().expect("labels")).expect("train set");
    (params, train)
}
