#![allow(dead_code)]

use std::collections::BTreeMap;

use geotopic::harness::ExperimentConfig;

/// Small, fast synthetic experiment: a 10×10 grid, K = 5, one radius.
pub const BASE: &[(&str, &str)] = &[
    ("lexicon", "slang.txt"),
    ("feature_sets", "baseline"),
    ("classifiers", "gaussian_nb"),
    ("k", "5"),
    ("radius_km", "50"),
    ("multiplier", "0"),
    ("lda_sweeps", "200"),
    ("infer_sweeps", "50"),
    ("synth.k", "5"),
    ("synth.vocab_size", "200"),
    ("synth.docs_per_region", "40"),
    ("synth.kernel_bandwidth", "2"),
    ("synth.noise_sd", "2"),
    ("synth.gain", "100"),
];

/// `BASE` with `overrides` applied on top.
pub fn config(overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut map: BTreeMap<&str, &str> = BASE.iter().copied().collect();
    map.extend(overrides.iter().copied());
    let text: String = map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    ExperimentConfig::parse(&text).expect("valid test config")
}

/// Sparse corpora on a strongly autocorrelated field.
pub const SPARSE: &[(&str, &str)] = &[
    ("feature_sets", "smooth"),
    ("multiplier", "0,0.25,0.5,1,2,4"),
    ("synth.sparse_fraction", "0.5"),
    ("synth.sparse_docs_per_region", "10"),
];
