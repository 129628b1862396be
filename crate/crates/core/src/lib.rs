//! Region-level feature construction from geotagged short-text corpora.
//!
//! The pipeline ingests tokenized records, groups them into one document per
//! region, fits topic models by collapsed Gibbs sampling, and turns the
//! per-region topic mixtures into feature blocks: the raw mixtures, mixtures
//! smoothed over radius neighbors, and slang-only mixtures plus slang ratios.
//! Crude outcome rates are binned into six ordinal labels and a roster of
//! classifiers is evaluated across parameter sweeps.
//!
//! Everything can be exercised without private data through [`synth`], which
//! plants topic structure, spatial autocorrelation and rate signal in a grid
//! of synthetic regions.

pub mod classify;
pub mod corpus;
pub mod features;
pub mod geo;
pub mod harness;
pub mod labels;
pub mod seeds;
pub mod synth;
pub mod topics;

pub use classify::{Classifier, ClassifierParams, ClassifierRegistry, Dataset, Trainer};
pub use corpus::{RawRecord, SlangLexicon, TokenizedRecord, Tokenizer, Vocabulary};
pub use features::{BlockKind, FeatureBlock, FeatureMatrix};
pub use geo::{AdjacencyGraph, Region, RegionRegistry};
pub use labels::{Binning, Label, LabelVector, RateTable};
pub use topics::{LdaConfig, LdaModel, TopicDistribution};
