//! Experiment orchestration: configuration, the end-to-end pipeline, grid
//! sweeps, reports and plots.

pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;

use std::fmt::Display;
use std::path::PathBuf;

use thiserror::Error;

pub use config::{ExperimentConfig, FeatureSet, SmoothMethod, SynthConfig};
pub use pipeline::{run_pipeline, sweep, Inputs, Prepared, RowOutcome, RowSpec, TopicStage};
pub use plot::{emit_plot, plot_points, PlotPoint};
pub use report::{ExperimentReport, Failure, ReportRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("{}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        HarnessError::Data {
            stage,
            message: message.into(),
        }
    }

    /// Process exit status: 1 for configuration problems, 2 for bad or
    /// missing data.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data { .. } | HarnessError::Io { .. } => 2,
        }
    }
}

pub(crate) fn stage_err<E: Display>(stage: &'static str) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::data(stage, e.to_string())
}

/// Exit status for a finished sweep.
pub const EXIT_PARTIAL: i32 = 3;
