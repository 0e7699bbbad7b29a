//! End-to-end runs: configuration, result files, stage runners with exit
//! codes, and the simulated ablation grid.

pub mod ablation;
pub mod config;
pub mod result_file;
pub mod run;

pub use ablation::{run_ablation, summarize, AblationGrid, AblationRow, AblationSummary, Variant};
pub use config::{AlignSettings, CalibrationSettings, ConfigError, EvaluationSettings, RunConfig};
pub use result_file::{ResultFile, ResultFileError};
pub use run::{run_full_pipeline, with_jobs, PipelineError, PipelineOutput, Stage};
