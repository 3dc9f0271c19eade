//! Command-line front end: count-file ingestion, replicate merging, run
//! configuration, report serialization and plot-ready tables.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod input;
pub mod report;

pub use commands::{analysis_report, cmd_ci, cmd_coverage, cmd_curve, cmd_fit, fit_report};
pub use config::{CalibSettings, CoverageConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use input::{merge_replicates, parse_count_text, parse_counts, read_count_table, CountTable};
pub use report::{AnalysisReport, FitReport, FitSummary, SampleAnalysis};
