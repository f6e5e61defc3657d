//! Config parsing and the method x seed sweep runner.

mod config;
mod runner;

pub use config::{parse_config, parse_config_str, ExperimentSpec, Overrides, KEYS};
pub use runner::{
    confusion_path, mean_std, metrics_path, run, run_one, run_with_progress, summarize, summary_csv, summary_path,
    RunResult, SummaryRow,
};
