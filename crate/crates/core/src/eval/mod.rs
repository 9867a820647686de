//! Dice scoring, prompt simulators, significance tests and reports.

mod features;
mod harness;
mod metrics;
mod prompts;
mod report;
mod stats;

pub use features::{export_features, write_features_csv};
pub use harness::{evaluate_box_fill, evaluate_model, task_name};
pub use metrics::{confusion, dsc, dsc_with, Confusion};
pub use prompts::{loose_box, point_prompt, tight_box, BoxPrompt};
pub use report::{
    aggregate_report, read_records_csv, read_table_csv, write_records_csv, Comparison,
    EvalRecord, MethodSummary, PromptMode, TaskReport,
};
pub use stats::{paired_ttest, TTest};
