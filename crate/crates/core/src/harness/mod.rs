//! Experiment orchestration: configs, dataset synthesis, runs, sweeps and
//! the CSV/JSON artifacts they leave behind.

mod artifacts;
mod config;
mod dataset;
mod run;
mod sweep;

pub use artifacts::{
    export_gram, read_features, read_gram_class_means, read_gram_samples, read_trace, trace_header, write_features,
    write_trace, TraceRow, FEATURES_FILE, GRAM_CLASS_MEANS_FILE, GRAM_SAMPLES_FILE, TRACE_FILE,
};
pub use config::{desk_grid, ConfigFile, ExperimentConfig, HeadSelection, Layout, Overrides, Preset};
pub use dataset::{matrix_digest, synthesize_dataset, InitialState};
pub use run::{
    class_sum_gram, execute, run_experiment, BoundCheck, HeadRecord, RunOutput, RunRecord, BOUND_TOL, CONFIG_FILE,
    FAILED_FILE, PROPOSITION1_TOL, REPORT_FILE,
};
pub use sweep::{load_dir, merge, run_all, write_grid, write_summary};
