//! Experiment definitions, the trial runners, aggregation into
//! `summary.json` and SVG figures.

mod config;
mod metrics;
mod plot;
mod runners;

pub use config::{circle_reference, ExperimentConfig, ExperimentKind, MetaBlock, PaperScale, RunBlock};
pub use metrics::{
    aggregate, cartpole_settle, percentile, position_error, rmse, settle_time, Band, BinnedSeries, CsvTable,
    Definitions, KindMetrics, KindThroughput, Manifest, MetricsSummary, Percentiles, ReferenceThroughput, Stat,
    Throughput, TrialMetrics, MANIFEST, SUMMARY,
};
pub use plot::{plot, render, Panel, Series};
pub use runners::{
    run_closed_loop_trials, run_experiment, run_meta_train, run_vdp_predict, train_log_path, trial_seed,
    zero_output_layer,
};
