//! Training, inference, evaluation and the canned experiments.

pub mod config;
pub mod eval;
pub mod experiments;
pub mod infer;
pub mod train;

pub use config::PipelineConfig;
pub use eval::{
    behavior_label, binary_f1, evaluate, f1_score, match_windows, summarize_runs, ClassMetrics, Confusion, Counts,
    EvalReport, LevelReport, MeanStd, RunSummary, Summary, NONE_LABEL,
};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentOutput, EXPERIMENTS};
pub use infer::{infer, infer_all, TracePrediction, WindowPrediction};
pub use train::{train, train_uri_stage, ModelBundle, UriStage};
