//! Supervised learners used by the pipeline.

pub mod forest;
pub mod logistic;

pub use forest::{train_ensemble, ForestParams, TrainedEnsemble, TreeEnsembleModel};
pub use logistic::{train_logistic, train_logistic_traced, LogisticModel, LogisticParams, GATE_DIM};
