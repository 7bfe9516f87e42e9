//! Orchestration and persistence: run configuration, dataset and checkpoint
//! files, the joint training loop, evaluation reports, the gradient-check
//! suite, and the command-line interface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod gradsuite;
pub mod report;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMetadata};
pub use config::RunConfig;
pub use dataset::{load_dataset, save_dataset, Dataset};
pub use gradsuite::{run_gradient_suite, GRAD_TOLERANCE};
pub use report::{build_run_report, evaluate_dataset, render_table, save_report, RunReport};
pub use train::{pretrain_kge, train, train_from_model, train_traced, TrainTrace};
