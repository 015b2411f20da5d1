//! Experiment orchestration: single runs, matrices, ablations and plots.

pub mod ablation;
pub mod experiment;
pub mod matrix;
pub mod plot;

pub use ablation::{run_ablation, run_ablation_on, AblationConfig, AblationEntry, AblationReport};
pub use experiment::{
    evaluate_model, evaluate_saved_model, load_ref, make_report, model_id, run_experiment, run_experiment_on,
    sidecar_paths, train_model, write_report, DatasetRef, Evaluation, ExperimentConfig, ExperimentOutput, ExperimentReport,
    TrainingSpec,
};
pub use matrix::{default_matrix, run_matrix, DefaultMatrix, MatrixConfig, MatrixRow, MatrixSummary, RowOutcome, SUMMARY_HEADER};
pub use plot::{render_roc_svg, roc_svg};
