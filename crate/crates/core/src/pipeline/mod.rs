//! Training stages, evaluation and diagnostics.

pub mod eval;
pub mod models;
pub mod report;
pub mod run_dir;
pub mod stages;
pub mod train;

pub use eval::{
    evaluate_suite, load_policies, ordering_checks, paired_returns, sign_test, Comparison, EvalTable, PolicyEntry,
    SignTest,
};
pub use report::{context_separation, probe_policy, ProbeTrace};
pub use run_dir::{derive_seed, RunDir, STAGES};
pub use stages::{
    estimator_mse, fit_estimator, frozen_checksum, mean_eval_return, phase1_train, phase2_train_estimator,
    plastic_baseline_train, pretrain_base, rma_baseline_train, roa_joint_train, roa_regularizer, run_stage, FitEpoch,
    FitReport, RegressionData, StageReport,
};
pub use train::{run_training, LoopSpec, Update};
