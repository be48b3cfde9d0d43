//! Time-series forecasting with pruned one-hidden-layer perceptrons trained
//! by two-stage damped least squares.
//!
//! The pipeline: [`series`] turns a raw series into lagged supervised pairs,
//! [`mlp`] evaluates the network and its analytic Jacobian, [`lma`] trains it
//! with Levenberg–Marquardt, [`prune`] runs replicate first-pass fits and a
//! bootstrap significance test to mask connections before the final fit,
//! and [`eval`] compares pruned and unpruned networks out of sample.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod fsio;
pub mod linalg;
pub mod lma;
pub mod mlp;
pub mod netfile;
pub mod prune;
pub mod seed;
pub mod series;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use eval::{
    emit_report, evaluate, nmae, nrmse, persistence, run_experiment, ComparisonReport, MetricPair,
    ModelTag, ProtocolConfig, RunRecord, Winner,
};
pub use lma::{fit, loss, solve_damped_normal_equations, FitResult, LmaConfig, StopReason};
pub use mlp::{init_params, ConnectionMask, MaskedMlp, ParamRole, ParamVector, Topology};
pub use prune::{
    bootstrap_ci, first_pass, jarque_bera, significance_mask, two_stage_train, CiTable,
    FirstPassConfig, PruneReport, Replicates, TwoStageConfig, TwoStageOutcome, WeightSamples,
};
pub use series::{embed_lags, load_series, split, LagDataset, SeriesFrame, SplitSpec};
