//! Seed-sensitivity benchmark harness for machine-unlearning methods.
//!
//! The crate trains small feed-forward classifiers on synthetic
//! superclass/subclass data, applies unlearning methods across a grid of
//! training and unlearning seeds, and analyses how the resulting metric
//! distributions depend on the training seed.
//!
//! Module map:
//! - [`seedkit`]: labelled deterministic random streams.
//! - [`datagen`]: synthetic datasets and retain/forget splits.
//! - [`nncore`]: multilayer perceptron, exact gradients, seeded SGD.
//! - [`unlearners`]: Retrain, Random-Labels, UNSIR, Bad-Teacher, SSD, LFSSD.
//! - [`sweep`]: the training-seed × unlearning-seed evaluation grid.
//! - [`stats`]: variance decomposition, quantiles, 2-Wasserstein distance.
//! - [`config`], [`results`], [`analysis`], [`report`]: file formats and figures.

pub mod analysis;
pub mod config;
pub mod datagen;
pub mod error;
pub mod nncore;
pub mod report;
pub mod results;
pub mod seedkit;
pub mod stats;
pub mod sweep;
pub mod unlearners;

pub use analysis::{analyze, AnalysisEntry, AnalysisSummary};
pub use config::{HarnessConfig, ProtocolConfig};
pub use datagen::{DatasetSpec, ForgetSplit, ForgetTarget, LabelMode, LabeledExample, TargetKind};
pub use error::{Error, Result};
pub use nncore::{Architecture, ModelParams, TrainConfig};
pub use report::{render_report, Figure};
pub use results::{read_results, write_results};
pub use seedkit::{RngStream, Seed};
pub use stats::{EmpiricalDistribution, VarianceDecomposition};
pub use sweep::{Experiment, MetricName, MetricRecord, Protocol, SweepGrid, SweepPlan};
pub use unlearners::{MethodKind, UnlearnMethod};
