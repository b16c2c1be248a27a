//! Differentially private kernel two-sample tests.
//!
//! Mean-embedding (ME) and smoothed characteristic function (SCF) feature
//! statistics, Gaussian-mechanism releases of their summaries, null
//! distributions that account for the added noise, and the end-to-end test
//! pipelines plus a reproducible experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod nulls;
pub mod optimize;
pub mod pipelines;
pub mod privacy;
pub mod rng;
pub mod statistic;
pub mod synthgen;

pub use error::{Error, Result};
pub use features::{Dataset, FeatureMatrix, Smoothing, TestLocations, Variant, KAPPA};
pub use nulls::{NullDistribution, NullKind};
pub use pipelines::{LocationPolicy, Setting, TestConfig, TestOutcome};
pub use privacy::{NoiseRecord, PrivacyBudget, PrivateSummary};
pub use statistic::{statistic, summarize, Summary};
