//! Structural complexity of recommender interaction data.
//!
//! A rating matrix is perturbed (values shuffled, entries relocated), its
//! truncated SVD is corrected back toward the original through a
//! first-order singular-value shift, and the quality of that correction on
//! the perturbed cells measures how much low-rank structure the data holds.
//! The same machinery scores individual ratings and drives training-subset
//! selection.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

mod binio;
pub mod dense;
pub mod error;
pub mod interactions;
pub mod matrix;
pub mod metrics;
pub mod perturb;
mod rng;
pub mod scalar;
pub mod scoring;
pub mod selection;
pub mod split;
pub mod subsample;
pub mod svd;

pub use error::{Error, ErrorClass, Result};
pub use interactions::{build_matrix, load_interactions, write_interactions, CsvFormat, DedupPolicy, InteractionRecord, InteractionSet};
pub use matrix::{Cell, Entry, TokenIndex};
pub use metrics::{
    complexity_report, delta_sigma, evaluate_plan, gramian_diagonal_shift, predict_entries, report_for_plan, rmse_on,
    spectral_distance, ComplexityReport,
};
pub use perturb::{
    apply_perturbation, fold_perturbation_plan, select_perturbation_sets, time_weights, PerturbationParams, PerturbationPlan,
    TimeWeights,
};
pub use scalar::Scalar;
pub use scoring::{score_ratings, ScoreConfig, ScoreTable};
pub use selection::{correlate, load_pairs, rpa, select_subset, Correlation, SelectionSpec, Strategy};
pub use split::{holdout_last_interaction, partition_entries, EntryKind, EntrySet};
pub use subsample::{subsample_dataset, subsample_replicas, Provenance, Stages, Subsample, SubsampleParams};
pub use svd::{project_columns, truncated_svd, SvdQuality};

pub type SparseMatrix = matrix::SparseMatrix<f64>;
pub type SvdFactors = svd::SvdFactors<f64>;
pub type DeltaSigma = metrics::DeltaSigma<f64>;
pub type Dense = dense::Dense<f64>;
pub type HoldoutSplit = split::HoldoutSplit<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
