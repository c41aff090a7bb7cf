//! Counting-process survival data and the Cox partial likelihood.
//!
//! All integrals against `dN` reduce to sums over event times, and the risk
//! indicator is right-continuous (`Y_j >= t`). Risk-set sums are built with a
//! single sweep over subjects sorted by descending time.

mod dataset;
mod likelihood;

pub use dataset::{break_ties, Group, SurvivalDataset};
pub use likelihood::{
    hessian_block, neg_log_partial_likelihood, riskset_aggregates, score, ColumnKind,
    FeatureAssembly, HessianOperator, PartialLikelihood, RiskSetAggregates, ETA_LIMIT,
};
