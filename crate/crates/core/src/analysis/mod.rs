//! Post-processing of episode traces: behavioral tests, action breakdowns
//! and single-unit statistics.

mod actions;
mod behavior;
mod units;

pub use actions::{
    action_type_histogram, io_comparison_by_trial, score_by_missing_edges, score_by_missing_edges_tsv,
    ActionTypeHistogram, GroupScore, TrialActionCounts, TrialComparison, DEPOSIT_VALUES,
};
pub use behavior::{
    count_consistency, count_missing_edges, count_parallelism, count_potion_pairs, count_violations,
    observed_effects, violation_flags, StepFlags, ViolationCounts, ViolationOptions, ViolationReport,
};
pub use units::{
    build_activation_table, pair_selectivity, ActivationStat, ActivationTable, Grouping, PairVerdict,
    RecordedEpisode, SelectivityReport, Source, UnitSelectivity, DEFAULT_THETA, NO_GROUP,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("episode seed {0} appears more than once")]
    DuplicateSeed(u64),
    #[error("episode seed {0} has no counterpart in the other set")]
    Unpaired(u64),
    #[error("episode seed {0} has a different number of trials in the two sets")]
    TrialCountMismatch(u64),
    #[error("activation row refers to step {step}, past the end of its trace")]
    StepOutOfRange { step: usize },
    #[error("activation rows disagree on unit counts: expected {expected:?}, got {got:?}")]
    UnitCountMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("table is grouped by {got:?}, expected {expected:?}")]
    WrongGrouping { expected: Grouping, got: Grouping },
}

#[cfg(test)]
mod tests;
