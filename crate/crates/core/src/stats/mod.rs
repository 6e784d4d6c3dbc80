//! Paired significance tests and score distribution summaries.

mod paired;
mod report;
pub mod special;
mod summary;

use thiserror::Error;

pub use paired::{
    midranks, normal_two_sided_p, paired_t_test, signed_ranks, t_statistic, t_two_sided_p,
    wilcoxon_signed_rank, wilcoxon_z, PairedSample, TTestResult, WilcoxonResult, DIFF_TOLERANCE,
};
pub use report::{
    export_report, group_and_report, import_report, read_scores_csv, render_tables, write_scores_csv,
    Comparison, Distribution, Outcome, ScoreRow, StatReport, ViewFilter, REPORT_FILES,
};
pub use summary::{
    band_fractions, box_summary, compensated_sum, mean, median, quantile_sorted, sample_sd, BandFractions,
    BoxSummary, LikertBand,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("paired lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sample")]
    Empty,
    #[error("need at least {needed} pairs, found {found}")]
    TooFew { needed: usize, found: usize },
    #[error("degenerate sample: differences have zero variance")]
    DegenerateSample,
    #[error("no nonzero differences")]
    NoNonzeroDifferences,
    #[error("score {0} outside [0, 5]")]
    ScoreOutOfRange(f64),
    #[error("no cases match view filter `{0}`")]
    NoMatchingCases(String),
    #[error("unknown view filter `{0}`")]
    UnknownView(String),
    #[error("duplicate score for reader {reader}, case {case}, method {method}, metric {metric}")]
    DuplicateScore {
        reader: String,
        case: String,
        method: String,
        metric: String,
    },
    #[error("malformed score table: {0}")]
    Table(String),
    #[error("report I/O: {0}")]
    Io(String),
}

impl StatsError {
    pub fn code(&self) -> &'static str {
        match self {
            StatsError::LengthMismatch(..) => "length_mismatch",
            StatsError::Empty => "empty_sample",
            StatsError::TooFew { .. } => "too_few_pairs",
            StatsError::DegenerateSample => "degenerate_sample",
            StatsError::NoNonzeroDifferences => "no_nonzero_differences",
            StatsError::ScoreOutOfRange(_) => "score_out_of_range",
            StatsError::NoMatchingCases(_) => "no_matching_cases",
            StatsError::UnknownView(_) => "unknown_view",
            StatsError::DuplicateScore { .. } => "duplicate_score",
            StatsError::Table(_) => "malformed_table",
            StatsError::Io(_) => "report_io",
        }
    }
}
