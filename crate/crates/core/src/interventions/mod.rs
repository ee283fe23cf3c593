//! Manipulations built on a trained dictionary: modality-gap removal, query
//! arithmetic, OOD scoring and ranking checks.

mod arithmetic;
mod gap;
mod ood;
mod ranking;

pub use arithmetic::{
    arithmetic_report, build_queries, mean_pool, recall_at, retrieval_recall, ArithmeticRow, QuerySet, QueryVariant,
};
pub use gap::{filter_unimodal, GapMethodKind, GapRemoval};
pub use ood::{
    best_threshold_accuracy, domain_wasserstein, gap_metrics, gap_report, histogram, mean_difference, ood_distances,
    ood_score, ood_score_seeded, GapConfig, GapMetrics, GapReport, OOD_K,
};
pub use ranking::{
    check_bounded_spread, check_constant_offset_invariance, check_flip_characterization, flip_analysis,
    modality_spread, two_dimensional_example, FlipAnalysis,
};
