//! Survival statistics and the cross-validation harness.

mod cv;
mod stats;

pub use cv::{
    cross_validate, cross_validate_models, evaluate_pipeline, fold_sizes, km_csv, mean_c_indices, predict_all,
    summarize, summary_km_csv, CvReport, EvalReport, FoldMetrics, FoldModel, FoldPlan, FoldSplit, GroupSummary,
    SchemeEval, SchemeReport,
};
pub use stats::{
    chi2_sf, concordance_index, gamma_q, km_estimator, logrank_test, stratify_by_median, LogRank, StratifiedGroups,
    SurvivalCurve, SIGNIFICANCE,
};
