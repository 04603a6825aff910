//! Ranking correlation, ablations and the end-to-end pipeline.

mod config;
mod experiments;
mod kendall;
mod pipeline;

pub use config::ExperimentConfig;
pub use experiments::{
    ablation_dat, ablation_edge_importance, correlation_experiment, dataset_for, sample_distinct,
    standalone_scores, train_configured_supernet, AblationTrace, CorrelationReport, CorrelationRow,
    CorrelationSeed, SupernetVariant, VariantResult,
};
pub use kendall::{kendall_tau, median, RankingPair};
pub use pipeline::{
    run_pipeline, PipelineReport, RandomSearchSummary, SampledGenotype, SearchSummary, WinnerReport,
};
