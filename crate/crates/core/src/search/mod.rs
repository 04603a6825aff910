//! Sub-net search over a frozen super-net.

mod ea;
mod ops;

pub use ea::{
    ea_search, evaluate, random_search, rank_order, write_search_log, EaConfig, Fitness, Origin,
    RandomSearchResult, ScoredGenotype, SearchLogRow, SearchState, SupernetFitness,
};
pub use ops::{
    coarse_filter, crossover, crossover_with, mutate, mutate_with, random_genotype,
    random_genotype_unfiltered, random_genotype_with, MAX_TRIES,
};
