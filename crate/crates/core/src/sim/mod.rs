//! Simulation scenarios, clustering competitors and replicated experiments.

pub mod ari;
pub mod cluster;
pub mod experiment;
pub mod scenario;

pub use ari::adjusted_rand_index;
pub use cluster::{eb_cluster_assign, gap_statistic, gap_statistic_with, kmeans, GapResult, KMeansResult};
pub use experiment::{
    replicate_seed, run_experiment, run_replicate, CellSummary, Competitor, ExperimentConfig, ExperimentReport,
    Metric, ReplicateRecord,
};
pub use scenario::{generate, Scenario, ScenarioKind, ScenarioSpec};
