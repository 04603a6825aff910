//! The densely connected DAG super-net and its training.

mod dag;
mod net;
mod sampler;
mod train;

pub use dag::{DagSpec, Edge, Genotype, Topology};
pub use net::{aggregate_dag, total_loss, NetShape, Subnet, SuperNet};
pub use sampler::{sample_fair_batch, sample_uniform_batch, FairSampleBatch, K};
pub use train::{
    train_supernet, EpochSummary, StepMetrics, SupernetTrainConfig, SupernetTrainer, TrainLog,
};
