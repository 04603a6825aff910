use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{total_loss, SuperNet};
use super::sampler::{sample_fair_batch, sample_uniform_batch, FairSampleBatch, K};
use crate::autodiff::{GradBuffer, Graph, Sgd, SgdConfig, Var};
use crate::error::{Error, Result};
use crate::proxy::data::Sample;
use crate::proxy::model::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetTrainConfig {
    pub sgd: SgdConfig,
    /// L1 coefficient on the edge importance weights.
    pub mu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Strict fair sampling; otherwise `K` independent uniform sub-nets.
    pub fair_sampling: bool,
    /// Learn and apply edge importance weights.
    pub edge_importance: bool,
}

impl Default for SupernetTrainConfig {
    fn default() -> Self {
        SupernetTrainConfig {
            sgd: SgdConfig::default(),
            mu: 1e-4,
            epochs: 12,
            batch_size: 16,
            fair_sampling: true,
            edge_importance: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    /// Task loss of each of the `K` sub-nets.
    pub subnet_losses: Vec<f64>,
    /// `mu * sum |gamma|` before the update.
    pub l1: f64,
    /// `mean |gamma|` after the update.
    pub mean_abs_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_abs_gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainLog {
    /// CSV with columns `step, epoch, loss_0..loss_{K-1}, l1, mean_abs_gamma`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let loss_cols: Vec<String> = (0..K).map(|k| format!("loss_{k}")).collect();
        writeln!(w, "step,epoch,{},l1,mean_abs_gamma", loss_cols.join(","))?;
        for s in &self.steps {
            let losses: Vec<String> = s
                .subnet_losses
                .iter()
                .map(|v| format!("{v:.10e}"))
                .collect();
            writeln!(
                w,
                "{},{},{},{:.10e},{:.10e}",
                s.step,
                s.epoch,
                losses.join(","),
                s.l1,
                s.mean_abs_gamma
            )?;
        }
        Ok(())
    }
}

fn mean_abs(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
    }
}

/// Super-net trainer: owns the optimizer state and the step counter.
#[derive(Clone, Debug)]
pub struct SupernetTrainer {
    pub config: SupernetTrainConfig,
    opt: Sgd,
    step: usize,
}

impl SupernetTrainer {
    pub fn new(net: &SuperNet, config: SupernetTrainConfig) -> Self {
        SupernetTrainer {
            opt: Sgd::new(config.sgd, net.store()),
            config,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn sample_batch(&self, rng: &mut impl Rng, net: &SuperNet) -> FairSampleBatch {
        if self.config.fair_sampling {
            sample_fair_batch(rng, net.spec())
        } else {
            sample_uniform_batch(rng, net.spec())
        }
    }

    /// One super-net update: sample `K` sub-nets, accumulate the mean of
    /// their task-loss gradients plus the L1 term on gamma, then take exactly
    /// one optimizer step.
    pub fn train_step(
        &mut self,
        net: &mut SuperNet,
        batch: &[Sample],
        epoch: usize,
        rng: &mut impl Rng,
    ) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let sampled = self.sample_batch(rng, net);
        let use_gamma = self.config.edge_importance;
        let mut grads = GradBuffer::zeros_like(net.store());
        let mut losses = Vec::with_capacity(K);
        let l1 = if use_gamma {
            self.config.mu * net.gammas().iter().map(|v| v.abs()).sum::<f64>()
        } else {
            0.0
        };

        for genotype in &sampled.genotypes {
            let mut g = Graph::new();
            let task = net.subnet(genotype, use_gamma)?.batch_loss(&mut g, batch)?;
            let task_value = g.value(task).data()[0];
            if !task_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    loss: task_value,
                    gammas: net.gammas(),
                });
            }
            losses.push(task_value);
            let gammas: Vec<Var> = if use_gamma {
                net.gamma_ids()
                    .iter()
                    .map(|&id| g.param(net.store(), id))
                    .collect()
            } else {
                Vec::new()
            };
            let loss = total_loss(&mut g, task, &gammas, self.config.mu)?;
            g.backward(loss)?
                .accumulate_into(&mut grads, 1.0 / K as f64);
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss: f64::NAN,
                gammas: net.gammas(),
            });
        }
        for genotype in &sampled.genotypes {
            net.record_activation(genotype);
        }
        self.opt.step(net.store_mut(), &grads);

        let metrics = StepMetrics {
            step: self.step,
            epoch,
            subnet_losses: losses,
            l1,
            mean_abs_gamma: mean_abs(&net.gammas()),
        };
        self.step += 1;
        Ok(metrics)
    }
}

/// Trains `net` for `config.epochs` passes over `train`, shuffling each
/// epoch. `on_epoch` runs after every epoch with the current weights.
pub fn train_supernet(
    net: &mut SuperNet,
    train: &[Sample],
    config: SupernetTrainConfig,
    rng: &mut impl Rng,
    mut on_epoch: impl FnMut(usize, &SuperNet) -> Result<()>,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut trainer = SupernetTrainer::new(net, config);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut n_steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let m = trainer.train_step(net, &batch, epoch, rng)?;
            epoch_loss += m.subnet_losses.iter().sum::<f64>() / m.subnet_losses.len() as f64;
            n_steps += 1;
            log.steps.push(m);
        }
        log.epochs.push(EpochSummary {
            epoch,
            mean_loss: epoch_loss / n_steps as f64,
            mean_abs_gamma: mean_abs(&net.gammas()),
        });
        on_epoch(epoch, net)?;
    }
    Ok(log)
}
