//! Stand-alone training of one architecture from fresh weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use super::model::{Backbone, Head, Predictor};
use crate::autodiff::{GradBuffer, Graph, ParamStore, Sgd, SgdConfig, Var};
use crate::error::{Error, Result};
use crate::paths::{PathKind, PathParams, PyramidVar, LEVELS};
use crate::search::coarse_filter;
use crate::supernet::{aggregate_dag, Genotype};

/// Backbone, one genotype's neck and head, with private weights and no edge
/// importance weights.
#[derive(Clone, Debug)]
pub struct ProxyModel {
    genotype: Genotype,
    store: ParamStore,
    backbone: Backbone,
    head: Head,
    paths: Vec<Option<PathParams>>,
}

impl ProxyModel {
    /// Fresh weights for `genotype`. The backbone, the head and each
    /// `(edge, kind)` path draw from separate random streams of `seed`, so
    /// different genotypes trained with one seed share every common module's
    /// initial weights.
    pub fn new(genotype: &Genotype, channels: usize, channels_in: usize, seed: u64) -> Self {
        let rng_for = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        let mut store = ParamStore::new();
        let backbone = Backbone::init(&mut store, channels_in, channels, &mut rng_for(0));
        let n = genotype.n_intermediate();
        let mut paths = Vec::with_capacity(genotype.kinds().len());
        let mut e = 0;
        for dst in 1..=n {
            for src in 0..dst {
                let kind = genotype.kind(e);
                paths.push(kind.is_parameterized().then(|| {
                    let mut rng = rng_for(2 + (e * PathKind::ALL.len() + kind.index()) as u64);
                    PathParams::init(
                        kind,
                        &format!("edge{src}_{dst}"),
                        channels,
                        &mut store,
                        &mut rng,
                    )
                }));
                e += 1;
            }
        }
        let head = Head::init(&mut store, channels, &mut rng_for(1));
        ProxyModel {
            genotype: genotype.clone(),
            store,
            backbone,
            head,
            paths,
        }
    }

    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn neck(&self, g: &mut Graph, input: &PyramidVar) -> Result<PyramidVar> {
        aggregate_dag(
            g,
            &self.store,
            &self.genotype,
            input,
            |e, _: PathKind| self.paths[e].as_ref(),
            |_| None,
        )
    }
}

impl Predictor for ProxyModel {
    fn predict(&self, g: &mut Graph, image: Var) -> Result<[Var; LEVELS]> {
        let p = self.backbone.forward(g, &self.store, image)?;
        let neck = self.neck(g, &p)?;
        self.head.forward(g, &self.store, &neck)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullTrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub channels: usize,
}

impl Default for FullTrainConfig {
    fn default() -> Self {
        FullTrainConfig {
            sgd: SgdConfig::default(),
            epochs: 12,
            batch_size: 16,
            channels: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FullTrainResult {
    pub model: ProxyModel,
    pub val_loss: f64,
    /// Mean training loss over the last epoch; the untrained training-set
    /// loss when no epoch was run.
    pub train_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn diverged(
    genotype: &Genotype,
    config: &FullTrainConfig,
    seed: u64,
    epoch: usize,
    loss: f64,
) -> Error {
    Error::Diverged(format!(
        "loss {loss} at epoch {epoch}; genotype {}; seed {seed}; config {}",
        genotype.to_json(),
        serde_json::to_string(config).unwrap_or_default()
    ))
}

/// Trains `genotype` from fresh weights without the degenerate-genotype
/// check. See [`full_train`].
pub fn train_standalone(
    genotype: &Genotype,
    dataset: &Dataset,
    config: &FullTrainConfig,
    seed: u64,
) -> Result<FullTrainResult> {
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::Config(
            "full training needs non-empty train and val splits".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let c_in = dataset.train[0].image.shape()[0];
    let mut model = ProxyModel::new(genotype, config.channels, c_in, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F011);
    let mut opt = Sgd::new(config.sgd, &model.store);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| dataset.train[i].clone()).collect();
            let mut g = Graph::new();
            let loss = model.batch_loss(&mut g, &batch)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(diverged(genotype, config, seed, epoch, value));
            }
            total += value * batch.len() as f64;
            let mut grads = GradBuffer::zeros_like(&model.store);
            g.backward(loss)?.accumulate_into(&mut grads, 1.0);
            if !grads.is_finite() {
                return Err(diverged(genotype, config, seed, epoch, f64::NAN));
            }
            opt.step(&mut model.store, &grads);
        }
        epoch_losses.push(total / dataset.train.len() as f64);
    }

    let val_loss = model.eval_loss(&dataset.val)?;
    if !val_loss.is_finite() {
        return Err(diverged(genotype, config, seed, config.epochs, val_loss));
    }
    let train_loss = match epoch_losses.last() {
        Some(&l) => l,
        None => model.eval_loss(&dataset.train)?,
    };
    Ok(FullTrainResult {
        model,
        val_loss,
        train_loss,
        epoch_losses,
    })
}

/// Trains a searched genotype from fresh weights and reports its final
/// validation loss. Deterministic per `seed`.
pub fn full_train(
    genotype: &Genotype,
    dataset: &Dataset,
    config: &FullTrainConfig,
    seed: u64,
) -> Result<FullTrainResult> {
    if !coarse_filter(genotype) {
        return Err(Error::Genotype(format!(
            "genotype {genotype} has no parameterized path"
        )));
    }
    train_standalone(genotype, dataset, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::data::{generate_dataset, BlobConfig};

    fn small() -> Dataset {
        generate_dataset(3, 10, &BlobConfig::default()).unwrap()
    }

    fn cfg(epochs: usize) -> FullTrainConfig {
        FullTrainConfig {
            epochs,
            batch_size: 4,
            channels: 2,
            ..FullTrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_untrained_loss() {
        let d = small();
        let g = Genotype::uniform(2, PathKind::TopDown);
        let r = full_train(&g, &d, &cfg(0), 1).unwrap();
        let fresh = ProxyModel::new(&g, 2, 1, 1);
        assert_eq!(r.val_loss, fresh.eval_loss(&d.val).unwrap());
        assert!(r.epoch_losses.is_empty());
    }

    #[test]
    fn hermetic() {
        let d = small();
        let g = Genotype::uniform(2, PathKind::FusingSplitting);
        let a = full_train(&g, &d, &cfg(1), 7).unwrap();
        let b = full_train(&g, &d, &cfg(1), 7).unwrap();
        assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
        assert_eq!(a.model.store().checksum(), b.model.store().checksum());
    }

    #[test]
    fn rejects_degenerate_genotype() {
        let d = small();
        let g = Genotype::uniform(2, PathKind::SkipConnect);
        assert!(matches!(
            full_train(&g, &d, &cfg(0), 1),
            Err(Error::Genotype(_))
        ));
        assert!(train_standalone(&g, &d, &cfg(0), 1).is_ok());
    }

    #[test]
    fn only_chosen_paths_get_weights() {
        let mut g = Genotype::uniform(2, PathKind::None);
        g.set(1, PathKind::BottomUp);
        let m = ProxyModel::new(&g, 2, 1, 0);
        assert!(m.store().find("edge0_2.bottom_up.conv0.weight").is_some());
        assert!(m
            .store()
            .iter()
            .all(|(_, n, _)| !n.starts_with("edge0_1") && !n.starts_with("edge1_2")));
        assert!(m.store().iter().all(|(_, n, _)| !n.contains("gamma")));
    }

    #[test]
    fn divergence_reports_config() {
        let d = small();
        let g = Genotype::uniform(2, PathKind::TopDown);
        let mut c = cfg(3);
        c.sgd.lr = 1e6;
        match full_train(&g, &d, &c, 1) {
            Err(Error::Diverged(msg)) => {
                assert!(msg.contains("\"lr\""));
                assert!(msg.contains("top_down"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
