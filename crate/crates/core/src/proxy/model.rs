use rand::Rng;

use super::data::Sample;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::paths::{ConvParams, PyramidVar, LEVELS};
use crate::tensor::Tensor;

fn conv(
    store: &mut ParamStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    gain: f64,
    rng: &mut impl Rng,
) -> ConvParams {
    let (weight, bias) = store.add_conv_with_gain(name, c_in, c_out, gain, rng);
    ConvParams { weight, bias }
}

fn apply(g: &mut Graph, store: &ParamStore, cp: ConvParams, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(store, cp.weight);
    let b = g.param(store, cp.bias);
    g.conv3x3(x, w, b, stride)
}

/// Stride-2 stem followed by four stride-2 stages; stage `l` emits `P{l+2}`.
/// Every conv is followed by ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Backbone {
    stem: ConvParams,
    stages: [ConvParams; LEVELS],
}

impl Backbone {
    pub fn init(store: &mut ParamStore, c_in: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let stem = conv(store, "backbone.stem", c_in, channels, 2.0, rng);
        let stages = std::array::from_fn(|l| {
            conv(
                store,
                &format!("backbone.stage{l}"),
                channels,
                channels,
                2.0,
                rng,
            )
        });
        Backbone { stem, stages }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<PyramidVar> {
        let s = apply(g, store, self.stem, image, 2)?;
        let mut x = g.relu(s);
        let mut levels = [x; LEVELS];
        for (l, &stage) in self.stages.iter().enumerate() {
            let y = apply(g, store, stage, x, 2)?;
            x = g.relu(y);
            levels[l] = x;
        }
        Ok(PyramidVar { levels })
    }
}

const HEAD_INIT_SCALE: f64 = 0.1;

/// Per-level `relu` followed by a 3x3 conv to one channel. The output convs
/// start small so the initial prediction is close to zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Head {
    convs: [ConvParams; LEVELS],
}

impl Head {
    pub fn init(store: &mut ParamStore, channels: usize, rng: &mut impl Rng) -> Self {
        let convs =
            std::array::from_fn(|l| conv(store, &format!("head.level{l}"), channels, 1, 1.0, rng));
        for c in &convs {
            store.value_mut(c.weight).scale_assign(HEAD_INIT_SCALE);
        }
        Head { convs }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        neck: &PyramidVar,
    ) -> Result<[Var; LEVELS]> {
        let mut out = neck.levels;
        for l in 0..LEVELS {
            let r = g.relu(neck.levels[l]);
            out[l] = apply(g, store, self.convs[l], r, 1)?;
        }
        Ok(out)
    }
}

fn check_target(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidShape {
            op: "proxy_loss",
            detail: format!(
                "prediction {:?} vs target {:?}",
                pred.shape(),
                target.shape()
            ),
        });
    }
    Ok(())
}

/// Mean over levels of the per-level mean squared error.
pub fn proxy_loss(g: &mut Graph, pred: &[Var; LEVELS], targets: &[Tensor; LEVELS]) -> Result<Var> {
    let mut terms = Vec::with_capacity(LEVELS);
    for (l, &p) in pred.iter().enumerate() {
        check_target(g.value(p), &targets[l])?;
        let t = g.constant(targets[l].clone());
        terms.push(g.mse(p, t)?);
    }
    let total = g.add_all(&terms)?;
    Ok(g.mul_const(total, 1.0 / LEVELS as f64))
}

/// [`proxy_loss`] on plain tensors.
pub fn proxy_loss_value(pred: &[Tensor; LEVELS], targets: &[Tensor; LEVELS]) -> Result<f64> {
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(targets) {
        check_target(p, t)?;
        let se: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += se / p.numel() as f64;
    }
    Ok(total / LEVELS as f64)
}

/// Anything that maps an image to per-level heatmap predictions.
pub trait Predictor {
    fn predict(&self, g: &mut Graph, image: Var) -> Result<[Var; LEVELS]>;

    /// Mean proxy loss over `samples`, built into `g` for backward.
    fn batch_loss(&self, g: &mut Graph, samples: &[Sample]) -> Result<Var> {
        let mut losses = Vec::with_capacity(samples.len());
        for s in samples {
            let img = g.constant(s.image.clone());
            let pred = self.predict(g, img)?;
            losses.push(proxy_loss(g, &pred, &s.targets)?);
        }
        let total = g.add_all(&losses)?;
        Ok(g.mul_const(total, 1.0 / samples.len() as f64))
    }

    /// Mean proxy loss over `samples`, inference only.
    fn eval_loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Config("evaluation set is empty".into()));
        }
        let mut total = 0.0;
        for s in samples {
            let mut g = Graph::new();
            let img = g.constant(s.image.clone());
            let pred = self.predict(&mut g, img)?;
            let values: [Tensor; LEVELS] = std::array::from_fn(|l| g.value(pred[l]).clone());
            total += proxy_loss_value(&values, &s.targets)?;
        }
        Ok(total / samples.len() as f64)
    }
}
