use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dag::{DagSpec, Genotype};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::paths::{apply_path, FeaturePyramid, PathKind, PathParams, PyramidVar, LEVELS};
use crate::proxy::data::Sample;
use crate::proxy::model::{Backbone, Head, Predictor};
use crate::tensor::Tensor;

/// Evaluates the DAG for `genotype`:
/// `x_0 = input`, `x_j = sum_{i<j} gamma_ij * IP_ij(x_i)`, output `sum_j x_j`.
///
/// `bank` supplies weights for parameterized kinds; `gamma` returns the
/// edge weight to apply, if any. `none` edges contribute nothing, and a node
/// without contributions is the zero pyramid. `genotype` must have at least
/// one intermediate node.
pub fn aggregate_dag<'a>(
    g: &mut Graph,
    store: &ParamStore,
    genotype: &Genotype,
    input: &PyramidVar,
    bank: impl Fn(usize, PathKind) -> Option<&'a PathParams>,
    gamma: impl Fn(usize) -> Option<ParamId>,
) -> Result<PyramidVar> {
    let spec = DagSpec::dense(genotype.n_intermediate());
    let mut nodes: Vec<PyramidVar> = vec![*input];
    for dst in 1..=spec.n_intermediate {
        let mut acc: Option<PyramidVar> = None;
        for src in 0..dst {
            let e = spec.edge_index(src, dst).expect("valid edge");
            let kind = genotype.kind(e);
            if kind == PathKind::None {
                continue;
            }
            let mut y = apply_path(g, store, kind, bank(e, kind), &nodes[src])?;
            if let Some(pid) = gamma(e) {
                let s = g.param(store, pid);
                y = y.scale(g, s)?;
            }
            acc = Some(match acc {
                Some(a) => a.add(g, &y)?,
                None => y,
            });
        }
        let x = match acc {
            Some(x) => x,
            None => input.zeros_like(g),
        };
        nodes.push(x);
    }
    let mut out = nodes[1];
    for x in &nodes[2..] {
        out = out.add(g, x)?;
    }
    Ok(out)
}

/// `task + mu * sum |gamma|`.
pub fn total_loss(g: &mut Graph, task: Var, gammas: &[Var], mu: f64) -> Result<Var> {
    if gammas.is_empty() {
        return Ok(task);
    }
    let abs: Vec<Var> = gammas.iter().map(|&v| g.abs(v)).collect();
    let l1 = g.add_all(&abs)?;
    let scaled = g.mul_const(l1, mu);
    g.add(task, scaled)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub spec: DagSpec,
    pub channels: usize,
    pub channels_in: usize,
}

/// Weight-sharing container: for every edge, one bank per parameterized kind
/// and a scalar edge importance weight, plus the proxy backbone and head
/// that are trained jointly with it.
#[derive(Clone, Debug)]
pub struct SuperNet {
    shape: NetShape,
    store: ParamStore,
    backbone: Backbone,
    head: Head,
    banks: Vec<Vec<PathParams>>,
    gammas: Vec<ParamId>,
    activations: Vec<[u64; 4]>,
}

impl SuperNet {
    pub fn new(spec: DagSpec, channels: usize, channels_in: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::init(&mut store, channels_in, channels, &mut rng);
        let mut banks = Vec::with_capacity(spec.edge_count());
        let mut gammas = Vec::with_capacity(spec.edge_count());
        for e in spec.edges() {
            let prefix = format!("edge{}_{}", e.src, e.dst);
            banks.push(
                PathKind::PARAMETERIZED
                    .iter()
                    .map(|&k| PathParams::init(k, &prefix, channels, &mut store, &mut rng))
                    .collect(),
            );
            gammas.push(store.add(format!("{prefix}.gamma"), Tensor::scalar(1.0), false));
        }
        let head = Head::init(&mut store, channels, &mut rng);
        SuperNet {
            shape: NetShape {
                spec,
                channels,
                channels_in,
            },
            store,
            backbone,
            head,
            activations: vec![[0; 4]; spec.edge_count()],
            banks,
            gammas,
        }
    }

    pub fn spec(&self) -> &DagSpec {
        &self.shape.spec
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bank(&self, edge: usize, kind: PathKind) -> Option<&PathParams> {
        if kind.is_parameterized() {
            self.banks[edge].get(kind.index())
        } else {
            None
        }
    }

    pub fn gamma_ids(&self) -> &[ParamId] {
        &self.gammas
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.gammas
            .iter()
            .map(|&id| self.store.value(id).data()[0])
            .collect()
    }

    pub fn set_gamma(&mut self, edge: usize, value: f64) {
        self.store.value_mut(self.gammas[edge]).data_mut()[0] = value;
    }

    /// Per edge, how often each parameterized kind has been trained.
    pub fn activations(&self) -> &[[u64; 4]] {
        &self.activations
    }

    pub(crate) fn record_activation(&mut self, genotype: &Genotype) {
        for (e, &k) in genotype.kinds().iter().enumerate() {
            if k.is_parameterized() {
                self.activations[e][k.index()] += 1;
            }
        }
    }

    fn check(&self, genotype: &Genotype) -> Result<()> {
        genotype.check_spec(&self.shape.spec)
    }

    /// Runs the neck for `genotype` on an input pyramid already in `g`.
    pub fn forward_subnet(
        &self,
        g: &mut Graph,
        genotype: &Genotype,
        input: &PyramidVar,
        apply_gamma: bool,
    ) -> Result<PyramidVar> {
        self.check(genotype)?;
        aggregate_dag(
            g,
            &self.store,
            genotype,
            input,
            |e, k| self.bank(e, k),
            |e| apply_gamma.then(|| self.gammas[e]),
        )
    }

    /// [`Self::forward_subnet`] on plain tensors.
    pub fn forward_subnet_values(
        &self,
        genotype: &Genotype,
        input: &FeaturePyramid,
        apply_gamma: bool,
    ) -> Result<FeaturePyramid> {
        let mut g = Graph::new();
        let p = PyramidVar::constant(&mut g, input);
        self.forward_subnet(&mut g, genotype, &p, apply_gamma)?
            .value(&g)
    }

    /// Backbone, neck and head on one image.
    pub fn predict(
        &self,
        g: &mut Graph,
        genotype: &Genotype,
        image: Var,
        apply_gamma: bool,
    ) -> Result<[Var; LEVELS]> {
        let p = self.backbone.forward(g, &self.store, image)?;
        let neck = self.forward_subnet(g, genotype, &p, apply_gamma)?;
        self.head.forward(g, &self.store, &neck)
    }

    /// View of one sub-net as a [`Predictor`].
    pub fn subnet<'a>(&'a self, genotype: &'a Genotype, apply_gamma: bool) -> Result<Subnet<'a>> {
        self.check(genotype)?;
        Ok(Subnet {
            net: self,
            genotype,
            apply_gamma,
        })
    }

    /// Mean proxy loss of `genotype` over `samples`, inference only.
    pub fn eval_loss(
        &self,
        genotype: &Genotype,
        samples: &[Sample],
        apply_gamma: bool,
    ) -> Result<f64> {
        self.subnet(genotype, apply_gamma)?.eval_loss(samples)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "supernet",
            "shape": self.shape,
            "gammas": self.gammas(),
            "activations": self.activations,
        }));
        for (_, name, t) in self.store.iter() {
            ck.push(name, t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape: NetShape = serde_json::from_value(ck.meta["shape"].clone())
            .map_err(|e| Error::Checkpoint(format!("supernet shape: {e}")))?;
        let mut net = SuperNet::new(shape.spec, shape.channels, shape.channels_in, 0);
        if ck.tensors.len() != net.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                net.store.len(),
                ck.tensors.len()
            )));
        }
        let ids: Vec<ParamId> = net.store.ids().collect();
        for id in ids {
            let name = net.store.name(id).to_string();
            let t = ck
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != net.store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}",
                    t.shape()
                )));
            }
            *net.store.value_mut(id) = t.clone();
        }
        if let Ok(act) = serde_json::from_value::<Vec<[u64; 4]>>(ck.meta["activations"].clone()) {
            if act.len() == net.activations.len() {
                net.activations = act;
            }
        }
        Ok(net)
    }
}

/// A sub-net borrowed from a [`SuperNet`].
#[derive(Clone, Copy, Debug)]
pub struct Subnet<'a> {
    net: &'a SuperNet,
    genotype: &'a Genotype,
    apply_gamma: bool,
}

impl Predictor for Subnet<'_> {
    fn predict(&self, g: &mut Graph, image: Var) -> Result<[Var; LEVELS]> {
        self.net.predict(g, self.genotype, image, self.apply_gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(c: usize) -> FeaturePyramid {
        FeaturePyramid::from_fn(c, 16, 16, |l, i| {
            ((i * 13 + l * 5) % 11) as f64 / 11.0 - 0.4
        })
        .unwrap()
    }

    fn geno(n: usize, kinds: &[PathKind]) -> Genotype {
        Genotype::new(n, kinds.to_vec()).unwrap()
    }

    #[test]
    fn all_none_gives_zero() {
        let net = SuperNet::new(DagSpec::dense(3), 2, 1, 0);
        let x = input(2);
        let out = net
            .forward_subnet_values(&Genotype::uniform(3, PathKind::None), &x, true)
            .unwrap();
        assert_eq!(out, FeaturePyramid::zeros(2, 16, 16).unwrap());
    }

    #[test]
    fn single_skip_edge_is_identity() {
        let net = SuperNet::new(DagSpec::dense(1), 2, 1, 0);
        let x = input(2);
        let out = net
            .forward_subnet_values(&geno(1, &[PathKind::SkipConnect]), &x, true)
            .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn two_node_skip_recurrence() {
        use PathKind::*;
        let net = SuperNet::new(DagSpec::dense(2), 2, 1, 0);
        let x = input(2);
        let twice = FeaturePyramid::new(x.levels().clone().map(|t| t.map(|v| 2.0 * v))).unwrap();
        let thrice = FeaturePyramid::new(x.levels().clone().map(|t| t.map(|v| 3.0 * v))).unwrap();

        // (0,1)=skip, (0,2)=none, (1,2)=skip: x1 = P, x2 = P, O = 2P
        let out = net
            .forward_subnet_values(&geno(2, &[SkipConnect, None, SkipConnect]), &x, true)
            .unwrap();
        assert!(out.max_abs_diff(&twice) < 1e-15);

        // all skip: x1 = P, x2 = P + x1 = 2P, O = 3P
        let out = net
            .forward_subnet_values(&Genotype::uniform(2, SkipConnect), &x, false)
            .unwrap();
        assert!(out.max_abs_diff(&thrice) < 1e-15);
    }

    #[test]
    fn gamma_scales_edge_output() {
        let mut net = SuperNet::new(DagSpec::dense(1), 2, 1, 0);
        net.set_gamma(0, 0.25);
        let x = input(2);
        let g = geno(1, &[PathKind::SkipConnect]);
        let on = net.forward_subnet_values(&g, &x, true).unwrap();
        let off = net.forward_subnet_values(&g, &x, false).unwrap();
        assert_eq!(off, x);
        for (a, b) in on.levels().iter().zip(x.levels()) {
            assert_eq!(a, &b.map(|v| 0.25 * v));
        }
    }

    #[test]
    fn gamma_initialised_to_one_and_banks_complete() {
        let net = SuperNet::new(DagSpec::dense(5), 2, 1, 3);
        assert_eq!(net.gammas(), vec![1.0; 15]);
        for e in 0..15 {
            for k in PathKind::PARAMETERIZED {
                assert_eq!(net.bank(e, k).unwrap().kind(), k);
            }
            assert!(net.bank(e, PathKind::SkipConnect).is_none());
        }
    }

    #[test]
    fn genotype_size_mismatch_is_rejected() {
        let net = SuperNet::new(DagSpec::dense(2), 2, 1, 0);
        let x = input(2);
        assert!(net
            .forward_subnet_values(&Genotype::uniform(3, PathKind::SkipConnect), &x, true)
            .is_err());
    }

    #[test]
    fn total_loss_terms() {
        let mut g = Graph::new();
        let task = g.constant(Tensor::scalar(0.5));
        let gam: Vec<Var> = (0..15).map(|_| g.leaf(Tensor::scalar(1.0))).collect();
        let l0 = total_loss(&mut g, task, &gam, 0.0).unwrap();
        assert_eq!(g.value(l0).data()[0], 0.5);

        let zero = g.constant(Tensor::scalar(0.0));
        let l = total_loss(&mut g, zero, &gam, 1e-4).unwrap();
        assert!((g.value(l).data()[0] - 1.5e-3).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut net = SuperNet::new(DagSpec::dense(2), 2, 1, 9);
        net.set_gamma(1, -0.123456789);
        let ck = net.to_checkpoint();
        let bytes = ck.to_bundle().unwrap();
        let back = SuperNet::from_checkpoint(&Checkpoint::from_bundle(&bytes).unwrap()).unwrap();
        assert_eq!(back.store(), net.store());
        assert_eq!(back.store().checksum(), net.store().checksum());
    }
}
