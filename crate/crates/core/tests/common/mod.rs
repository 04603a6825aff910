//! Shared helpers for the integration tests.

#![allow(dead_code)]

use pathnas::autodiff::{GradBuffer, Graph, ParamStore, Var};
use pathnas::paths::{apply_path, FeaturePyramid, PathKind, PathParams, PyramidVar, LEVELS};
use pathnas::proxy::proxy_loss;
use pathnas::supernet::{aggregate_dag, DagSpec, Genotype};
use pathnas::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Differences below this are treated as agreement regardless of scale.
pub const ABS_FLOOR: f64 = 1e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Uniform values kept at least `margin` away from zero.
pub fn away_from_zero(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// A differentiable function of leaf tensors and store parameters.
pub type Build<'a> = dyn Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var> + 'a;

#[derive(Debug, Default)]
pub struct CheckReport {
    pub coords: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn agree(analytic: f64, numeric: f64) -> (bool, f64) {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    let rel = if scale > 0.0 { diff / scale } else { 0.0 };
    (diff <= ABS_FLOOR || rel <= REL_TOL, rel)
}

/// Reduces the built output to a scalar with fixed random weights so every
/// output element carries a distinct upstream gradient.
fn projected(
    g: &mut Graph,
    store: &ParamStore,
    leaves: &[Var],
    build: &Build,
    proj: &mut Option<Tensor>,
) -> Result<Var> {
    let out = build(g, store, leaves)?;
    let shape = g.value(out).shape().to_vec();
    let w = proj
        .get_or_insert_with(|| {
            let mut r = rng(0xF00D);
            Tensor::from_fn(&shape, |_| r.gen_range(0.5..1.5))
        })
        .clone();
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn eval(
    store: &ParamStore,
    inputs: &[Tensor],
    build: &Build,
    proj: &mut Option<Tensor>,
) -> Result<f64> {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = projected(&mut g, store, &leaves, build, proj)?;
    Ok(g.value(loss).data()[0])
}

/// Central finite-difference check of every leaf element and every store
/// parameter element against reverse-mode gradients.
pub fn gradcheck(
    name: &str,
    store: &ParamStore,
    inputs: &[Tensor],
    build: &Build,
) -> Result<CheckReport> {
    let mut proj = None;
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = projected(&mut g, store, &leaves, build, &mut proj)?;
    let grads = g.backward(loss)?;
    let mut param_grads = GradBuffer::zeros_like(store);
    grads.accumulate_into(&mut param_grads, 1.0);

    let mut report = CheckReport::default();
    let record = |report: &mut CheckReport, what: String, a: f64, n: f64| {
        let (ok, rel) = agree(a, n);
        report.coords += 1;
        report.worst_rel = report.worst_rel.max(rel);
        if !ok {
            report
                .failures
                .push(format!("{name} {what}: analytic {a:e} numeric {n:e}"));
        }
    };

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(leaves[k])
            .cloned()
            .unwrap_or_else(|| input.zeros_like());
        for i in 0..input.numel() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] = input.data()[i] + EPS;
            let up = eval(store, &shifted, build, &mut proj)?;
            shifted[k].data_mut()[i] = input.data()[i] - EPS;
            let down = eval(store, &shifted, build, &mut proj)?;
            record(
                &mut report,
                format!("input {k}[{i}]"),
                analytic.data()[i],
                (up - down) / (2.0 * EPS),
            );
        }
    }

    for id in store.ids() {
        let analytic = param_grads.get(id).clone();
        let base = store.value(id).clone();
        for i in 0..base.numel() {
            let mut s = store.clone();
            s.value_mut(id).data_mut()[i] = base.data()[i] + EPS;
            let up = eval(&s, inputs, build, &mut proj)?;
            s.value_mut(id).data_mut()[i] = base.data()[i] - EPS;
            let down = eval(&s, inputs, build, &mut proj)?;
            record(
                &mut report,
                format!("{}[{i}]", store.name(id)),
                analytic.data()[i],
                (up - down) / (2.0 * EPS),
            );
        }
    }
    Ok(report)
}

/// A gradient-check instance: named inputs, parameters and a function.
pub struct Instance {
    pub name: String,
    pub store: ParamStore,
    pub inputs: Vec<Tensor>,
    pub build: Box<Build<'static>>,
}

impl Instance {
    pub fn check(&self) -> Result<CheckReport> {
        gradcheck(&self.name, &self.store, &self.inputs, &*self.build)
    }
}

fn leaf_op(
    name: &str,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Instance {
    Instance {
        name: name.to_string(),
        store: ParamStore::new(),
        inputs,
        build: Box::new(move |g, _, v| build(g, v)),
    }
}

fn pyramid_leaves(p: &FeaturePyramid) -> Vec<Tensor> {
    p.levels().to_vec()
}

fn pyramid_of(v: &[Var]) -> PyramidVar {
    PyramidVar {
        levels: [v[0], v[1], v[2], v[3]],
    }
}

/// Reduces every output level with its own fixed random weights.
fn flatten_pyramid(g: &mut Graph, p: &PyramidVar) -> Result<Var> {
    let mut r = rng(0xBEEF);
    let mut sums = Vec::with_capacity(p.levels.len());
    for &v in &p.levels {
        let shape = g.value(v).shape().to_vec();
        let w = g.constant(Tensor::from_fn(&shape, |_| r.gen_range(0.5..1.5)));
        let prod = g.mul(v, w)?;
        sums.push(g.sum(prod));
    }
    g.add_all(&sums)
}

/// One instance per differentiable op and per parameterized path, repeated
/// over `reps` random draws.
pub fn instances(reps: u64) -> Vec<Instance> {
    let mut out = Vec::new();
    for rep in 0..reps {
        let mut r = rng(1000 + rep);
        let c_in = 1 + (rep as usize % 3);
        let c_out = 1 + ((rep as usize + 1) % 3);
        let h = 4 + rep as usize % 3;
        let w = 5 - rep as usize % 2;
        let x = uniform(&[c_in, h, w], &mut r);

        for stride in [1, 2] {
            let weight = uniform(&[c_out, c_in, 3, 3], &mut r);
            let bias = uniform(&[c_out], &mut r);
            out.push(leaf_op(
                &format!("conv3x3 s{stride} rep{rep}"),
                vec![x.clone(), weight, bias],
                move |g, v| g.conv3x3(v[0], v[1], v[2], stride),
            ));
        }
        out.push(leaf_op(
            &format!("upsample2x rep{rep}"),
            vec![x.clone()],
            |g, v| g.upsample2x(v[0]),
        ));
        let even = uniform(&[c_in, 2 * h, 2 * w], &mut r);
        out.push(leaf_op(
            &format!("downsample2x rep{rep}"),
            vec![even],
            |g, v| g.downsample2x(v[0]),
        ));
        let y = uniform(&[c_in, h, w], &mut r);
        out.push(leaf_op(
            &format!("add rep{rep}"),
            vec![x.clone(), y.clone()],
            |g, v| g.add(v[0], v[1]),
        ));
        out.push(leaf_op(
            &format!("sub rep{rep}"),
            vec![x.clone(), y.clone()],
            |g, v| g.sub(v[0], v[1]),
        ));
        out.push(leaf_op(
            &format!("mul rep{rep}"),
            vec![x.clone(), y.clone()],
            |g, v| g.mul(v[0], v[1]),
        ));
        let z = uniform(&[c_out, h, w], &mut r);
        out.push(leaf_op(
            &format!("concat rep{rep}"),
            vec![x.clone(), z],
            |g, v| g.concat_channels(v[0], v[1]),
        ));
        let s = uniform(&[1], &mut r);
        out.push(leaf_op(
            &format!("scale rep{rep}"),
            vec![x.clone(), s],
            |g, v| g.scale(v[0], v[1]),
        ));
        let k = r.gen_range(-2.0..2.0);
        out.push(leaf_op(
            &format!("mul_const rep{rep}"),
            vec![x.clone()],
            move |g, v| Ok(g.mul_const(v[0], k)),
        ));
        let kinked = away_from_zero(&[c_in, h, w], 1e-3, &mut r);
        out.push(leaf_op(
            &format!("relu rep{rep}"),
            vec![kinked.clone()],
            |g, v| Ok(g.relu(v[0])),
        ));
        out.push(leaf_op(&format!("abs rep{rep}"), vec![kinked], |g, v| {
            Ok(g.abs(v[0]))
        }));
        out.push(leaf_op(
            &format!("sum rep{rep}"),
            vec![x.clone()],
            |g, v| Ok(g.sum(v[0])),
        ));
        out.push(leaf_op(
            &format!("mean rep{rep}"),
            vec![x.clone()],
            |g, v| Ok(g.mean(v[0])),
        ));
        let third = uniform(&[c_in, h, w], &mut r);
        out.push(leaf_op(
            &format!("add_all rep{rep}"),
            vec![x.clone(), y.clone(), third],
            |g, v| g.add_all(v),
        ));
        out.push(leaf_op(
            &format!("mse rep{rep}"),
            vec![x.clone(), y],
            |g, v| g.mse(v[0], v[1]),
        ));

        let pred = uniform(&[c_in, h, w], &mut r);
        let target = uniform(&[c_in, h, w], &mut r);
        out.push(leaf_op(
            &format!("proxy_loss rep{rep}"),
            vec![pred],
            move |g, v| {
                let pred = [v[0]; LEVELS];
                proxy_loss(g, &pred, &std::array::from_fn(|_| target.clone()))
            },
        ));

        for kind in PathKind::PARAMETERIZED {
            out.push(path_instance(kind, rep));
        }
        out.push(dag_instance(rep));
    }
    out
}

/// A two-node DAG with a random genotype and edge importance weights.
pub fn dag_instance(rep: u64) -> Instance {
    let mut r = rng(3000 + rep);
    let c = 1 + rep as usize % 2;
    let pyramid =
        FeaturePyramid::from_fn(c, 8, 8, |_, _| r.gen_range(-1.0..1.0)).expect("valid pyramid");
    let spec = DagSpec::dense(2);
    let mut genotype = Genotype::uniform(2, PathKind::None);
    let mut store = ParamStore::new();
    let mut banks = Vec::new();
    let mut gammas = Vec::new();
    for e in 0..spec.edge_count() {
        let n_kinds = if e == 0 { 4 } else { 6 };
        let kind = PathKind::ALL[r.gen_range(0..n_kinds)];
        genotype.set(e, kind);
        banks.push(
            kind.is_parameterized()
                .then(|| PathParams::init(kind, &format!("e{e}"), c, &mut store, &mut r)),
        );
        gammas.push(store.add(
            format!("e{e}.gamma"),
            Tensor::scalar(r.gen_range(0.5..1.5)),
            false,
        ));
    }
    Instance {
        name: format!("dag {genotype} rep{rep}"),
        store,
        inputs: pyramid_leaves(&pyramid),
        build: Box::new(move |g, store, v| {
            let y = aggregate_dag(
                g,
                store,
                &genotype,
                &pyramid_of(v),
                |e, _| banks[e].as_ref(),
                |e| Some(gammas[e]),
            )?;
            flatten_pyramid(g, &y)
        }),
    }
}

/// A parameterized path on a random pyramid with random weights; both the
/// pyramid and the weights are checked.
pub fn path_instance(kind: PathKind, rep: u64) -> Instance {
    let mut r = rng(2000 + rep * 7 + kind.index() as u64);
    let c = 1 + rep as usize % 2;
    let side = 8;
    let pyramid = FeaturePyramid::from_fn(c, side, side, |_, _| r.gen_range(-1.0..1.0))
        .expect("valid pyramid");
    let mut store = ParamStore::new();
    let params: PathParams = PathParams::init(kind, "p", c, &mut store, &mut r);
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.value_mut(id);
        for v in t.data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
    }
    Instance {
        name: format!("{kind} rep{rep}"),
        store,
        inputs: pyramid_leaves(&pyramid),
        build: Box::new(move |g, store, v| {
            let y = apply_path(g, store, kind, Some(&params), &pyramid_of(v))?;
            flatten_pyramid(g, &y)
        }),
    }
}
