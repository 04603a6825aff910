use pathnas::analysis::kendall_tau;
use pathnas::autodiff::{Graph, ParamStore};
use pathnas::paths::{apply_path, FeaturePyramid, PathKind, PathParams, PyramidVar};
use pathnas::search::{coarse_filter, crossover, mutate, random_genotype};
use pathnas::supernet::{DagSpec, Genotype};
use pathnas::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pyramid(c: usize, h: usize, w: usize, seed: u64) -> FeaturePyramid {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    FeaturePyramid::from_fn(c, h, w, |_, _| r.gen_range(-1.0..1.0)).unwrap()
}

fn bank(kind: PathKind, c: usize, seed: u64, zero_bias: bool) -> (ParamStore, Option<PathParams>) {
    let mut store = ParamStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let params = kind
        .is_parameterized()
        .then(|| PathParams::init(kind, "p", c, &mut store, &mut r));
    if let Some(p) = &params {
        for cp in p.convs() {
            let b = store.value_mut(cp.bias);
            for v in b.data_mut() {
                *v = if zero_bias {
                    0.0
                } else {
                    r.gen_range(-1.0..1.0)
                };
            }
        }
    }
    (store, params)
}

fn run_path(
    kind: PathKind,
    store: &ParamStore,
    params: Option<&PathParams>,
    p: &FeaturePyramid,
) -> FeaturePyramid {
    let mut g = Graph::new();
    let x = PyramidVar::constant(&mut g, p);
    apply_path(&mut g, store, kind, params, &x)
        .unwrap()
        .value(&g)
        .unwrap()
}

fn combine(x: &FeaturePyramid, y: &FeaturePyramid, a: f64, b: f64) -> FeaturePyramid {
    FeaturePyramid::new(std::array::from_fn(|l| {
        let (xs, ys) = (x.levels()[l].data(), y.levels()[l].data());
        let data = xs.iter().zip(ys).map(|(u, v)| a * u + b * v).collect();
        Tensor::new(x.levels()[l].shape().to_vec(), data).unwrap()
    }))
    .unwrap()
}

fn assert_close(got: &FeaturePyramid, want: &FeaturePyramid) -> Result<(), TestCaseError> {
    for (g, w) in got.levels().iter().zip(want.levels()) {
        for (u, v) in g.data().iter().zip(w.data()) {
            prop_assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()), "{} vs {}", u, v);
        }
    }
    Ok(())
}

fn kind_strategy() -> impl Strategy<Value = PathKind> {
    (0..PathKind::ALL.len()).prop_map(|i| PathKind::ALL[i])
}

fn genotype_strategy(n: usize) -> impl Strategy<Value = Genotype> {
    prop::collection::vec(kind_strategy(), n * (n + 1) / 2)
        .prop_map(move |kinds| Genotype::new(n, kinds).unwrap())
}

fn upsample(t: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(t.clone());
    let u = g.upsample2x(v).unwrap();
    g.value(u).clone()
}

fn downsample(t: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(t.clone());
    let d = g.downsample2x(v).unwrap();
    g.value(d).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn paths_preserve_pyramid_shapes(
        kind in kind_strategy(),
        c in 1usize..4,
        h8 in 1usize..4,
        w8 in 1usize..4,
        seed in any::<u64>(),
    ) {
        let p = random_pyramid(c, 8 * h8, 8 * w8, seed);
        let (store, params) = bank(kind, c, seed, false);
        let out = run_path(kind, &store, params.as_ref(), &p);
        prop_assert_eq!(out.shapes(), p.shapes());
        prop_assert!(out.is_finite());
    }

    #[test]
    fn pooling_free_paths_are_linear_without_bias(
        k in 0usize..2,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let kind = [PathKind::TopDown, PathKind::ScaleEqualizing][k];
        let x = random_pyramid(2, 16, 8, seed);
        let y = random_pyramid(2, 16, 8, seed ^ 1);
        let (store, params) = bank(kind, 2, seed, true);
        let fx = run_path(kind, &store, params.as_ref(), &x);
        let fy = run_path(kind, &store, params.as_ref(), &y);
        let fm = run_path(kind, &store, params.as_ref(), &combine(&x, &y, a, b));
        assert_close(&fm, &combine(&fx, &fy, a, b))?;
    }

    #[test]
    fn pooled_paths_are_positively_homogeneous_without_bias(
        k in 0usize..2,
        a in 0.01f64..4.0,
        seed in any::<u64>(),
    ) {
        let kind = [PathKind::BottomUp, PathKind::FusingSplitting][k];
        let x = random_pyramid(2, 16, 8, seed);
        let (store, params) = bank(kind, 2, seed, true);
        let fx = run_path(kind, &store, params.as_ref(), &x);
        let fa = run_path(kind, &store, params.as_ref(), &combine(&x, &x, a, 0.0));
        assert_close(&fa, &combine(&fx, &fx, a, 0.0))?;
    }

    #[test]
    fn fusing_splitting_outer_levels_are_resized_inner_levels(c in 1usize..3, seed in any::<u64>()) {
        let p = random_pyramid(c, 16, 16, seed);
        let (store, params) = bank(PathKind::FusingSplitting, c, seed, false);
        let out = run_path(PathKind::FusingSplitting, &store, params.as_ref(), &p);
        prop_assert_eq!(&out.levels()[0], &upsample(&out.levels()[1]));
        prop_assert_eq!(&out.levels()[3], &downsample(&out.levels()[2]));
    }

    #[test]
    fn down_then_up_on_constant_is_identity(c in 1usize..4, h in 1usize..6, w in 1usize..6, v in -5.0f64..5.0) {
        let t = Tensor::full(&[c, 2 * h, 2 * w], v);
        prop_assert_eq!(upsample(&downsample(&t)), t);
    }

    #[test]
    fn fan_out_gradients_add(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[2, 3, 3], |_| r.gen_range(-1.0..1.0));
        let y = Tensor::from_fn(&[2, 3, 3], |_| r.gen_range(-1.0..1.0));
        let grad = |both: bool, first: bool| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let yv = g.constant(y.clone());
            let a = g.mul(xv, yv).unwrap();
            let sa = g.sum(a);
            let b = g.mul(xv, xv).unwrap();
            let sb = g.sum(b);
            let loss = match (both, first) {
                (true, _) => g.add(sa, sb).unwrap(),
                (false, true) => sa,
                (false, false) => sb,
            };
            g.backward(loss).unwrap().wrt(xv).unwrap().clone()
        };
        let total = grad(true, true);
        let parts = grad(false, true).data().iter().zip(grad(false, false).data()).map(|(a, b)| a + b).collect::<Vec<_>>();
        for (t, p) in total.data().iter().zip(&parts) {
            prop_assert!((t - p).abs() <= 1e-14);
        }
    }

    #[test]
    fn kendall_tau_is_antisymmetric_and_rank_based(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..30),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let tau = kendall_tau(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&tau));
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert_eq!(kendall_tau(&x, &neg).unwrap(), -tau);
        let squashed: Vec<f64> = x.iter().map(|v| v.atan() * 3.0 + 7.0).collect();
        let cubed: Vec<f64> = y.iter().map(|v| v * v * v).collect();
        prop_assert_eq!(kendall_tau(&squashed, &cubed).unwrap(), tau);
    }

    #[test]
    fn genotype_json_round_trips(g in (1usize..6).prop_flat_map(genotype_strategy)) {
        prop_assert_eq!(Genotype::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn variation_keeps_parents_and_filter(n in 1usize..6, seed in any::<u64>(), p in 0.0f64..1.0) {
        let spec = DagSpec::dense(n);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = random_genotype(&mut r, &spec).unwrap();
        let b = random_genotype(&mut r, &spec).unwrap();
        let (a0, b0) = (a.clone(), b.clone());
        let m = mutate(&a, &mut r, p, &spec);
        let x = crossover(&a, &b, &mut r).unwrap();
        prop_assert_eq!(&a, &a0);
        prop_assert_eq!(&b, &b0);
        prop_assert!(coarse_filter(&m));
        prop_assert!(coarse_filter(&x));
        for e in 0..x.kinds().len() {
            prop_assert!(x.kind(e) == a.kind(e) || x.kind(e) == b.kind(e));
        }
    }
}
