use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::paths::PathKind;
use crate::supernet::{DagSpec, Genotype};

/// Attempts before a filtered draw gives up.
pub const MAX_TRIES: usize = 10_000;

/// Rejects degenerate genotypes with no parameterized path on any edge:
/// all-`none`, or only `none`/`skip_connect`.
pub fn coarse_filter(g: &Genotype) -> bool {
    g.kinds().iter().any(|k| k.is_parameterized())
}

/// Each searchable edge uniform over all six kinds, no filtering.
pub fn random_genotype_unfiltered(rng: &mut impl Rng, spec: &DagSpec) -> Genotype {
    let kinds = spec
        .edges()
        .into_iter()
        .map(|e| *spec.allowed_kinds(e).choose(rng).expect("non-empty"))
        .collect();
    Genotype::new(spec.n_intermediate, kinds).expect("complete by construction")
}

pub fn random_genotype_with(
    rng: &mut impl Rng,
    spec: &DagSpec,
    filter: impl Fn(&Genotype) -> bool,
) -> Result<Genotype> {
    for _ in 0..MAX_TRIES {
        let g = random_genotype_unfiltered(rng, spec);
        if filter(&g) {
            return Ok(g);
        }
    }
    Err(Error::Search(format!(
        "no genotype passed the filter in {MAX_TRIES} draws"
    )))
}

/// Uniform random genotype that passes [`coarse_filter`].
pub fn random_genotype(rng: &mut impl Rng, spec: &DagSpec) -> Result<Genotype> {
    random_genotype_with(rng, spec, coarse_filter)
}

fn mutate_once(parent: &Genotype, rng: &mut impl Rng, p: f64, spec: &DagSpec) -> Genotype {
    let mut child = parent.clone();
    for (i, e) in spec.edges().into_iter().enumerate() {
        let allowed = spec.allowed_kinds(e);
        if allowed.len() < 2 || !rng.gen_bool(p) {
            continue;
        }
        let current = parent.kind(i);
        let others: Vec<PathKind> = allowed.iter().copied().filter(|&k| k != current).collect();
        child.set(i, *others.choose(rng).expect("at least one alternative"));
    }
    child
}

/// Resamples each searchable edge with probability `p`, uniformly over the
/// kinds other than its current one. Draws again until the child passes
/// `filter`; returns the parent unchanged if that never happens.
pub fn mutate_with(
    parent: &Genotype,
    rng: &mut impl Rng,
    p: f64,
    spec: &DagSpec,
    filter: impl Fn(&Genotype) -> bool,
) -> Genotype {
    let p = p.clamp(0.0, 1.0);
    for _ in 0..MAX_TRIES {
        let child = mutate_once(parent, rng, p, spec);
        if filter(&child) {
            return child;
        }
    }
    parent.clone()
}

pub fn mutate(parent: &Genotype, rng: &mut impl Rng, p: f64, spec: &DagSpec) -> Genotype {
    mutate_with(parent, rng, p, spec, coarse_filter)
}

/// Uniform crossover: every edge inherits from `a` or `b` with probability
/// 1/2. Draws again until the child passes `filter`; falls back to `a`.
pub fn crossover_with(
    a: &Genotype,
    b: &Genotype,
    rng: &mut impl Rng,
    filter: impl Fn(&Genotype) -> bool,
) -> Result<Genotype> {
    if a.n_intermediate() != b.n_intermediate() {
        return Err(Error::Genotype(format!(
            "crossover between {}-node and {}-node genotypes",
            a.n_intermediate(),
            b.n_intermediate()
        )));
    }
    for _ in 0..MAX_TRIES {
        let mut child = a.clone();
        for i in 0..a.kinds().len() {
            if rng.gen_bool(0.5) {
                child.set(i, b.kind(i));
            }
        }
        if filter(&child) {
            return Ok(child);
        }
    }
    Ok(a.clone())
}

pub fn crossover(a: &Genotype, b: &Genotype, rng: &mut impl Rng) -> Result<Genotype> {
    crossover_with(a, b, rng, coarse_filter)
}
