use rand::seq::SliceRandom;
use rand::Rng;

use super::dag::{DagSpec, Genotype};
use crate::paths::PathKind;

/// Number of sub-nets trained per step: one per parameterized kind.
pub const K: usize = PathKind::PARAMETERIZED.len();

/// `K` training genotypes. Under strict fair sampling, the kinds assigned to
/// each searchable edge across the batch are a permutation of the four
/// parameterized kinds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FairSampleBatch {
    pub genotypes: Vec<Genotype>,
}

impl FairSampleBatch {
    /// True when every searchable edge sees each parameterized kind exactly
    /// once across the batch.
    pub fn is_fair(&self, spec: &DagSpec) -> bool {
        self.genotypes.len() == K
            && spec.edges().iter().enumerate().all(|(i, &e)| {
                if !spec.is_searchable(e) {
                    return true;
                }
                let mut seen: Vec<PathKind> = self.genotypes.iter().map(|g| g.kind(i)).collect();
                seen.sort();
                seen == PathKind::PARAMETERIZED
            })
    }
}

/// Per edge, an independent uniform permutation of the parameterized kinds
/// spread over the `K` genotypes. Pinned (non-searchable) edges stay `none`.
pub fn sample_fair_batch(rng: &mut impl Rng, spec: &DagSpec) -> FairSampleBatch {
    let n = spec.n_intermediate;
    let mut genotypes = vec![Genotype::uniform(n, PathKind::None); K];
    for (i, e) in spec.edges().into_iter().enumerate() {
        if !spec.is_searchable(e) {
            continue;
        }
        let mut perm = PathKind::PARAMETERIZED;
        perm.shuffle(rng);
        for (g, kind) in genotypes.iter_mut().zip(perm) {
            g.set(i, kind);
        }
    }
    FairSampleBatch { genotypes }
}

/// `K` genotypes drawn independently, each searchable edge uniform over the
/// parameterized kinds. Kinds may repeat within an edge.
pub fn sample_uniform_batch(rng: &mut impl Rng, spec: &DagSpec) -> FairSampleBatch {
    let n = spec.n_intermediate;
    let edges = spec.edges();
    let genotypes = (0..K)
        .map(|_| {
            let mut g = Genotype::uniform(n, PathKind::None);
            for (i, &e) in edges.iter().enumerate() {
                if spec.is_searchable(e) {
                    g.set(i, *PathKind::PARAMETERIZED.choose(rng).expect("non-empty"));
                }
            }
            g
        })
        .collect();
    FairSampleBatch { genotypes }
}
