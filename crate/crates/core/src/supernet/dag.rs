use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::paths::PathKind;

/// Which edges of the DAG are searchable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every node `j` reads from every earlier node.
    Dense,
    /// Single-path chain: only `(i, i+1)` is searchable; other edges are
    /// pinned to `none`.
    Chain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

/// Node 0 is the backbone pyramid; nodes `1..=n` are intermediates whose sum
/// is the output pyramid. Edges are every `(i, j)` with `i < j`, ordered by
/// `(src, dst)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DagSpec {
    pub n_intermediate: usize,
    pub topology: Topology,
}

impl DagSpec {
    pub fn dense(n: usize) -> Self {
        DagSpec {
            n_intermediate: n,
            topology: Topology::Dense,
        }
    }

    pub fn chain(n: usize) -> Self {
        DagSpec {
            n_intermediate: n,
            topology: Topology::Chain,
        }
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n_intermediate;
        n * (n + 1) / 2
    }

    pub fn edges(&self) -> Vec<Edge> {
        let n = self.n_intermediate;
        (0..n)
            .flat_map(|src| (src + 1..=n).map(move |dst| Edge { src, dst }))
            .collect()
    }

    pub fn edge_index(&self, src: usize, dst: usize) -> Option<usize> {
        let n = self.n_intermediate;
        if src >= dst || dst > n {
            return None;
        }
        // Edges from sources 0..src come first: sum_{s<src} (n - s).
        let before: usize = (0..src).map(|s| n - s).sum();
        Some(before + (dst - src - 1))
    }

    pub fn is_searchable(&self, e: Edge) -> bool {
        match self.topology {
            Topology::Dense => true,
            Topology::Chain => e.dst == e.src + 1,
        }
    }

    /// Kinds an edge may take in a search-phase genotype.
    pub fn allowed_kinds(&self, e: Edge) -> &'static [PathKind] {
        if self.is_searchable(e) {
            &PathKind::ALL
        } else {
            &[PathKind::None]
        }
    }

    /// Number of complete genotypes, `prod_e |allowed(e)|`, or `None` on
    /// overflow.
    pub fn cardinality(&self) -> Option<u128> {
        self.edges().iter().try_fold(1u128, |acc, &e| {
            acc.checked_mul(self.allowed_kinds(e).len() as u128)
        })
    }

    /// Natural log of [`Self::cardinality`].
    pub fn log_cardinality(&self) -> f64 {
        self.edges()
            .iter()
            .map(|&e| (self.allowed_kinds(e).len() as f64).ln())
            .sum()
    }

    /// Every genotype of the space, in lexicographic order.
    pub fn enumerate(&self) -> Vec<Genotype> {
        let edges = self.edges();
        let mut out = vec![Vec::with_capacity(edges.len())];
        for &e in &edges {
            let kinds = self.allowed_kinds(e);
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    kinds.iter().map(move |&k| {
                        let mut next = prefix.clone();
                        next.push(k);
                        next
                    })
                })
                .collect();
        }
        out.into_iter()
            .map(|kinds| Genotype {
                n: self.n_intermediate,
                kinds,
            })
            .collect()
    }
}

/// One path kind per edge, in [`DagSpec::edges`] order. Ordering is
/// lexicographic over the kind sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    n: usize,
    kinds: Vec<PathKind>,
}

impl Genotype {
    pub fn new(n: usize, kinds: Vec<PathKind>) -> Result<Self> {
        let expected = n * (n + 1) / 2;
        if kinds.len() != expected {
            return Err(Error::Genotype(format!(
                "incomplete genotype: {} of {expected} edges assigned",
                kinds.len()
            )));
        }
        Ok(Genotype { n, kinds })
    }

    pub fn uniform(n: usize, kind: PathKind) -> Self {
        Genotype {
            n,
            kinds: vec![kind; n * (n + 1) / 2],
        }
    }

    pub fn n_intermediate(&self) -> usize {
        self.n
    }

    pub fn kinds(&self) -> &[PathKind] {
        &self.kinds
    }

    pub fn kind(&self, edge: usize) -> PathKind {
        self.kinds[edge]
    }

    pub fn set(&mut self, edge: usize, kind: PathKind) {
        self.kinds[edge] = kind;
    }

    pub fn get(&self, src: usize, dst: usize) -> Option<PathKind> {
        DagSpec::dense(self.n)
            .edge_index(src, dst)
            .map(|i| self.kinds[i])
    }

    pub fn check_spec(&self, spec: &DagSpec) -> Result<()> {
        if self.n != spec.n_intermediate {
            return Err(Error::Genotype(format!(
                "genotype has {} intermediate nodes, super-net has {}",
                self.n, spec.n_intermediate
            )));
        }
        Ok(())
    }

    pub fn hamming(&self, other: &Genotype) -> usize {
        self.kinds
            .iter()
            .zip(&other.kinds)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genotype serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.kinds.iter().map(|k| k.as_str()).collect();
        write!(f, "[{}]", names.join(","))
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    src: usize,
    dst: usize,
    path: PathKind,
}

#[derive(Serialize, Deserialize)]
struct GenotypeJson {
    n: usize,
    edges: Vec<EdgeJson>,
}

impl Serialize for Genotype {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let edges = DagSpec::dense(self.n)
            .edges()
            .into_iter()
            .zip(&self.kinds)
            .map(|(e, &path)| EdgeJson {
                src: e.src,
                dst: e.dst,
                path,
            })
            .collect();
        GenotypeJson { n: self.n, edges }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = GenotypeJson::deserialize(d)?;
        let spec = DagSpec::dense(raw.n);
        let mut kinds = vec![None; spec.edge_count()];
        for e in raw.edges {
            let idx = spec
                .edge_index(e.src, e.dst)
                .ok_or_else(|| D::Error::custom(format!("invalid edge ({}, {})", e.src, e.dst)))?;
            if kinds[idx].replace(e.path).is_some() {
                return Err(D::Error::custom(format!(
                    "duplicate edge ({}, {})",
                    e.src, e.dst
                )));
            }
        }
        let kinds = kinds
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| D::Error::custom("incomplete genotype: missing edges"))?;
        Ok(Genotype { n: raw.n, kinds })
    }
}
