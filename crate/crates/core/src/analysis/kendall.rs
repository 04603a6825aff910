use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supernet::Genotype;

/// Kendall tau-a: `(C - D) / (n (n - 1) / 2)`, where tied pairs in either
/// list count as neither concordant nor discordant. O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Config(format!(
            "kendall_tau: score lists differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "kendall_tau needs at least 2 items, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Config("kendall_tau: NaN score".into()));
    }

    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n * (n - 1) / 2) as i64;
    let tied = |run: usize| (run * run.saturating_sub(1) / 2) as i64;
    let (mut n1, mut n3) = (0i64, 0i64);
    let (mut run_x, mut run_xy) = (1usize, 1usize);
    for w in pairs.windows(2) {
        if w[0].0.total_cmp(&w[1].0) == Ordering::Equal {
            run_x += 1;
            if w[0].1.total_cmp(&w[1].1) == Ordering::Equal {
                run_xy += 1;
            } else {
                n3 += tied(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tied(run_x);
            n3 += tied(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += tied(run_x);
    n3 += tied(run_xy);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as i64;

    let mut n2 = 0i64;
    let mut run_y = 1usize;
    for w in ys.windows(2) {
        if w[0].total_cmp(&w[1]) == Ordering::Equal {
            run_y += 1;
        } else {
            n2 += tied(run_y);
            run_y = 1;
        }
    }
    n2 += tied(run_y);

    let c_minus_d = n0 - n1 - n2 + n3 - 2 * swaps;
    Ok(c_minus_d as f64 / n0 as f64)
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Super-net and stand-alone scores for the same genotypes, in the same
/// order. Both are "higher is better".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingPair {
    pub genotypes: Vec<Genotype>,
    pub supernet_scores: Vec<f64>,
    pub standalone_scores: Vec<f64>,
}

impl RankingPair {
    pub fn new(
        genotypes: Vec<Genotype>,
        supernet_scores: Vec<f64>,
        standalone_scores: Vec<f64>,
    ) -> Result<Self> {
        if genotypes.len() != supernet_scores.len() || genotypes.len() != standalone_scores.len() {
            return Err(Error::Config(format!(
                "ranking pair lengths differ: {} genotypes, {} super-net scores, {} stand-alone scores",
                genotypes.len(),
                supernet_scores.len(),
                standalone_scores.len()
            )));
        }
        if genotypes.len() < 2 {
            return Err(Error::Config(
                "ranking pair needs at least 2 genotypes".into(),
            ));
        }
        Ok(RankingPair {
            genotypes,
            supernet_scores,
            standalone_scores,
        })
    }

    pub fn tau(&self) -> Result<f64> {
        kendall_tau(&self.supernet_scores, &self.standalone_scores)
    }
}

/// Median of a non-empty list; the mean of the middle two for even length.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
