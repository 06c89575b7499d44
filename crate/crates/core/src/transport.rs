//! Empirical Wasserstein-1 estimates between finite point sets.
//!
//! The three estimators bracket the distance between two empirical measures:
//! `sliced_w1_lower ≤ exact_w1 ≤ trivial_coupling_upper`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::stats::{distance, norm, pairwise_sum};

/// Largest set size accepted by [`exact_w1`].
pub const EXACT_SIZE_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Exact,
    LowerBound,
    UpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportMeta {
    pub size_a: usize,
    pub size_b: usize,
    pub projections: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W1Estimate {
    pub value: f64,
    pub kind: EstimateKind,
    pub meta: TransportMeta,
}

impl W1Estimate {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }
}

fn check_sets(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("point sets must be nonempty"));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn meta(a: &SampleSet, b: &SampleSet, projections: Option<usize>) -> TransportMeta {
    TransportMeta {
        size_a: a.len(),
        size_b: b.len(),
        projections,
        seed: None,
    }
}

/// Minimum-cost perfect matching on a square cost matrix (row-major, `n × n`)
/// by the shortest-augmenting-path Hungarian method with potentials, `O(n³)`.
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based arrays; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[(r0 - 1) * n + (col - 1)] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Exact W1 between two equal-size empirical measures: the mean matched
/// distance under an optimal assignment.
pub fn exact_w1(a: &SampleSet, b: &SampleSet) -> Result<W1Estimate> {
    exact_w1_with_limit(a, b, EXACT_SIZE_LIMIT)
}

pub fn exact_w1_with_limit(a: &SampleSet, b: &SampleSet, limit: usize) -> Result<W1Estimate> {
    check_sets(a, b)?;
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "exact W1 needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n > limit {
        return Err(Error::invalid(format!("size {n} exceeds the exact limit {limit}")));
    }
    let mut cost = Vec::with_capacity(n * n);
    for p in a.iter() {
        for q in b.iter() {
            cost.push(distance(p, q));
        }
    }
    let assignment = min_cost_assignment(&cost, n);
    let matched: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .collect();
    Ok(W1Estimate {
        value: pairwise_sum(&matched) / n as f64,
        kind: EstimateKind::Exact,
        meta: meta(a, b, None),
    })
}

/// W1 between two 1-D empirical measures given sorted supports, via the
/// quantile coupling.
pub fn w1_sorted_1d(xs: &[f64], ys: &[f64]) -> f64 {
    let (n, m) = (xs.len(), ys.len());
    if n == m {
        let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).collect();
        return pairwise_sum(&diffs) / n as f64;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_x = (i + 1) as f64 / n as f64;
        let next_y = (j + 1) as f64 / m as f64;
        let next = next_x.min(next_y);
        total += (next - u) * (xs[i] - ys[j]).abs();
        u = next;
        if next_x <= next_y {
            i += 1;
        }
        if next_y <= next_x {
            j += 1;
        }
    }
    total
}

fn project_sorted(set: &SampleSet, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = set
        .iter()
        .map(|x| x.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Max-sliced lower bound: the largest 1-D W1 between projections onto
/// `n_projections` random unit directions. Projection is 1-Lipschitz, so
/// this never exceeds the true W1.
pub fn sliced_w1_lower<R: Rng + ?Sized>(
    a: &SampleSet,
    b: &SampleSet,
    n_projections: usize,
    rng: &mut R,
) -> Result<W1Estimate> {
    check_sets(a, b)?;
    if n_projections == 0 {
        return Err(Error::invalid("n_projections must be at least 1"));
    }
    let d = a.dim();
    let dirs: Vec<Vec<f64>> = (0..n_projections)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&v);
            if len > 1e-12 {
                break v.into_iter().map(|c| c / len).collect();
            }
        })
        .collect();
    let value = dirs
        .par_iter()
        .map(|dir| w1_sorted_1d(&project_sorted(a, dir), &project_sorted(b, dir)))
        .reduce(|| 0.0, f64::max);
    Ok(W1Estimate {
        value,
        kind: EstimateKind::LowerBound,
        meta: meta(a, b, Some(n_projections)),
    })
}

/// Expected distance under the product coupling: the mean over all pairs.
pub fn trivial_coupling_upper(a: &SampleSet, b: &SampleSet) -> Result<W1Estimate> {
    check_sets(a, b)?;
    let rows: Vec<f64> = a
        .to_vecs()
        .par_iter()
        .map(|p| {
            let d: Vec<f64> = b.iter().map(|q| distance(p, q)).collect();
            pairwise_sum(&d)
        })
        .collect();
    Ok(W1Estimate {
        value: pairwise_sum(&rows) / (a.len() * b.len()) as f64,
        kind: EstimateKind::UpperBound,
        meta: meta(a, b, None),
    })
}
