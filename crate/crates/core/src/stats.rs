//! Small numeric helpers shared by the Monte-Carlo estimators.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

/// A Monte-Carlo mean together with its sample standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            mean: value,
            std_err: 0.0,
            samples: 0,
        }
    }

    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let m = mean(values);
        let std_err = if n > 1 {
            let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
            (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: m,
            std_err,
            samples: n,
        }
    }

    /// Average of independent estimates: mean of the means, with the
    /// standard errors combined in quadrature.
    pub fn average(parts: &[Estimate]) -> Self {
        let k = parts.len().max(1) as f64;
        let means: Vec<f64> = parts.iter().map(|e| e.mean).collect();
        let vars: Vec<f64> = parts.iter().map(|e| e.std_err * e.std_err).collect();
        Estimate {
            mean: pairwise_sum(&means) / k,
            std_err: pairwise_sum(&vars).sqrt() / k,
            samples: parts.iter().map(|e| e.samples).sum(),
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
