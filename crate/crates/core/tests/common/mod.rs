//! Independent reference computations for the integration and acceptance
//! tests. Nothing here calls into the estimators it is used to check.

#![allow(dead_code)]

use itertools::Itertools;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erf;

use ddpm_bound::data::DomainBox;
use ddpm_bound::denoiser::DiffusionModel;
use ddpm_bound::net::{Activation, DenoiserNet, TimeEmbedding};
use ddpm_bound::schedule::{linear_schedule, NoiseSchedule, SigmaKind};
use ddpm_bound::trainer::denoising_loss_and_grad;

/// A generator unrelated to the crate's seeded streams.
pub fn oracle_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// `KL(N(m1, diag v1) ‖ N(m2, diag v2))` from the textbook formula.
pub fn gaussian_kl_diag(m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]) -> f64 {
    let mut kl = 0.0;
    for k in 0..m1.len() {
        let d = m1[k] - m2[k];
        kl += (v2[k] / v1[k]).ln() + (v1[k] + d * d) / v2[k] - 1.0;
    }
    0.5 * kl
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// `E|m + s Z|` for a standard normal `Z`.
pub fn folded_normal_mean(m: f64, s: f64) -> f64 {
    if s == 0.0 {
        return m.abs();
    }
    s * (2.0 / std::f64::consts::PI).sqrt() * (-m * m / (2.0 * s * s)).exp()
        + m * (1.0 - 2.0 * normal_cdf(-m / s))
}

/// Mean and standard error of `f` over `n` draws from an independent generator.
pub fn mc_oracle<F: FnMut(&mut ChaCha20Rng) -> f64>(n: usize, seed: u64, mut f: F) -> (f64, f64) {
    let mut rng = oracle_rng(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = f(&mut rng);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Minimum mean matching cost over every permutation.
pub fn brute_force_w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(&a[i], &b[j])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / n as f64
}

pub fn random_points<R: Rng>(n: usize, dim: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

/// Model whose network predicts `ε ≡ 0`, so each backward mean is `x / √α_t`.
pub fn null_model(schedule: NoiseSchedule, dim: usize, half: f64) -> DiffusionModel {
    let mut net = DenoiserNet::new(
        dim,
        &[8],
        TimeEmbedding::new(4).unwrap(),
        Activation::Silu,
        &mut oracle_rng(0),
    )
    .unwrap();
    net.zero_output_layer();
    DiffusionModel::new(schedule, net, DomainBox::centered_cube(dim, half).unwrap()).unwrap()
}

/// Largest `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` over random parameter points.
/// Tiny network: `D = 2`, hidden `[2, 2]`, time embedding of width 4, central
/// differences with `h = 1e−6`.
pub fn worst_relative_error(points: usize, activation: Activation, seed: u64) -> f64 {
    let s = linear_schedule(10, 1e-4, 0.2, SigmaKind::Posterior).unwrap();
    let mut rng = oracle_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let mut net = DenoiserNet::new(2, &[2, 2], TimeEmbedding::new(4).unwrap(), activation, &mut rng)
            .unwrap();
        let batch = 5;
        let x0 = Array2::from_shape_fn((batch, 2), |_| rng.random_range(-1.0..1.0));
        let noise = Array2::from_shape_fn((batch, 2), |_| normal(&mut rng));
        let ts: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=10)).collect();
        let (_, grads) = denoising_loss_and_grad(&net, &s, &x0.view(), &ts, &noise.view());
        let analytic = grads.flatten();
        let base = net.params();
        let h = 1e-6;
        let mut fd = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            net.set_params(&p);
            let up = denoising_loss_and_grad(&net, &s, &x0.view(), &ts, &noise.view()).0;
            p[i] = base[i] - h;
            net.set_params(&p);
            let down = denoising_loss_and_grad(&net, &s, &x0.view(), &ts, &noise.view()).0;
            fd[i] = (up - down) / (2.0 * h);
        }
        net.set_params(&base);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&analytic).max(norm(&fd)));
    }
    worst
}

