//! Individual terms of the certified bound and their Monte-Carlo estimators.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::SampleSet;
use crate::denoiser::DiffusionModel;
use crate::error::{Error, Result};
use crate::forward::marginal_with_alpha_bar;
use crate::rng::SeedRoot;
use crate::stats::{distance, Estimate};

/// How the inner expectations of the cross and noise terms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    /// Sampled expectations.
    #[default]
    MonteCarlo,
    /// Analytic Gaussian upper bounds.
    ClosedForm,
}

impl BoundMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "monte-carlo" => Some(BoundMode::MonteCarlo),
            "closed-form" => Some(BoundMode::ClosedForm),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundMode::MonteCarlo => "monte-carlo",
            BoundMode::ClosedForm => "closed-form",
        }
    }
}

/// Draws per parallel task for the large pooled Monte-Carlo sums.
const MC_CHUNK: usize = 16_384;

/// `E‖ε − ε′‖` for independent standard normals in `R^D`: the exact value
/// `2 Γ((D+1)/2) / Γ(D/2)` and the Jensen bound `√(2D)`.
pub fn gaussian_pair_distance(dim: usize) -> Result<(f64, f64)> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let d = dim as f64;
    let exact = 2.0 * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp();
    Ok((exact, (2.0 * d).sqrt()))
}

/// Monte-Carlo estimate of `E‖ε − ε′‖` from `draws` pairs.
pub fn gaussian_pair_distance_mc(dim: usize, draws: usize, seeds: SeedRoot) -> Result<Estimate> {
    if dim == 0 || draws == 0 {
        return Err(Error::invalid("dimension and draws must be positive"));
    }
    let values = chunked_draws(draws, seeds, "pair", |rng| {
        let mut sq = 0.0;
        for _ in 0..dim {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            sq += (a - b) * (a - b);
        }
        sq.sqrt()
    });
    Ok(Estimate::from_samples(&values))
}

/// Evaluates `draw` `total` times, split into fixed chunks that each own a
/// derived stream, and returns the values in draw order.
pub(crate) fn chunked_draws<F>(total: usize, seeds: SeedRoot, tag: &str, draw: F) -> Vec<f64>
where
    F: Fn(&mut crate::rng::Stream) -> f64 + Sync,
{
    let chunks = total.div_ceil(MC_CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeds.stream(tag, c as u64);
            let len = MC_CHUNK.min(total - c * MC_CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    parts.concat()
}

/// Closed-form bound `√(ᾱ_T ‖x_0‖² + (2 − ᾱ_T) D)` on `E‖x_T − y_T‖`,
/// `x_T ~ q(x_T | x_0)`, `y_T ~ N(0, I)`.
pub fn cross_distance_closed_form(alpha_bar_final: f64, x0: &[f64]) -> f64 {
    let sq: f64 = x0.iter().map(|v| v * v).sum();
    let d = x0.len() as f64;
    (alpha_bar_final * sq + (2.0 - alpha_bar_final) * d).sqrt()
}

fn cross_draw<R: Rng + ?Sized>(alpha_bar_final: f64, x0: &[f64], rng: &mut R) -> f64 {
    let x = marginal_with_alpha_bar(alpha_bar_final, x0, rng);
    let y: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    distance(&x, &y)
}

/// `E_{q(x_T|x_0)} E_{N(y_T; 0, I)} ‖x_T − y_T‖` for one point.
pub fn cross_distance_term<R: Rng + ?Sized>(
    model: &DiffusionModel,
    x0: &[f64],
    mode: BoundMode,
    n_mc: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    let ab = model.schedule.alpha_bar_final();
    match mode {
        BoundMode::ClosedForm => Ok(Estimate::exact(cross_distance_closed_form(ab, x0))),
        BoundMode::MonteCarlo => {
            if n_mc == 0 {
                return Err(Error::invalid("n_mc must be at least 1"));
            }
            let values: Vec<f64> = (0..n_mc).map(|_| cross_draw(ab, x0, rng)).collect();
            Ok(Estimate::from_samples(&values))
        }
    }
}

/// The sample average of the cross term. In Monte-Carlo mode `draws` pairs
/// are spread over the sample round-robin, so the estimator is unbiased for
/// the average of the per-point expectations.
pub fn average_cross_distance(
    model: &DiffusionModel,
    sample: &SampleSet,
    mode: BoundMode,
    draws: usize,
    seeds: SeedRoot,
) -> Result<Estimate> {
    let ab = model.schedule.alpha_bar_final();
    match mode {
        BoundMode::ClosedForm => {
            let vals: Vec<f64> = sample
                .iter()
                .map(|x0| cross_distance_closed_form(ab, x0))
                .collect();
            Ok(Estimate::exact(crate::stats::mean(&vals)))
        }
        BoundMode::MonteCarlo => {
            if draws == 0 {
                return Err(Error::invalid("draws must be at least 1"));
            }
            let n = sample.len();
            let chunks = draws.div_ceil(MC_CHUNK);
            let parts: Vec<Vec<f64>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = seeds.stream("cross", c as u64);
                    let start = c * MC_CHUNK;
                    let len = MC_CHUNK.min(draws - start);
                    (0..len)
                        .map(|k| cross_draw(ab, sample.point((start + k) % n), &mut rng))
                        .collect()
                })
                .collect();
            Ok(Estimate::from_samples(&parts.concat()))
        }
    }
}

/// Average reconstruction distance `ℓ` for one point: `n_noise` draws of
/// `x_T ~ q(x_T | x_0)`, each pushed through `n_chains` backward chains.
/// The standard error treats the per-draw averages as iid.
pub fn recon_loss<R: Rng + ?Sized>(
    model: &DiffusionModel,
    x0: &[f64],
    n_noise: usize,
    n_chains: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if n_noise == 0 || n_chains == 0 {
        return Err(Error::invalid("n_noise and n_chains must be at least 1"));
    }
    if x0.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    let per_point = recon_losses_batch(model, &[x0], n_noise, n_chains, rng);
    Ok(per_point.into_iter().next().expect("one point"))
}

/// Reconstruction losses for several points in one batched backward pass.
pub(crate) fn recon_losses_batch<R: Rng + ?Sized>(
    model: &DiffusionModel,
    points: &[&[f64]],
    n_noise: usize,
    n_chains: usize,
    rng: &mut R,
) -> Vec<Estimate> {
    let d = model.dim();
    let ab = model.schedule.alpha_bar_final();
    let per_point = n_noise * n_chains;
    let mut start = Array2::zeros((points.len() * per_point, d));
    let mut row = 0;
    for x0 in points {
        for _ in 0..n_noise {
            let x_t = marginal_with_alpha_bar(ab, x0, rng);
            for _ in 0..n_chains {
                for k in 0..d {
                    start[[row, k]] = x_t[k];
                }
                row += 1;
            }
        }
    }
    let out = model.reconstruct_batch(start, rng);
    points
        .iter()
        .enumerate()
        .map(|(p, x0)| {
            let draws: Vec<f64> = (0..n_noise)
                .map(|j| {
                    let base = p * per_point + j * n_chains;
                    let total: f64 = (0..n_chains)
                        .map(|c| {
                            let r = out.row(base + c);
                            distance(r.as_slice().expect("contiguous"), x0)
                        })
                        .sum();
                    total / n_chains as f64
                })
                .collect();
            Estimate::from_samples(&draws)
        })
        .collect()
}

/// Points per parallel reconstruction task.
const RECON_GROUP: usize = 32;

/// Per-point reconstruction losses for a whole sample, in sample order.
pub fn recon_losses(
    model: &DiffusionModel,
    sample: &SampleSet,
    n_noise: usize,
    n_chains: usize,
    seeds: SeedRoot,
) -> Result<Vec<Estimate>> {
    if n_noise == 0 || n_chains == 0 {
        return Err(Error::invalid("n_noise and n_chains must be at least 1"));
    }
    let points: Vec<&[f64]> = sample.iter().collect();
    let groups: Vec<Vec<Estimate>> = points
        .par_chunks(RECON_GROUP)
        .enumerate()
        .map(|(g, chunk)| {
            let mut rng = seeds.stream("recon", g as u64);
            recon_losses_batch(model, chunk, n_noise, n_chains, &mut rng)
        })
        .collect();
    Ok(groups.concat())
}

/// Where the per-step Lipschitz factors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KSource {
    /// `K′_t` of the ground-truth posterior mean for `t ≥ 2`.
    #[default]
    Schedule,
    /// Probe estimates on the trained network for every step.
    Probed,
}

impl KSource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "schedule" => Some(KSource::Schedule),
            "probed" => Some(KSource::Probed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KSource::Schedule => "schedule",
            KSource::Probed => "probed",
        }
    }
}

/// How the decoder factor `K_θ^1` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecoderLipschitz {
    #[default]
    Probe,
    /// `K_θ^1 = 1`.
    One,
}

impl DecoderLipschitz {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "probe" => Some(DecoderLipschitz::Probe),
            "one" => Some(DecoderLipschitz::One),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KProvenance {
    Schedule,
    Probed,
    Fixed,
}

/// The factors `K_θ^1..K_θ^T` used by a bound, with where each came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KValues {
    pub values: Vec<f64>,
    pub provenance: Vec<KProvenance>,
}

impl KValues {
    /// `ln ∏_{i=1}^{t} K_i` for `t = 0..=T` (index 0 is the empty product).
    pub fn log_prefix_products(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for k in &self.values {
            acc += k.ln();
            out.push(acc);
        }
        out
    }

    /// `∏_{t=1}^T K_t`, accumulated in log space.
    pub fn full_product(&self) -> f64 {
        self.log_prefix_products()
            .last()
            .copied()
            .unwrap_or(0.0)
            .exp()
    }

    /// `Σ_{t=2}^T (∏_{i=1}^{t−1} K_i) σ_t`.
    pub fn noise_factor(&self, model: &DiffusionModel) -> f64 {
        let logs = self.log_prefix_products();
        let terms: Vec<f64> = (2..=self.values.len())
            .map(|t| logs[t - 1].exp() * model.schedule.sigma(t))
            .collect();
        crate::stats::pairwise_sum(&terms)
    }
}

/// Collects the Lipschitz factors for every step.
pub fn lipschitz_factors(
    model: &DiffusionModel,
    source: KSource,
    decoder: DecoderLipschitz,
    n_pairs: usize,
    scales: &[f64],
    seeds: SeedRoot,
) -> Result<KValues> {
    let big_t = model.num_steps();
    let mut values = Vec::with_capacity(big_t);
    let mut provenance = Vec::with_capacity(big_t);
    for t in 1..=big_t {
        let (k, p) = if t == 1 && decoder == DecoderLipschitz::One {
            (1.0, KProvenance::Fixed)
        } else if t >= 2 && source == KSource::Schedule {
            (model.schedule.schedule_lipschitz(t)?, KProvenance::Schedule)
        } else {
            let mut rng = seeds.stream("lipschitz", t as u64);
            (
                model.estimate_lipschitz_multiscale(t, n_pairs, scales, &mut rng)?,
                KProvenance::Probed,
            )
        };
        values.push(k);
        provenance.push(p);
    }
    Ok(KValues { values, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn pair_distance_small_dimensions() {
        let (e1, b1) = gaussian_pair_distance(1).unwrap();
        assert!((e1 - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((e1 - 1.12838).abs() < 1e-5);
        assert!((b1 - 2f64.sqrt()).abs() < 1e-15);
        let (e2, b2) = gaussian_pair_distance(2).unwrap();
        assert!((e2 - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert_eq!(b2, 2.0);
        assert!(e2 < b2);
        assert!(gaussian_pair_distance(0).is_err());
    }

    #[test]
    fn pair_distance_monotone_and_tight() {
        let mut prev = 0.0;
        for d in 1..=64 {
            let (e, b) = gaussian_pair_distance(d).unwrap();
            assert!(e > prev && e <= b);
            prev = e;
        }
        let (e, b) = gaussian_pair_distance(64).unwrap();
        assert!(e / b > 0.99);
    }

    #[test]
    fn closed_form_cross_examples() {
        assert!((cross_distance_closed_form(0.0, &[0.3, 0.9]) - 2.0).abs() < 1e-15);
        assert!((cross_distance_closed_form(1.0, &[2.0, 0.0]) - 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chunked_draws_cover_total() {
        let v = chunked_draws(MC_CHUNK * 2 + 5, SeedRoot(1), "x", |r| r.random::<f64>());
        assert_eq!(v.len(), MC_CHUNK * 2 + 5);
        let w = chunked_draws(MC_CHUNK * 2 + 5, SeedRoot(1), "x", |r| r.random::<f64>());
        assert_eq!(v, w);
        let _ = stream(0);
    }
}
