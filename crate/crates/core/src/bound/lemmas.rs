//! Monte-Carlo checks of the one-step and iterated contraction inequalities.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::terms::{gaussian_pair_distance, KValues};
use crate::denoiser::DiffusionModel;
use crate::error::{Error, Result};
use crate::rng::SeedRoot;
use crate::stats::{distance, Estimate};

/// Trials per parallel task.
const TRIAL_CHUNK: usize = 256;

/// Slack on deterministic comparisons, relative to the right-hand side.
const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionConfig {
    pub n_trials: usize,
    /// Noise draws (or chain pairs) per trial.
    pub draws: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_scales: Vec<f64>,
    /// Allowed excess in standard errors.
    pub se_slack: f64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            n_trials: 10_000,
            draws: 32,
            lipschitz_pairs: 4096,
            lipschitz_scales: vec![0.5, 0.05, 0.005],
            se_slack: 3.0,
        }
    }
}

/// Per-trial sides of an inequality `LHS ≤ RHS`.
#[derive(Debug, Clone)]
pub struct TrialSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub lhs: Vec<Estimate>,
    pub rhs: Vec<f64>,
    /// Lipschitz factors used on the right-hand side, one per step involved.
    pub k_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Step checked, `None` for the full chain.
    pub t: Option<usize>,
    pub pass: bool,
    pub n_trials: usize,
    pub draws: usize,
    /// Trial-averaged left-hand side with its pooled standard error.
    pub lhs: Estimate,
    /// Trial-averaged right-hand side.
    pub rhs: f64,
    /// `rhs + slack·SE − lhs` for the trial averages; negative on failure.
    pub margin: f64,
    /// Trials whose own estimate exceeds their own `RHS + slack·SE`.
    pub trial_exceedances: usize,
    /// Smallest per-trial margin.
    pub worst_trial_margin: f64,
    /// Largest per-trial `(LHS − RHS) / SE`.
    pub worst_trial_z: f64,
    /// `‖x − y‖` of the trial with the largest z.
    pub worst_trial_distance: f64,
    pub k_hat: Vec<f64>,
}

impl TrialSet {
    /// The pass/fail decision compares the trial averages, so one
    /// near-coincident pair (where the inequality is an equality in
    /// expectation) cannot fail the check by chance. Per-trial outcomes are
    /// reported alongside.
    pub fn verdict(&self, t: Option<usize>, draws: usize, se_slack: f64) -> Verdict {
        let mut exceed = 0;
        let mut worst = f64::INFINITY;
        let mut worst_z = f64::NEG_INFINITY;
        let mut worst_dist = 0.0;
        for (i, (l, r)) in self.lhs.iter().zip(&self.rhs).enumerate() {
            let margin = r + se_slack * l.std_err - l.mean + ROUNDING_SLACK * (1.0 + r.abs());
            if margin < 0.0 {
                exceed += 1;
            }
            worst = worst.min(margin);
            let z = if l.std_err > 0.0 {
                (l.mean - r) / l.std_err
            } else if l.mean > r + ROUNDING_SLACK * (1.0 + r.abs()) {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            if z > worst_z {
                worst_z = z;
                worst_dist = row_distance(&self.x.view(), &self.y.view(), i);
            }
        }
        let lhs = Estimate::average(&self.lhs);
        let rhs = crate::stats::mean(&self.rhs);
        let margin = rhs + se_slack * lhs.std_err - lhs.mean + ROUNDING_SLACK * (1.0 + rhs.abs());
        Verdict {
            t,
            pass: margin >= 0.0,
            n_trials: self.rhs.len(),
            draws,
            lhs,
            rhs,
            margin,
            trial_exceedances: exceed,
            worst_trial_margin: worst,
            worst_trial_z: worst_z,
            worst_trial_distance: worst_dist,
            k_hat: self.k_hat.clone(),
        }
    }
}

fn validate(cfg: &ContractionConfig) -> Result<()> {
    if cfg.n_trials == 0 || cfg.draws == 0 {
        return Err(Error::invalid("n_trials and draws must be at least 1"));
    }
    if cfg.lipschitz_pairs == 0 || cfg.lipschitz_scales.is_empty() {
        return Err(Error::invalid("Lipschitz probing needs pairs and at least one scale"));
    }
    Ok(())
}

fn uniform_pairs<R: Rng + ?Sized>(
    model: &DiffusionModel,
    n: usize,
    rng: &mut R,
) -> (Array2<f64>, Array2<f64>) {
    let d = model.dim();
    let mut x = Array2::zeros((n, d));
    let mut y = Array2::zeros((n, d));
    for i in 0..n {
        let a = model.domain.sample_uniform(rng);
        let b = model.domain.sample_uniform(rng);
        for k in 0..d {
            x[[i, k]] = a[k];
            y[[i, k]] = b[k];
        }
    }
    (x, y)
}

fn row_distance(a: &ArrayView2<f64>, b: &ArrayView2<f64>, i: usize) -> f64 {
    distance(
        a.row(i).as_slice().expect("contiguous"),
        b.row(i).as_slice().expect("contiguous"),
    )
}

/// Sides of the one-step inequality
/// `E‖x_{t−1} − y_{t−1}‖ ≤ K̂_t ‖x_t − y_t‖ + σ_t E‖ε − ε′‖` for pairs uniform
/// in the domain box, with independent noise for the two steps. At `t = 1`
/// the deterministic decoder inequality is used. `K̂_t` is the larger of the
/// probe estimate and the largest ratio seen on the trial pairs.
pub fn contraction_trials<R: Rng + ?Sized>(
    model: &DiffusionModel,
    t: usize,
    cfg: &ContractionConfig,
    rng: &mut R,
) -> Result<TrialSet> {
    validate(cfg)?;
    model.schedule.check_step(t, 1)?;
    let (x, y) = uniform_pairs(model, cfg.n_trials, rng);
    let (gx, gy) = if t == 1 {
        (model.decode_batch(&x.view()), model.decode_batch(&y.view()))
    } else {
        (model.g_mean_batch(&x.view(), t), model.g_mean_batch(&y.view(), t))
    };
    let probe =
        model.estimate_lipschitz_multiscale(t, cfg.lipschitz_pairs, &cfg.lipschitz_scales, rng)?;
    let mut k_hat = probe;
    for i in 0..cfg.n_trials {
        let dx = row_distance(&x.view(), &y.view(), i);
        if dx > 0.0 {
            k_hat = k_hat.max(row_distance(&gx.view(), &gy.view(), i) / dx);
        }
    }
    let sigma = if t == 1 { 0.0 } else { model.schedule.sigma(t) };
    let (pair, _) = gaussian_pair_distance(model.dim())?;
    let root = SeedRoot(rng.random());
    let d = model.dim();
    let draws = cfg.draws;

    let lhs: Vec<Estimate> = (0..cfg.n_trials)
        .collect::<Vec<_>>()
        .par_chunks(TRIAL_CHUNK)
        .enumerate()
        .flat_map_iter(|(c, idx)| {
            let mut r = root.stream("contraction", c as u64);
            let (gx, gy) = (&gx, &gy);
            idx.iter()
                .map(|&i| {
                    if sigma == 0.0 {
                        return Estimate::exact(row_distance(&gx.view(), &gy.view(), i));
                    }
                    let vals: Vec<f64> = (0..draws)
                        .map(|_| {
                            let mut sq = 0.0;
                            for k in 0..d {
                                let e: f64 = r.sample(StandardNormal);
                                let e2: f64 = r.sample(StandardNormal);
                                let diff = gx[[i, k]] - gy[[i, k]] + sigma * (e - e2);
                                sq += diff * diff;
                            }
                            sq.sqrt()
                        })
                        .collect();
                    Estimate::from_samples(&vals)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let rhs: Vec<f64> = (0..cfg.n_trials)
        .map(|i| k_hat * row_distance(&x.view(), &y.view(), i) + sigma * pair)
        .collect();
    Ok(TrialSet {
        x,
        y,
        lhs,
        rhs,
        k_hat: vec![k_hat],
    })
}

/// Pass/fail form of [`contraction_trials`].
pub fn check_contraction<R: Rng + ?Sized>(
    model: &DiffusionModel,
    t: usize,
    cfg: &ContractionConfig,
    rng: &mut R,
) -> Result<Verdict> {
    let trials = contraction_trials(model, t, cfg, rng)?;
    Ok(trials.verdict(Some(t), cfg.draws, cfg.se_slack))
}

/// Sides of the iterated inequality
/// `E‖x̂_0 − ŷ_0‖ ≤ (∏_t K̂_t)‖x_T − y_T‖ + (Σ_{t≥2} ∏_{i<t} K̂_i σ_t) E‖ε − ε′‖`
/// for endpoint pairs uniform in the domain box, each run through `draws`
/// pairs of independent backward chains. Every `K̂_t` is a probe estimate.
pub fn iterated_trials<R: Rng + ?Sized>(
    model: &DiffusionModel,
    cfg: &ContractionConfig,
    rng: &mut R,
) -> Result<TrialSet> {
    validate(cfg)?;
    if model.num_steps() < 2 {
        return Err(Error::invalid("the iterated check needs T >= 2"));
    }
    let (x, y) = uniform_pairs(model, cfg.n_trials, rng);
    let mut k = Vec::with_capacity(model.num_steps());
    for t in 1..=model.num_steps() {
        k.push(model.estimate_lipschitz_multiscale(
            t,
            cfg.lipschitz_pairs,
            &cfg.lipschitz_scales,
            rng,
        )?);
    }
    let kv = KValues {
        provenance: vec![super::terms::KProvenance::Probed; k.len()],
        values: k,
    };
    let product = kv.full_product();
    let (pair, _) = gaussian_pair_distance(model.dim())?;
    let offset = kv.noise_factor(model) * pair;
    let root = SeedRoot(rng.random());
    let draws = cfg.draws;

    let lhs: Vec<Estimate> = (0..cfg.n_trials)
        .collect::<Vec<_>>()
        .par_chunks(TRIAL_CHUNK)
        .enumerate()
        .flat_map_iter(|(c, idx)| {
            let mut r = root.stream("iterated", c as u64);
            let rows: Vec<usize> = idx
                .iter()
                .flat_map(|&i| std::iter::repeat_n(i, draws))
                .collect();
            let xs = x.select(Axis(0), &rows);
            let ys = y.select(Axis(0), &rows);
            let mut both = ndarray::concatenate(Axis(0), &[xs.view(), ys.view()])
                .expect("matching widths");
            both = model.reconstruct_batch(both, &mut r);
            let half = rows.len();
            let (a, b) = both.view().split_at(Axis(0), half);
            idx.iter()
                .enumerate()
                .map(|(j, _)| {
                    let vals: Vec<f64> = (0..draws)
                        .map(|m| row_distance(&a, &b, j * draws + m))
                        .collect();
                    Estimate::from_samples(&vals)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let rhs: Vec<f64> = (0..cfg.n_trials)
        .map(|i| product * row_distance(&x.view(), &y.view(), i) + offset)
        .collect();
    Ok(TrialSet {
        x,
        y,
        lhs,
        rhs,
        k_hat: kv.values,
    })
}

/// Pass/fail form of [`iterated_trials`].
pub fn check_iterated_contraction<R: Rng + ?Sized>(
    model: &DiffusionModel,
    cfg: &ContractionConfig,
    rng: &mut R,
) -> Result<Verdict> {
    let trials = iterated_trials(model, cfg, rng)?;
    Ok(trials.verdict(None, cfg.draws, cfg.se_slack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::tests::null_model;
    use crate::rng::stream;
    use crate::schedule::{linear_schedule, SigmaKind};

    fn cfg(n: usize, draws: usize) -> ContractionConfig {
        ContractionConfig {
            n_trials: n,
            draws,
            lipschitz_pairs: 256,
            ..ContractionConfig::default()
        }
    }

    #[test]
    fn null_network_passes_every_step() {
        let s = linear_schedule(8, 1e-3, 0.2, SigmaKind::Posterior).unwrap();
        let m = null_model(s, 1.0);
        let mut rng = stream(9);
        for t in 1..=8 {
            let v = check_contraction(&m, t, &cfg(500, 16), &mut rng).unwrap();
            assert!(v.pass, "t={t}: {v:?}");
            if t >= 2 {
                let expected = 1.0 / m.schedule.alpha(t).sqrt();
                assert!((v.k_hat[0] - expected).abs() < 1e-9);
            }
        }
        let v = check_iterated_contraction(&m, &cfg(200, 4), &mut rng).unwrap();
        assert!(v.pass, "{v:?}");
    }

    #[test]
    fn zero_sigma_reduces_to_deterministic_ratio() {
        let s = linear_schedule(4, 1e-3, 0.2, SigmaKind::Zero).unwrap();
        let m = null_model(s, 1.0);
        let trials = contraction_trials(&m, 3, &cfg(100, 4), &mut stream(1)).unwrap();
        for (l, r) in trials.lhs.iter().zip(&trials.rhs) {
            assert_eq!(l.std_err, 0.0);
            assert!((l.mean - r).abs() < 1e-12 * (1.0 + r));
        }
    }

    #[test]
    fn identical_endpoints_without_noise_give_zero() {
        let s = linear_schedule(4, 1e-3, 0.2, SigmaKind::Zero).unwrap();
        let m = null_model(s, 1.0);
        let mut t = iterated_trials(&m, &cfg(10, 2), &mut stream(2)).unwrap();
        t.y.assign(&t.x);
        let again = m.reconstruct_batch(t.x.clone(), &mut stream(0));
        let same = m.reconstruct_batch(t.y.clone(), &mut stream(1));
        assert_eq!(again, same);
    }
}
