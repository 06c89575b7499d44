//! The five-term Wasserstein bound, its λ sweep, and statistical checks of
//! the contraction inequalities behind it.

mod lemmas;
mod terms;

pub use lemmas::{
    check_contraction, check_iterated_contraction, contraction_trials, iterated_trials,
    ContractionConfig, TrialSet, Verdict,
};
pub use terms::{
    average_cross_distance, cross_distance_closed_form, cross_distance_term,
    gaussian_pair_distance, gaussian_pair_distance_mc, lipschitz_factors, recon_loss,
    recon_losses, BoundMode, DecoderLipschitz, KProvenance, KSource, KValues,
};

use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::denoiser::DiffusionModel;
use crate::error::{Error, Result};
use crate::forward::prior_kl;
use crate::rng::SeedRoot;
use crate::stats::{pairwise_sum, Estimate};

/// Estimator choices and Monte-Carlo budgets for a bound computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub k_source: KSource,
    pub mode: BoundMode,
    pub decoder_lipschitz: DecoderLipschitz,
    /// Forward-noise draws per sample point for the reconstruction term.
    pub recon_noise: usize,
    /// Backward chains per forward-noise draw.
    pub recon_chains: usize,
    /// Draws for each of the cross and noise expectations in Monte-Carlo mode.
    pub mc_draws: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            k_source: KSource::Schedule,
            mode: BoundMode::MonteCarlo,
            decoder_lipschitz: DecoderLipschitz::Probe,
            recon_noise: 16,
            recon_chains: 1,
            mc_draws: 1_000_000,
            lipschitz_pairs: 4096,
            lipschitz_scales: vec![0.5, 0.05, 0.005],
            seed: 3,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recon_noise == 0 || self.recon_chains == 0 {
            return Err(Error::invalid("recon_noise and recon_chains must be at least 1"));
        }
        if self.mc_draws == 0 {
            return Err(Error::invalid("mc_draws must be at least 1"));
        }
        if self.lipschitz_pairs == 0 || self.lipschitz_scales.is_empty() {
            return Err(Error::invalid("Lipschitz probing needs pairs and at least one scale"));
        }
        if self.lipschitz_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("Lipschitz scales must be positive"));
        }
        Ok(())
    }
}

/// Budgets, seeds and intermediate quantities behind a [`BoundReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMeta {
    pub seed: u64,
    pub recon_noise: usize,
    pub recon_chains: usize,
    pub mc_draws: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_scales: Vec<f64>,
    pub decoder_lipschitz: DecoderLipschitz,
    pub sigma_kind: String,
    pub alpha_bar_final: f64,
    /// `Σ_i KL(q(x_T | x_0^i) ‖ N(0, I))`.
    pub kl_sum: f64,
    pub log_inv_delta: f64,
    pub delta_squared: f64,
    /// Minimizer of the two λ-dependent terms.
    pub lambda_star: f64,
    /// `∏_t K_t`.
    pub k_product: f64,
    /// `Σ_{t≥2} (∏_{i<t} K_i) σ_t`.
    pub noise_factor: f64,
    /// Sample average of the cross distance, before the K product.
    pub cross_inner: Estimate,
    /// `E‖ε − ε′‖` as used by the noise term.
    pub pair_distance: Estimate,
    pub pair_distance_exact: f64,
    pub pair_distance_bound: f64,
    pub recon_std_err: f64,
    pub cross_std_err: f64,
    pub sigma_std_err: f64,
    /// Standard error of the total, combining the three sampled terms.
    pub total_std_err: f64,
}

/// Every term of the bound for one λ, plus all inputs needed to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub term_recon: f64,
    pub term_kl: f64,
    pub term_pac: f64,
    pub term_cross: f64,
    pub term_sigma: f64,
    pub total: f64,
    pub lambda: f64,
    pub delta: f64,
    pub n: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "Delta")]
    pub diameter: f64,
    pub k_source: KSource,
    pub mode: BoundMode,
    pub k_values: KValues,
    pub estimator_meta: EstimatorMeta,
}

pub const CSV_HEADER: &str = "lambda,delta,n,T,D,Delta,term_recon,term_kl,term_pac,term_cross,term_sigma,total,k_source,mode";

impl BoundReport {
    pub fn terms(&self) -> [f64; 5] {
        [
            self.term_recon,
            self.term_kl,
            self.term_pac,
            self.term_cross,
            self.term_sigma,
        ]
    }

    pub fn total_std_err(&self) -> f64 {
        self.estimator_meta.total_std_err
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.lambda,
            self.delta,
            self.n,
            self.steps,
            self.dim,
            self.diameter,
            self.term_recon,
            self.term_kl,
            self.term_pac,
            self.term_cross,
            self.term_sigma,
            self.total,
            self.k_source.as_str(),
            self.mode.as_str()
        )
    }
}

/// Header plus one row per report.
pub fn reports_to_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// `λ* = √(8n[ΣKL + ln(1/δ)]) / Δ`, the minimizer of `T2 + T3`.
pub fn optimal_lambda(kl_sum: f64, delta: f64, n: usize, diameter_squared: f64) -> f64 {
    (8.0 * n as f64 * (kl_sum + (1.0 / delta).ln()) / diameter_squared).sqrt()
}

/// The λ-independent part of the bound, computed once per sweep.
#[derive(Debug, Clone)]
struct FixedTerms {
    recon: Estimate,
    kl_sum: f64,
    cross_inner: Estimate,
    pair: Estimate,
    pair_exact: f64,
    pair_bound: f64,
    k_values: KValues,
    k_product: f64,
    noise_factor: f64,
    n: usize,
}

fn fixed_terms(model: &DiffusionModel, sample: &SampleSet, cfg: &BoundConfig) -> Result<FixedTerms> {
    cfg.validate()?;
    if sample.is_empty() {
        return Err(Error::invalid("the bound needs a nonempty sample"));
    }
    if sample.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: sample.dim(),
        });
    }
    let root = SeedRoot(cfg.seed);
    let recon_parts = recon_losses(
        model,
        sample,
        cfg.recon_noise,
        cfg.recon_chains,
        root.child("recon", 0),
    )?;
    let recon = Estimate::average(&recon_parts);

    let kls = sample
        .iter()
        .map(|x0| prior_kl(&model.schedule, x0))
        .collect::<Result<Vec<f64>>>()?;
    let kl_sum = pairwise_sum(&kls);

    let cross_inner =
        average_cross_distance(model, sample, cfg.mode, cfg.mc_draws, root.child("cross", 0))?;
    let (pair_exact, pair_bound) = gaussian_pair_distance(model.dim())?;
    let pair = match cfg.mode {
        BoundMode::ClosedForm => Estimate::exact(pair_bound),
        BoundMode::MonteCarlo => {
            gaussian_pair_distance_mc(model.dim(), cfg.mc_draws, root.child("pair", 0))?
        }
    };

    let k_values = lipschitz_factors(
        model,
        cfg.k_source,
        cfg.decoder_lipschitz,
        cfg.lipschitz_pairs,
        &cfg.lipschitz_scales,
        root.child("lipschitz", 0),
    )?;
    let k_product = k_values.full_product();
    let noise_factor = k_values.noise_factor(model);
    Ok(FixedTerms {
        recon,
        kl_sum,
        cross_inner,
        pair,
        pair_exact,
        pair_bound,
        k_values,
        k_product,
        noise_factor,
        n: sample.len(),
    })
}

fn assemble(
    model: &DiffusionModel,
    fixed: &FixedTerms,
    lambda: f64,
    delta: f64,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n = fixed.n as f64;
    let delta_sq = model.domain.diameter_squared();
    let log_inv_delta = (1.0 / delta).ln();

    let term_recon = fixed.recon.mean;
    let term_kl = (fixed.kl_sum + log_inv_delta) / lambda;
    let term_pac = lambda * delta_sq / (8.0 * n);
    let term_cross = fixed.k_product * fixed.cross_inner.mean;
    let term_sigma = fixed.noise_factor * fixed.pair.mean;
    let total = term_recon + term_kl + term_pac + term_cross + term_sigma;

    let cross_se = fixed.k_product * fixed.cross_inner.std_err;
    let sigma_se = fixed.noise_factor * fixed.pair.std_err;
    let total_se =
        (fixed.recon.std_err.powi(2) + cross_se.powi(2) + sigma_se.powi(2)).sqrt();

    Ok(BoundReport {
        term_recon,
        term_kl,
        term_pac,
        term_cross,
        term_sigma,
        total,
        lambda,
        delta,
        n: fixed.n,
        steps: model.num_steps(),
        dim: model.dim(),
        diameter: delta_sq.sqrt(),
        k_source: cfg.k_source,
        mode: cfg.mode,
        k_values: fixed.k_values.clone(),
        estimator_meta: EstimatorMeta {
            seed: cfg.seed,
            recon_noise: cfg.recon_noise,
            recon_chains: cfg.recon_chains,
            mc_draws: cfg.mc_draws,
            lipschitz_pairs: cfg.lipschitz_pairs,
            lipschitz_scales: cfg.lipschitz_scales.clone(),
            decoder_lipschitz: cfg.decoder_lipschitz,
            sigma_kind: format!("{:?}", model.schedule.sigma_kind()).to_lowercase(),
            alpha_bar_final: model.schedule.alpha_bar_final(),
            kl_sum: fixed.kl_sum,
            log_inv_delta,
            delta_squared: delta_sq,
            lambda_star: optimal_lambda(fixed.kl_sum, delta, fixed.n, delta_sq),
            k_product: fixed.k_product,
            noise_factor: fixed.noise_factor,
            cross_inner: fixed.cross_inner,
            pair_distance: fixed.pair,
            pair_distance_exact: fixed.pair_exact,
            pair_distance_bound: fixed.pair_bound,
            recon_std_err: fixed.recon.std_err,
            cross_std_err: cross_se,
            sigma_std_err: sigma_se,
            total_std_err: total_se,
        },
    })
}

/// The bound `W_1(μ, π_θ) ≤ T1 + T2 + T3 + T4 + T5` for one λ, evaluated on
/// `sample` (size `n`). Randomness comes from streams derived from `cfg.seed`.
pub fn theorem_bound(
    model: &DiffusionModel,
    sample: &SampleSet,
    lambda: f64,
    delta: f64,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    check_lambda_delta(&[lambda], delta)?;
    let fixed = fixed_terms(model, sample, cfg)?;
    assemble(model, &fixed, lambda, delta, cfg)
}

/// One report per λ. The λ-independent terms are estimated once and shared.
pub fn lambda_sweep(
    model: &DiffusionModel,
    sample: &SampleSet,
    lambdas: &[f64],
    delta: f64,
    cfg: &BoundConfig,
) -> Result<Vec<BoundReport>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("the lambda list is empty"));
    }
    check_lambda_delta(lambdas, delta)?;
    let fixed = fixed_terms(model, sample, cfg)?;
    lambdas
        .iter()
        .map(|&l| assemble(model, &fixed, l, delta, cfg))
        .collect()
}

fn check_lambda_delta(lambdas: &[f64], delta: f64) -> Result<()> {
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!("lambda must be positive, got {l}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}
