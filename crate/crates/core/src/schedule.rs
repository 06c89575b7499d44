//! The fixed forward-process noise schedule and every scalar derived from it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the backward-kernel variances are derived from the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaKind {
    /// `σ_t² = (1 − ᾱ_{t−1})(1 − α_t)/(1 − ᾱ_t)`, the variance of the
    /// ground-truth posterior `q(x_{t−1} | x_t, x_0)`.
    #[default]
    Posterior,
    /// `σ_t² = 1 − α_t`.
    Beta,
    /// `σ_t = 0`: a deterministic backward chain. Used for fixtures.
    Zero,
}

impl SigmaKind {
    pub fn code(self) -> u32 {
        match self {
            SigmaKind::Posterior => 0,
            SigmaKind::Beta => 1,
            SigmaKind::Zero => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(SigmaKind::Posterior),
            1 => Some(SigmaKind::Beta),
            2 => Some(SigmaKind::Zero),
            _ => None,
        }
    }
}

/// Immutable schedule `α_1..α_T` with cumulative products and backward variances.
///
/// Steps are 1-based everywhere in the public API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigma2: Vec<f64>,
    sigma_kind: SigmaKind,
}

impl NoiseSchedule {
    /// Builds a schedule from `α_1..α_T`. The cumulative products are a
    /// running product.
    pub fn from_alphas(alphas: Vec<f64>, sigma_kind: SigmaKind) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Schedule("T must be at least 1".into()));
        }
        if let Some((i, a)) = alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0 && **a < 1.0))
        {
            return Err(Error::Schedule(format!(
                "alpha_{} = {a} is not in (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Schedule("alpha_bar_T underflowed to zero".into()));
        }
        let sigma2 = (1..=alphas.len())
            .map(|t| {
                let a = alphas[t - 1];
                let ab = alpha_bars[t - 1];
                let ab_prev = if t == 1 { 1.0 } else { alpha_bars[t - 2] };
                match sigma_kind {
                    SigmaKind::Posterior => (1.0 - ab_prev) * (1.0 - a) / (1.0 - ab),
                    SigmaKind::Beta => 1.0 - a,
                    SigmaKind::Zero => 0.0,
                }
            })
            .collect();
        Ok(NoiseSchedule {
            alphas,
            alpha_bars,
            sigma2,
            sigma_kind,
        })
    }

    /// Rebuilds a schedule from stored tables, checking they are consistent.
    pub fn from_table(
        alphas: Vec<f64>,
        alpha_bars: Vec<f64>,
        sigma2: Vec<f64>,
        sigma_kind: SigmaKind,
    ) -> Result<Self> {
        let rebuilt = NoiseSchedule::from_alphas(alphas, sigma_kind)?;
        if rebuilt.alpha_bars != alpha_bars || rebuilt.sigma2 != sigma2 {
            return Err(Error::Schedule(
                "stored alpha_bar/sigma2 table disagrees with stored alphas".into(),
            ));
        }
        Ok(rebuilt)
    }

    pub fn num_steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn sigma_kind(&self) -> SigmaKind {
        self.sigma_kind
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigma2_table(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// `ᾱ_{t−1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bars[t - 2]
        }
    }

    pub fn alpha_bar_final(&self) -> f64 {
        *self.alpha_bars.last().expect("schedule is never empty")
    }

    /// Backward-kernel variance `σ_t²`. `σ_1` is stored but never used for
    /// sampling: the final step is deterministic.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma2[t - 1].sqrt()
    }

    pub(crate) fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        let hi = self.num_steps();
        if t < lo || t > hi {
            return Err(Error::TimeStep { t, lo, hi });
        }
        Ok(())
    }

    /// Ground-truth posterior variance `(1 − ᾱ_{t−1})(1 − α_t)/(1 − ᾱ_t)` for `2 ≤ t ≤ T`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        self.check_step(t, 2)?;
        let a = self.alpha(t);
        Ok((1.0 - self.alpha_bar(t - 1)) * (1.0 - a) / (1.0 - self.alpha_bar(t)))
    }

    /// Lipschitz constant `K′_t = √α_t (1 − ᾱ_{t−1})/(1 − ᾱ_t)` of the
    /// ground-truth posterior mean as a function of `x_t`. Undefined at
    /// `t = 1`.
    pub fn schedule_lipschitz(&self, t: usize) -> Result<f64> {
        self.check_step(t, 2)?;
        Ok(self.alpha(t).sqrt() * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)))
    }

    /// CSV dump, header `t,alpha,alpha_bar,sigma2,k_prime`. `k_prime` is left
    /// empty at `t = 1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alpha,alpha_bar,sigma2,k_prime\n");
        for t in 1..=self.num_steps() {
            let k = self
                .schedule_lipschitz(t)
                .map(|k| k.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{t},{},{},{},{k}",
                self.alpha(t),
                self.alpha_bar(t),
                self.sigma2(t)
            );
        }
        out
    }
}

/// Linear-β schedule: `β_t` interpolated from `beta_start` to `beta_end`,
/// `α_t = 1 − β_t`.
pub fn linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    sigma_kind: SigmaKind,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Schedule("T must be at least 1".into()));
    }
    for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::Schedule(format!("{name} = {b} is not in (0, 1)")));
        }
    }
    if beta_start > beta_end {
        return Err(Error::Schedule(format!(
            "beta_start = {beta_start} exceeds beta_end = {beta_end}"
        )));
    }
    let alphas = (0..steps)
        .map(|i| {
            let beta = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            };
            1.0 - beta
        })
        .collect();
    NoiseSchedule::from_alphas(alphas, sigma_kind)
}

/// Constant-β schedule.
pub fn constant_schedule(steps: usize, beta: f64, sigma_kind: SigmaKind) -> Result<NoiseSchedule> {
    linear_schedule(steps, beta, beta, sigma_kind)
}

/// Cosine schedule (`s = 0.008`), with β clipped to `[1e-8, 0.999]`.
pub fn cosine_schedule(steps: usize, sigma_kind: SigmaKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Schedule("T must be at least 1".into()));
    }
    let s = 0.008;
    let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let alphas = (1..=steps)
        .map(|t| {
            let beta = 1.0 - f(t as f64) / f((t - 1) as f64);
            1.0 - beta.clamp(1e-8, 0.999)
        })
        .collect();
    NoiseSchedule::from_alphas(alphas, sigma_kind)
}
