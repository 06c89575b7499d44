//! The fixed Gaussian forward (noising) process.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("point has non-finite coordinates"))
    }
}

/// Draws `x_t ~ q(x_t | x_0) = N(√ᾱ_t x_0, (1 − ᾱ_t) I)`.
pub fn sample_forward_marginal<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    schedule.check_step(t, 1)?;
    check_finite(x0)?;
    Ok(marginal_with_alpha_bar(schedule.alpha_bar(t), x0, rng))
}

pub(crate) fn marginal_with_alpha_bar<R: Rng + ?Sized>(
    alpha_bar: f64,
    x0: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            a * v + b * e
        })
        .collect()
}

/// One forward transition `x_t ~ q(x_t | x_{t−1}) = N(√α_t x_{t−1}, (1 − α_t) I)`.
pub fn sample_forward_step<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x_prev: &[f64],
    t: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    schedule.check_step(t, 1)?;
    let (a, b) = (schedule.alpha(t).sqrt(), (1.0 - schedule.alpha(t)).sqrt());
    Ok(x_prev
        .iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            a * v + b * e
        })
        .collect())
}

/// Runs the forward chain `x_1, …, x_t` step by step and returns `x_t`.
pub fn sample_forward_path<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    schedule.check_step(t, 1)?;
    let mut x = x0.to_vec();
    for s in 1..=t {
        x = sample_forward_step(schedule, &x, s, rng)?;
    }
    Ok(x)
}

/// Coefficients `(c_x, c_0)` of the posterior mean
/// `μ_q^t(x_t, x_0) = c_x x_t + c_0 x_0`.
pub fn posterior_mean_coefficients(schedule: &NoiseSchedule, t: usize) -> Result<(f64, f64)> {
    schedule.check_step(t, 2)?;
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let c_x = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let c_0 = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab);
    Ok((c_x, c_0))
}

/// Mean of the ground-truth posterior `q(x_{t−1} | x_t, x_0)`, for `2 ≤ t ≤ T`.
pub fn posterior_mean(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    x0: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    if x_t.len() != x0.len() {
        return Err(Error::Dimension {
            expected: x0.len(),
            got: x_t.len(),
        });
    }
    let (c_x, c_0) = posterior_mean_coefficients(schedule, t)?;
    Ok(x_t.iter().zip(x0).map(|(a, b)| c_x * a + c_0 * b).collect())
}

/// `KL(q(x_T | x_0) ‖ N(0, I))` in closed form:
/// `½[−D log(1 − ᾱ_T) − D ᾱ_T + ᾱ_T ‖x_0‖²]`.
pub fn prior_kl(schedule: &NoiseSchedule, x0: &[f64]) -> Result<f64> {
    check_finite(x0)?;
    prior_kl_with_alpha_bar(schedule.alpha_bar_final(), x0)
}

pub(crate) fn prior_kl_with_alpha_bar(alpha_bar: f64, x0: &[f64]) -> Result<f64> {
    if !(alpha_bar >= 0.0 && alpha_bar < 1.0) {
        return Err(Error::Schedule(format!("alpha_bar_T = {alpha_bar} must lie in [0, 1)")));
    }
    let d = x0.len() as f64;
    let sq: f64 = x0.iter().map(|v| v * v).sum();
    // ln_1p keeps precision when alpha_bar is tiny
    let kl = 0.5 * (-d * (-alpha_bar).ln_1p() - d * alpha_bar + alpha_bar * sq);
    Ok(kl.max(0.0))
}
