//! The learned backward process.
//!
//! The network predicts noise; the backward mean is derived from it as
//! `g_θ^t(x) = (x − (1 − α_t)/√(1 − ᾱ_t) · ε_net(x, t)) / √α_t`. Steps
//! `t ≥ 2` add Gaussian noise with standard deviation `σ_t`; step 1 is the
//! deterministic decoder `clamp_X(g_θ^1(x))`, which maps into the domain box.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::DomainBox;
use crate::error::{Error, Result};
use crate::net::DenoiserNet;
use crate::schedule::NoiseSchedule;
use crate::stats::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub schedule: NoiseSchedule,
    pub net: DenoiserNet,
    pub domain: DomainBox,
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

impl DiffusionModel {
    pub fn new(schedule: NoiseSchedule, net: DenoiserNet, domain: DomainBox) -> Result<Self> {
        if net.data_dim() != domain.dim() {
            return Err(Error::Dimension {
                expected: domain.dim(),
                got: net.data_dim(),
            });
        }
        Ok(DiffusionModel {
            schedule,
            net,
            domain,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.data_dim()
    }

    pub fn num_steps(&self) -> usize {
        self.schedule.num_steps()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("point has non-finite coordinates"));
        }
        Ok(())
    }

    fn row(&self, x: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape")
    }

    /// Backward mean `g_θ^t` applied to every row of `xs`. `t` must be valid.
    pub fn g_mean_batch(&self, xs: &ArrayView2<f64>, t: usize) -> Array2<f64> {
        let ts = vec![t; xs.nrows()];
        let eps = self.net.forward(xs, &ts);
        let a = self.schedule.alpha(t);
        let c_eps = (1.0 - a) / (1.0 - self.schedule.alpha_bar(t)).sqrt();
        let inv = 1.0 / a.sqrt();
        let mut out = xs.to_owned();
        Zip::from(&mut out)
            .and(&eps)
            .for_each(|x, e| *x = (*x - c_eps * e) * inv);
        out
    }

    pub fn g_mean(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.schedule.check_step(t, 1)?;
        self.check_point(x)?;
        Ok(self.g_mean_batch(&self.row(x).view(), t).into_raw_vec_and_offset().0)
    }

    pub fn decode_batch(&self, xs: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.g_mean_batch(xs, 1);
        for mut row in out.rows_mut() {
            self.domain
                .clamp_in_place(row.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// The deterministic final step: `g_θ^1(x_1)` clamped into the domain box.
    pub fn decode(&self, x1: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x1)?;
        Ok(self.decode_batch(&self.row(x1).view()).into_raw_vec_and_offset().0)
    }

    /// `x_{t−1} = g_θ^t(x_t) + σ_t ε` for every row, `2 ≤ t ≤ T`.
    pub fn backward_step_batch<R: Rng + ?Sized>(
        &self,
        xs: &ArrayView2<f64>,
        t: usize,
        rng: &mut R,
    ) -> Array2<f64> {
        let mut out = self.g_mean_batch(xs, t);
        let sigma = self.schedule.sigma(t);
        let noise = standard_normal_matrix(xs.nrows(), xs.ncols(), rng);
        out.scaled_add(sigma, &noise);
        out
    }

    pub fn backward_step<R: Rng + ?Sized>(&self, x: &[f64], t: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.schedule.check_step(t, 2)?;
        self.check_point(x)?;
        Ok(self
            .backward_step_batch(&self.row(x).view(), t, rng)
            .into_raw_vec_and_offset()
            .0)
    }

    /// Runs every row of `xs` (taken as `x_T`) through steps `T..2` and the decoder.
    pub fn reconstruct_batch<R: Rng + ?Sized>(&self, xs: Array2<f64>, rng: &mut R) -> Array2<f64> {
        let mut x = xs;
        for t in (2..=self.num_steps()).rev() {
            x = self.backward_step_batch(&x.view(), t, rng);
        }
        self.decode_batch(&x.view())
    }

    pub fn reconstruct<R: Rng + ?Sized>(&self, x_final: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_point(x_final)?;
        Ok(self
            .reconstruct_batch(self.row(x_final), rng)
            .into_raw_vec_and_offset()
            .0)
    }

    /// `n` samples from the learned distribution: `x_T ~ N(0, I)` then reconstruct.
    pub fn generate_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let start = standard_normal_matrix(n, self.dim(), rng);
        self.reconstruct_batch(start, rng)
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.generate_batch(1, rng).into_raw_vec_and_offset().0
    }

    /// Probe estimate of the Lipschitz constant of `g_θ^t` (of the decoder
    /// when `t = 1`). This is a lower estimate of the true constant.
    pub fn estimate_lipschitz<R: Rng + ?Sized>(
        &self,
        t: usize,
        n_pairs: usize,
        pair_scale: f64,
        rng: &mut R,
    ) -> Result<f64> {
        self.schedule.check_step(t, 1)?;
        if t == 1 {
            probe_lipschitz(&self.domain, |xs| self.decode_batch(xs), n_pairs, pair_scale, rng)
        } else {
            probe_lipschitz(&self.domain, |xs| self.g_mean_batch(xs, t), n_pairs, pair_scale, rng)
        }
    }

    /// Maximum of [`DiffusionModel::estimate_lipschitz`] over several pair scales.
    pub fn estimate_lipschitz_multiscale<R: Rng + ?Sized>(
        &self,
        t: usize,
        n_pairs: usize,
        scales: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        if scales.is_empty() {
            return Err(Error::invalid("at least one pair scale is required"));
        }
        let mut best: f64 = 0.0;
        for &scale in scales {
            best = best.max(self.estimate_lipschitz(t, n_pairs, scale, rng)?);
        }
        Ok(best)
    }
}

/// Largest ratio `‖f(x) − f(x + δ)‖ / ‖δ‖` over `n_pairs` probes, with `x`
/// uniform in `domain` and `δ` uniform on the sphere of radius `pair_scale`.
pub fn probe_lipschitz<F, R>(
    domain: &DomainBox,
    f: F,
    n_pairs: usize,
    pair_scale: f64,
    rng: &mut R,
) -> Result<f64>
where
    F: Fn(&ArrayView2<f64>) -> Array2<f64>,
    R: Rng + ?Sized,
{
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be at least 1"));
    }
    if !(pair_scale > 0.0 && pair_scale.is_finite()) {
        return Err(Error::invalid("pair_scale must be positive"));
    }
    let d = domain.dim();
    let mut base = Array2::zeros((n_pairs, d));
    let mut shifted = Array2::zeros((n_pairs, d));
    for i in 0..n_pairs {
        let x = domain.sample_uniform(rng);
        let dir = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|c| c * pair_scale / n).collect::<Vec<_>>();
            }
        };
        for k in 0..d {
            base[[i, k]] = x[k];
            shifted[[i, k]] = x[k] + dir[k];
        }
    }
    let fa = f(&base.view());
    let fb = f(&shifted.view());
    let mut best: f64 = 0.0;
    for i in 0..n_pairs {
        let num = norm(&(&fa.row(i) - &fb.row(i)).to_vec());
        let den = norm(&(&base.row(i) - &shifted.row(i)).to_vec());
        best = best.max(num / den);
    }
    Ok(best)
}
