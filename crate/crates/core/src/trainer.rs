//! Fits the ε-prediction network with minibatch Adam on the standard
//! denoising objective: `mean ‖ε_net(√ᾱ_t x_0 + √(1 − ᾱ_t) ε, t) − ε‖²` with
//! `t` uniform on `{1..T}` and `x_0`, `ε` resampled per element.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::denoiser::DiffusionModel;
use crate::error::{Error, Result};
use crate::net::{DenoiserNet, Gradients};
use crate::rng::SeedRoot;
use crate::schedule::NoiseSchedule;

/// Rows per gradient task. Fixed so the summation order, and therefore the
/// trained weights, do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_train: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_train: 50_000,
            batch_size: 256,
            steps: 20_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::invalid("n_train, batch_size and steps must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam moment decays must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("Adam eps must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn update<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Noised inputs `x_t = √ᾱ_t x_0 + √(1 − ᾱ_t) ε`, row by row.
pub fn noised_inputs(
    schedule: &NoiseSchedule,
    x0: &ArrayView2<f64>,
    ts: &[usize],
    noise: &ArrayView2<f64>,
) -> Array2<f64> {
    let mut xt = x0.to_owned();
    for (i, mut row) in xt.rows_mut().into_iter().enumerate() {
        let ab = schedule.alpha_bar(ts[i]);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (k, v) in row.iter_mut().enumerate() {
            *v = a * *v + b * noise[[i, k]];
        }
    }
    xt
}

/// Mean squared noise-prediction error over a fixed minibatch and its
/// parameter gradient. The batch is split into fixed-size chunks whose
/// gradients are summed in chunk order.
pub fn denoising_loss_and_grad(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    x0: &ArrayView2<f64>,
    ts: &[usize],
    noise: &ArrayView2<f64>,
) -> (f64, Gradients) {
    let rows = x0.nrows();
    let normalizer = (rows * x0.ncols()) as f64;
    let xt = noised_inputs(schedule, x0, ts, noise);
    let chunks: Vec<(usize, usize)> = (0..rows)
        .step_by(GRAD_CHUNK)
        .map(|s| (s, (s + GRAD_CHUNK).min(rows)))
        .collect();
    let parts: Vec<(f64, Gradients)> = chunks
        .par_iter()
        .map(|&(a, b)| {
            net.loss_and_grad(
                &xt.slice(ndarray::s![a..b, ..]),
                &ts[a..b],
                &noise.slice(ndarray::s![a..b, ..]),
                normalizer,
            )
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    (loss, grads)
}

/// Trains `model` on `data`. Returns the updated model and the per-step loss.
/// The schedule is never modified.
pub fn train(
    mut model: DiffusionModel,
    data: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(DiffusionModel, Vec<f64>)> {
    cfg.validate()?;
    if data.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: data.dim(),
        });
    }
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(i) = (0..data.len()).find(|&i| !model.domain.contains(data.point(i))) {
        return Err(Error::invalid(format!("training point {i} lies outside the domain box")));
    }

    let root = SeedRoot(cfg.seed);
    let d = model.dim();
    let big_t = model.num_steps();
    let mut adam = Adam::new(model.net.num_params(), cfg);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut x0 = Array2::zeros((cfg.batch_size, d));
    let mut noise = Array2::zeros((cfg.batch_size, d));
    let mut ts = vec![0usize; cfg.batch_size];

    for step in 0..cfg.steps {
        let mut rng = root.stream("minibatch", step as u64);
        for i in 0..cfg.batch_size {
            let idx = rng.random_range(0..data.len());
            ts[i] = rng.random_range(1..=big_t);
            for (k, v) in data.point(idx).iter().enumerate() {
                x0[[i, k]] = *v;
                noise[[i, k]] = rng.sample(StandardNormal);
            }
        }
        let (loss, grads) =
            denoising_loss_and_grad(&model.net, &model.schedule, &x0.view(), &ts, &noise.view());
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        trace.push(loss);
        adam.update(model.net.params_mut(), &grads.flatten());
    }
    Ok((model, trace))
}

/// Loss trace as CSV with header `step,loss`.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
