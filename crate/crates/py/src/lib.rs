//! Python bindings for the `ddpm-bound` crate.
//!
//! Points cross the boundary as lists of float lists. Reports come back as
//! plain dicts built from the same JSON the CLI writes.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ddpm_bound::bound::{self, BoundConfig, BoundMode, KSource};
use ddpm_bound::checkpoint;
use ddpm_bound::config::ExperimentConfig;
use ddpm_bound::data::{uniform_square, SampleSet, SourceInfo};
use ddpm_bound::denoiser::DiffusionModel;
use ddpm_bound::experiment;
use ddpm_bound::rng::SeedRoot;
use ddpm_bound::schedule::{self as sched, NoiseSchedule, SigmaKind};
use ddpm_bound::{forward, transport};

fn err(e: ddpm_bound::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_dict<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn sample_set(points: Vec<Vec<f64>>) -> PyResult<SampleSet> {
    SampleSet::from_points(&points, SourceInfo::default()).map_err(err)
}

fn parse_sigma(kind: &str) -> PyResult<SigmaKind> {
    match kind {
        "posterior" => Ok(SigmaKind::Posterior),
        "beta" => Ok(SigmaKind::Beta),
        "zero" => Ok(SigmaKind::Zero),
        _ => Err(PyValueError::new_err(format!("unknown sigma kind `{kind}`"))),
    }
}

/// Noise schedule `α_1..α_T` with derived constants.
#[pyclass(name = "NoiseSchedule", frozen)]
struct PySchedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    #[pyo3(signature = (steps, beta_start=1e-4, beta_end=0.2, sigma="posterior"))]
    fn linear(steps: usize, beta_start: f64, beta_end: f64, sigma: &str) -> PyResult<Self> {
        let inner =
            sched::linear_schedule(steps, beta_start, beta_end, parse_sigma(sigma)?).map_err(err)?;
        Ok(PySchedule { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (alphas, sigma="posterior"))]
    fn from_alphas(alphas: Vec<f64>, sigma: &str) -> PyResult<Self> {
        let inner = NoiseSchedule::from_alphas(alphas, parse_sigma(sigma)?).map_err(err)?;
        Ok(PySchedule { inner })
    }

    #[getter]
    fn num_steps(&self) -> usize {
        self.inner.num_steps()
    }

    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.inner.alphas().to_vec()
    }

    #[getter]
    fn alpha_bars(&self) -> Vec<f64> {
        self.inner.alpha_bars().to_vec()
    }

    fn sigma(&self, t: usize) -> PyResult<f64> {
        self.inner.check_t(t)?;
        Ok(self.inner.sigma(t))
    }

    /// `K′_t`, defined for `t ≥ 2`.
    fn schedule_lipschitz(&self, t: usize) -> PyResult<f64> {
        self.inner.schedule_lipschitz(t).map_err(err)
    }

    fn posterior_variance(&self, t: usize) -> PyResult<f64> {
        self.inner.posterior_variance(t).map_err(err)
    }

    fn prior_kl(&self, x0: Vec<f64>) -> PyResult<f64> {
        forward::prior_kl(&self.inner, &x0).map_err(err)
    }

    fn posterior_mean(&self, x_t: Vec<f64>, x0: Vec<f64>, t: usize) -> PyResult<Vec<f64>> {
        forward::posterior_mean(&self.inner, &x_t, &x0, t).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "NoiseSchedule(T={}, alpha_bar_T={:.6})",
            self.inner.num_steps(),
            self.inner.alpha_bar_final()
        )
    }
}

trait CheckT {
    fn check_t(&self, t: usize) -> PyResult<()>;
}

impl CheckT for NoiseSchedule {
    fn check_t(&self, t: usize) -> PyResult<()> {
        if t == 0 || t > self.num_steps() {
            return Err(PyValueError::new_err(format!(
                "t = {t} outside 1..={}",
                self.num_steps()
            )));
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) diffusion model.
#[pyclass(name = "DiffusionModel", frozen)]
struct PyModel {
    inner: DiffusionModel,
}

fn parse_k_source(s: &str) -> PyResult<KSource> {
    KSource::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown k_source `{s}`")))
}

fn parse_mode(s: &str) -> PyResult<BoundMode> {
    BoundMode::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown mode `{s}`")))
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn schedule(&self) -> PySchedule {
        PySchedule {
            inner: self.inner.schedule.clone(),
        }
    }

    fn g_mean(&self, x: Vec<f64>, t: usize) -> PyResult<Vec<f64>> {
        self.inner.schedule.check_t(t)?;
        self.inner.g_mean(&x, t).map_err(err)
    }

    fn decode(&self, x1: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.decode(&x1).map_err(err)
    }

    #[pyo3(signature = (n, seed=0))]
    fn generate(&self, py: Python<'_>, n: usize, seed: u64) -> Vec<Vec<f64>> {
        py.detach(|| {
            let mut rng = SeedRoot(seed).stream("generate", 0);
            self.inner
                .generate_batch(n, &mut rng)
                .outer_iter()
                .map(|r| r.to_vec())
                .collect()
        })
    }

    #[pyo3(signature = (x0, n_noise=16, n_chains=1, seed=0))]
    fn recon_loss(&self, x0: Vec<f64>, n_noise: usize, n_chains: usize, seed: u64) -> PyResult<(f64, f64)> {
        let mut rng = SeedRoot(seed).stream("recon", 0);
        let e = bound::recon_loss(&self.inner, &x0, n_noise, n_chains, &mut rng).map_err(err)?;
        Ok((e.mean, e.std_err))
    }

    #[pyo3(signature = (t, n_pairs=4096, scales=vec![0.5, 0.05, 0.005], seed=0))]
    fn estimate_lipschitz(&self, t: usize, n_pairs: usize, scales: Vec<f64>, seed: u64) -> PyResult<f64> {
        self.inner.schedule.check_t(t)?;
        let mut rng = SeedRoot(seed).stream("lipschitz", t as u64);
        self.inner
            .estimate_lipschitz_multiscale(t, n_pairs, &scales, &mut rng)
            .map_err(err)
    }

    /// Bound reports (as dicts) for each λ on the sample `points`.
    #[pyo3(signature = (points, lambdas, delta=0.05, k_source="schedule", mode="monte-carlo", mc_draws=1_000_000, recon_noise=16, seed=3))]
    #[allow(clippy::too_many_arguments)]
    fn lambda_sweep(
        &self,
        py: Python<'_>,
        points: Vec<Vec<f64>>,
        lambdas: Vec<f64>,
        delta: f64,
        k_source: &str,
        mode: &str,
        mc_draws: usize,
        recon_noise: usize,
        seed: u64,
    ) -> PyResult<Vec<Py<PyAny>>> {
        let sample = sample_set(points)?;
        let cfg = BoundConfig {
            k_source: parse_k_source(k_source)?,
            mode: parse_mode(mode)?,
            mc_draws,
            recon_noise,
            seed,
            ..BoundConfig::default()
        };
        let reports = py
            .detach(|| bound::lambda_sweep(&self.inner, &sample, &lambdas, delta, &cfg))
            .map_err(err)?;
        reports.iter().map(|r| to_dict(py, r)).collect()
    }

    /// One-step contraction check at step `t`, as a dict verdict.
    #[pyo3(signature = (t, n_trials=10_000, draws=32, seed=0))]
    fn check_contraction(&self, py: Python<'_>, t: usize, n_trials: usize, draws: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let cfg = bound::ContractionConfig {
            n_trials,
            draws,
            ..Default::default()
        };
        let mut rng = SeedRoot(seed).stream("contraction", t as u64);
        let v = py
            .detach(|| bound::check_contraction(&self.inner, t, &cfg, &mut rng))
            .map_err(err)?;
        to_dict(py, &v)
    }

    fn __repr__(&self) -> String {
        format!(
            "DiffusionModel(D={}, T={}, params={})",
            self.inner.dim(),
            self.inner.num_steps(),
            self.inner.net.num_params()
        )
    }
}

/// Parses config text (`key = value` lines) with optional overrides and
/// returns its canonical form.
#[pyfunction]
#[pyo3(signature = (text="", overrides=vec![]))]
fn canonical_config(text: &str, overrides: Vec<String>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::parse(text, "<python>").map_err(err)?;
    cfg.apply_overrides(&overrides).map_err(err)?;
    Ok(cfg.to_text())
}

/// Trains per the config and writes artifacts under `out`. Returns the model.
#[pyfunction]
#[pyo3(signature = (out, text="", overrides=vec![]))]
fn train(py: Python<'_>, out: PathBuf, text: &str, overrides: Vec<String>) -> PyResult<PyModel> {
    let mut cfg = ExperimentConfig::parse(text, "<python>").map_err(err)?;
    cfg.apply_overrides(&overrides).map_err(err)?;
    let outcome = py.detach(|| experiment::cmd_train(&cfg, &out)).map_err(err)?;
    Ok(PyModel {
        inner: outcome.model,
    })
}

#[pyfunction]
#[pyo3(signature = (n, side=2.0, seed=1))]
fn uniform_square_sample(n: usize, side: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let mut rng = SeedRoot(seed).stream("train-data", 0);
    Ok(uniform_square(n, side, &mut rng).map_err(err)?.to_vecs())
}

/// `(exact, bound)` for `E‖ε − ε′‖` in `R^D`.
#[pyfunction]
fn gaussian_pair_distance(dim: usize) -> PyResult<(f64, f64)> {
    bound::gaussian_pair_distance(dim).map_err(err)
}

#[pyfunction]
fn exact_w1(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(transport::exact_w1(&sample_set(a)?, &sample_set(b)?).map_err(err)?.value)
}

#[pyfunction]
#[pyo3(signature = (a, b, n_projections=256, seed=0))]
fn sliced_w1_lower(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, n_projections: usize, seed: u64) -> PyResult<f64> {
    let mut rng = SeedRoot(seed).stream("projections", 0);
    Ok(transport::sliced_w1_lower(&sample_set(a)?, &sample_set(b)?, n_projections, &mut rng)
        .map_err(err)?
        .value)
}

#[pyfunction]
fn trivial_coupling_upper(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(transport::trivial_coupling_upper(&sample_set(a)?, &sample_set(b)?)
        .map_err(err)?
        .value)
}

#[pymodule(name = "ddpm_bound")]
fn ddpm_bound_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(canonical_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_square_sample, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_pair_distance, m)?)?;
    m.add_function(wrap_pyfunction!(exact_w1, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_w1_lower, m)?)?;
    m.add_function(wrap_pyfunction!(trivial_coupling_upper, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
