//! End-to-end commands behind the CLI verbs. Each writes its artifacts under
//! an output directory and returns the in-memory result.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bound::{
    check_contraction, check_iterated_contraction, lambda_sweep, reports_to_csv, BoundReport,
    Verdict,
};
use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{uniform_circle, uniform_square, SampleSet};
use crate::denoiser::DiffusionModel;
use crate::error::{Error, Result};
use crate::net::{DenoiserNet, TimeEmbedding};
use crate::rng::SeedRoot;
use crate::trainer::{loss_trace_csv, train};
use crate::transport::{exact_w1, sliced_w1_lower, trivial_coupling_upper, W1Estimate};

pub const DATA_STEM: &str = "data";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BOUND_JSON: &str = "bound.json";
pub const BOUND_CSV: &str = "bound.csv";
pub const VALIDATE_JSON: &str = "validate.json";
pub const SAMPLES_FILE: &str = "samples.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    checkpoint::sha256_hex(cfg.to_text().as_bytes())
}

/// `n` points from the configured data distribution.
pub fn draw_data(cfg: &ExperimentConfig, n: usize, seeds: SeedRoot, tag: &str) -> Result<SampleSet> {
    let mut rng = seeds.stream(tag, 0);
    let mut set = match cfg.data.generator.as_str() {
        "uniform-circle" => uniform_circle(n, cfg.data.radius, &mut rng)?,
        _ => uniform_square(n, cfg.data.side, &mut rng)?,
    };
    set.seed = Some(seeds.0);
    Ok(set)
}

pub fn training_data(cfg: &ExperimentConfig) -> Result<SampleSet> {
    draw_data(cfg, cfg.train.n_train, SeedRoot(cfg.seeds.data), "train-data")
}

/// The untrained model the config describes.
pub fn initial_model(cfg: &ExperimentConfig) -> Result<DiffusionModel> {
    let schedule = cfg.build_schedule()?;
    let mut rng = SeedRoot(cfg.seeds.train).stream("init", 0);
    let net = DenoiserNet::new(
        2,
        &cfg.hidden_widths(),
        TimeEmbedding::new(cfg.net.time_dim)?,
        cfg.net.activation,
        &mut rng,
    )?;
    DiffusionModel::new(schedule, net, cfg.domain()?)
}

/// Loads a checkpoint and checks it against the configured schedule and box.
pub fn load_checked(cfg: &ExperimentConfig, path: &Path) -> Result<DiffusionModel> {
    let model = checkpoint::load(path)?;
    let expected = cfg.build_schedule()?;
    if model.schedule != expected {
        return Err(Error::ScheduleMismatch(format!(
            "{} was trained with a different schedule (T = {}) than the config (T = {})",
            path.display(),
            model.num_steps(),
            expected.num_steps()
        )));
    }
    if model.domain != cfg.domain()? {
        return Err(Error::ScheduleMismatch(format!(
            "{} has a different domain box than the config",
            path.display()
        )));
    }
    Ok(model)
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<SampleSet> {
    ensure_dir(out)?;
    let data = training_data(cfg)?;
    data.save(out, DATA_STEM)?;
    Ok(data)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_hash: String,
    pub config: String,
    pub checkpoint_sha256: String,
    pub final_loss: f64,
    pub steps: usize,
    pub num_params: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiffusionModel,
    pub losses: Vec<f64>,
    pub manifest: Manifest,
}

/// Trains from the configured seeds and writes the checkpoint, the loss
/// trace, the schedule table and a manifest.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.check()?;
    ensure_dir(out)?;
    let data = training_data(cfg)?;
    let (model, losses) = train(initial_model(cfg)?, &data, &cfg.train)?;
    let bytes = checkpoint::encode(&model);
    write(&out.join(CHECKPOINT_FILE), &bytes)?;
    write(&out.join(LOSS_FILE), loss_trace_csv(&losses))?;
    write(&out.join(SCHEDULE_FILE), model.schedule.to_csv())?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        config: cfg.to_text(),
        checkpoint_sha256: checkpoint::sha256_hex(&bytes),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        steps: losses.len(),
        num_params: model.net.num_params(),
    };
    write(&out.join(MANIFEST_FILE), to_json(&manifest)?)?;
    Ok(TrainOutcome {
        model,
        losses,
        manifest,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundOutput {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub sample_seed: u64,
    pub reports: Vec<BoundReport>,
}

/// Bound sweep for an already-loaded model: draws the `n` bound samples
/// from `seed` and runs the configured λ grid.
pub fn bound_sweep(cfg: &ExperimentConfig, model: &DiffusionModel, seed: u64) -> Result<Vec<BoundReport>> {
    let sample = draw_data(cfg, cfg.bound.n, SeedRoot(seed), "bound-sample")?;
    let mut bcfg = cfg.bound_config();
    bcfg.seed = seed;
    lambda_sweep(model, &sample, &cfg.lambdas(), cfg.bound.delta, &bcfg)
}

pub fn cmd_bound(cfg: &ExperimentConfig, checkpoint_path: &Path, out: &Path) -> Result<BoundOutput> {
    cfg.check()?;
    ensure_dir(out)?;
    let bytes = std::fs::read(checkpoint_path).map_err(|e| Error::io(checkpoint_path, e))?;
    let model = load_checked(cfg, checkpoint_path)?;
    let reports = bound_sweep(cfg, &model, cfg.seeds.bound)?;
    let output = BoundOutput {
        config_hash: config_hash(cfg),
        checkpoint_sha256: checkpoint::sha256_hex(&bytes),
        sample_seed: cfg.seeds.bound,
        reports,
    };
    write(&out.join(BOUND_JSON), to_json(&output)?)?;
    write(&out.join(BOUND_CSV), reports_to_csv(&output.reports))?;
    Ok(output)
}

/// One repetition of the validity check.
#[derive(Debug, Clone, Serialize)]
pub struct ValidityRun {
    pub seed: u64,
    /// Smallest total over the λ grid, and the λ attaining it.
    pub total: f64,
    pub total_std_err: f64,
    pub lambda: f64,
    pub sliced_lower: W1Estimate,
    pub exact: W1Estimate,
    pub trivial_upper: W1Estimate,
    /// `total + 3·SE − max(lower estimates)`.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub pass: bool,
    pub runs: Vec<ValidityRun>,
    pub contraction: Vec<Verdict>,
    pub iterated: Option<Verdict>,
}

/// Checks `total ≥` the sliced and exact W1 estimates between fresh data
/// and model samples, once per repeat.
pub fn validity_runs(cfg: &ExperimentConfig, model: &DiffusionModel) -> Result<Vec<ValidityRun>> {
    let root = SeedRoot(cfg.seeds.validate);
    (0..cfg.validate.repeats)
        .map(|r| {
            let run_seeds = root.child("repeat", r as u64);
            let bound_seed = run_seeds.child("bound", 0).0;
            let reports = bound_sweep(cfg, model, bound_seed)?;
            let best = reports
                .iter()
                .min_by(|a, b| a.total.total_cmp(&b.total))
                .expect("nonempty grid");
            let fresh = draw_data(cfg, cfg.validate.n, run_seeds, "fresh")?;
            let generated = {
                let mut rng = run_seeds.stream("generate", 0);
                let g = model.generate_batch(cfg.validate.n, &mut rng);
                SampleSet::from_flat(model.dim(), g.into_raw_vec_and_offset().0, Default::default())?
            };
            let mut prng = run_seeds.stream("projections", 0);
            let sliced = sliced_w1_lower(&fresh, &generated, cfg.validate.projections, &mut prng)?
                .with_seed(run_seeds.0);
            let exact = exact_w1(&fresh, &generated)?;
            let trivial = trivial_coupling_upper(&fresh, &generated)?;
            let slack = best.total + 3.0 * best.total_std_err();
            let margin = slack - sliced.value.max(exact.value);
            Ok(ValidityRun {
                seed: run_seeds.0,
                total: best.total,
                total_std_err: best.total_std_err(),
                lambda: best.lambda,
                sliced_lower: sliced,
                exact,
                trivial_upper: trivial,
                margin,
                pass: margin >= 0.0,
            })
        })
        .collect()
}

/// Runs the one-step check at every `t` and the full-chain check.
pub fn lemma_checks(cfg: &ExperimentConfig, model: &DiffusionModel) -> Result<(Vec<Verdict>, Verdict)> {
    let root = SeedRoot(cfg.seeds.validate).child("lemmas", 0);
    let one = cfg.contraction_config(false);
    let contraction = (1..=model.num_steps())
        .map(|t| check_contraction(model, t, &one, &mut root.stream("contraction", t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let iterated = check_iterated_contraction(
        model,
        &cfg.contraction_config(true),
        &mut root.stream("iterated", 0),
    )?;
    Ok((contraction, iterated))
}

pub fn cmd_validate(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    out: &Path,
) -> Result<ValidationReport> {
    cfg.check()?;
    ensure_dir(out)?;
    let model = load_checked(cfg, checkpoint_path)?;
    let runs = validity_runs(cfg, &model)?;
    let (contraction, iterated) = if cfg.validate.lemmas && model.num_steps() >= 2 {
        let (c, i) = lemma_checks(cfg, &model)?;
        (c, Some(i))
    } else {
        (Vec::new(), None)
    };
    let pass = runs.iter().all(|r| r.pass)
        && contraction.iter().all(|v| v.pass)
        && iterated.as_ref().is_none_or(|v| v.pass);
    let report = ValidationReport {
        config_hash: config_hash(cfg),
        pass,
        runs,
        contraction,
        iterated,
    };
    write(&out.join(VALIDATE_JSON), to_json(&report)?)?;
    Ok(report)
}

/// Writes `n` generated points (default `sample.n`) to `samples.csv`.
pub fn cmd_sample(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    n: Option<usize>,
    out: &Path,
) -> Result<SampleSet> {
    cfg.check()?;
    ensure_dir(out)?;
    let model = load_checked(cfg, checkpoint_path)?;
    let n = n.unwrap_or(cfg.sample_n);
    let mut rng = SeedRoot(cfg.seeds.validate).stream("sample", 0);
    let g = model.generate_batch(n, &mut rng);
    let mut set = SampleSet::from_flat(model.dim(), g.into_raw_vec_and_offset().0, Default::default())?;
    set.seed = Some(cfg.seeds.validate);
    write(&out.join(SAMPLES_FILE), set.to_csv())?;
    Ok(set)
}

/// `<out>/model.ckpt`, the default checkpoint location.
pub fn default_checkpoint(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}
