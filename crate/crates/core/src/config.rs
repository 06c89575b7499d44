//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored. An
//! optional `config_version = 1` line pins the schema. Unknown keys are
//! rejected with the offending line number. [`ExperimentConfig::to_text`]
//! writes every key in a fixed order, so its output doubles as the canonical
//! form that manifests hash.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::bound::{BoundConfig, BoundMode, DecoderLipschitz, KSource};
use crate::bound::ContractionConfig;
use crate::data::DomainBox;
use crate::error::{Error, Result};
use crate::net::Activation;
use crate::schedule::{cosine_schedule, linear_schedule, NoiseSchedule, SigmaKind};
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// A regularization strength, either absolute or a multiple of the bound's `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Absolute(f64),
    /// `n · mul / div`.
    Relative { mul: f64, div: f64 },
}

impl LambdaSpec {
    /// Accepts `2.5`, `n`, `10n`, `n/10`, `3n/2`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some(pos) = s.find('n') {
            let (head, tail) = (&s[..pos], &s[pos + 1..]);
            let mul = if head.is_empty() { 1.0 } else { head.trim().parse().ok()? };
            let div = match tail.trim() {
                "" => 1.0,
                t => t.strip_prefix('/')?.trim().parse().ok()?,
            };
            let ok = |v: f64| v > 0.0 && v.is_finite();
            (ok(mul) && ok(div)).then_some(LambdaSpec::Relative { mul, div })
        } else {
            let v: f64 = s.parse().ok()?;
            (v > 0.0 && v.is_finite()).then_some(LambdaSpec::Absolute(v))
        }
    }

    pub fn resolve(self, n: usize) -> f64 {
        match self {
            LambdaSpec::Absolute(v) => v,
            LambdaSpec::Relative { mul, div } => n as f64 * mul / div,
        }
    }
}

impl fmt::Display for LambdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LambdaSpec::Absolute(v) => write!(f, "{v}"),
            LambdaSpec::Relative { mul, div } => {
                if mul != 1.0 {
                    write!(f, "{mul}")?;
                }
                write!(f, "n")?;
                if div != 1.0 {
                    write!(f, "/{div}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    /// `uniform-square` or `uniform-circle`.
    pub generator: String,
    pub side: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    /// `linear` or `cosine`.
    pub kind: String,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma: SigmaKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSection {
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSection {
    pub n: usize,
    pub lambdas: Vec<LambdaSpec>,
    pub delta: f64,
    pub k_source: KSource,
    pub mode: BoundMode,
    pub k1: DecoderLipschitz,
    pub recon_noise: usize,
    pub recon_chains: usize,
    pub mc_draws: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateSection {
    /// Size of each of the two point sets compared by the transport estimators.
    pub n: usize,
    pub projections: usize,
    /// Independent repetitions with derived seeds.
    pub repeats: usize,
    pub trials: usize,
    pub draws: usize,
    pub chain_draws: usize,
    pub lemmas: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
    pub bound: u64,
    pub validate: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub net: NetSection,
    pub train: TrainConfig,
    pub bound: BoundSection,
    pub validate: ValidateSection,
    pub sample_n: usize,
    pub seeds: Seeds,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let tc = TrainConfig::default();
        let bc = BoundConfig::default();
        ExperimentConfig {
            data: DataSection {
                generator: "uniform-square".into(),
                side: 2.0,
                radius: 1.0,
            },
            schedule: ScheduleSection {
                kind: "linear".into(),
                steps: 50,
                beta_start: 1e-4,
                beta_end: 0.2,
                sigma: SigmaKind::Posterior,
            },
            net: NetSection {
                hidden: 128,
                layers: 2,
                time_dim: 16,
                activation: Activation::Silu,
            },
            bound: BoundSection {
                n: 5000,
                lambdas: ["n/10", "n/5", "n/2", "n", "2n", "10n"]
                    .iter()
                    .map(|s| LambdaSpec::parse(s).expect("valid default"))
                    .collect(),
                delta: 0.05,
                k_source: bc.k_source,
                mode: bc.mode,
                k1: bc.decoder_lipschitz,
                recon_noise: bc.recon_noise,
                recon_chains: bc.recon_chains,
                mc_draws: bc.mc_draws,
                lipschitz_pairs: bc.lipschitz_pairs,
                lipschitz_scales: bc.lipschitz_scales,
            },
            validate: ValidateSection {
                n: 512,
                projections: 256,
                repeats: 5,
                trials: 10_000,
                draws: 32,
                chain_draws: 4,
                lemmas: true,
            },
            sample_n: 2000,
            seeds: Seeds {
                data: 1,
                train: tc.seed,
                bound: bc.seed,
                validate: 4,
            },
            train: tc,
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{v}`")),
    }
}

fn sigma_name(k: SigmaKind) -> &'static str {
    match k {
        SigmaKind::Posterior => "posterior",
        SigmaKind::Beta => "beta",
        SigmaKind::Zero => "zero",
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Silu => "silu",
        Activation::Softplus => "softplus",
        Activation::Tanh => "tanh",
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Sets one key. Errors carry a message without location.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "config_version" => {
                let ver: u32 = parse_num(key, v)?;
                if ver != CONFIG_VERSION {
                    return Err(format!("unsupported config_version {ver}"));
                }
            }
            "out" => self.out = Some(PathBuf::from(v)),
            "data.generator" => match v {
                "uniform-square" | "uniform-circle" => self.data.generator = v.into(),
                _ => return Err(format!("unknown data generator `{v}`")),
            },
            "data.side" => self.data.side = parse_num(key, v)?,
            "data.radius" => self.data.radius = parse_num(key, v)?,
            "schedule.kind" => match v {
                "linear" | "cosine" => self.schedule.kind = v.into(),
                _ => return Err(format!("unknown schedule kind `{v}`")),
            },
            "schedule.T" => self.schedule.steps = parse_num(key, v)?,
            "schedule.beta_start" => self.schedule.beta_start = parse_num(key, v)?,
            "schedule.beta_end" => self.schedule.beta_end = parse_num(key, v)?,
            "schedule.sigma" => {
                self.schedule.sigma = match v {
                    "posterior" => SigmaKind::Posterior,
                    "beta" => SigmaKind::Beta,
                    "zero" => SigmaKind::Zero,
                    _ => return Err(format!("unknown sigma kind `{v}`")),
                }
            }
            "net.hidden" => self.net.hidden = parse_num(key, v)?,
            "net.layers" => self.net.layers = parse_num(key, v)?,
            "net.time_dim" => self.net.time_dim = parse_num(key, v)?,
            "net.activation" => {
                self.net.activation =
                    Activation::parse(v).ok_or_else(|| format!("unknown activation `{v}`"))?
            }
            "train.n" => self.train.n_train = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.steps" => self.train.steps = parse_num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "train.beta1" => self.train.beta1 = parse_num(key, v)?,
            "train.beta2" => self.train.beta2 = parse_num(key, v)?,
            "train.eps" => self.train.eps = parse_num(key, v)?,
            "bound.n" => self.bound.n = parse_num(key, v)?,
            "bound.lambdas" => {
                self.bound.lambdas = v
                    .split(',')
                    .map(|p| LambdaSpec::parse(p).ok_or_else(|| format!("bad lambda `{}`", p.trim())))
                    .collect::<std::result::Result<_, _>>()?
            }
            "bound.delta" => self.bound.delta = parse_num(key, v)?,
            "bound.k_source" => {
                self.bound.k_source =
                    KSource::parse(v).ok_or_else(|| format!("unknown k_source `{v}`"))?
            }
            "bound.mode" => {
                self.bound.mode = BoundMode::parse(v).ok_or_else(|| format!("unknown mode `{v}`"))?
            }
            "bound.k1" => {
                self.bound.k1 =
                    DecoderLipschitz::parse(v).ok_or_else(|| format!("unknown k1 policy `{v}`"))?
            }
            "bound.recon_noise" => self.bound.recon_noise = parse_num(key, v)?,
            "bound.recon_chains" => self.bound.recon_chains = parse_num(key, v)?,
            "bound.mc_draws" => self.bound.mc_draws = parse_num(key, v)?,
            "bound.lipschitz_pairs" => self.bound.lipschitz_pairs = parse_num(key, v)?,
            "bound.lipschitz_scales" => self.bound.lipschitz_scales = parse_list(key, v)?,
            "validate.n" => self.validate.n = parse_num(key, v)?,
            "validate.projections" => self.validate.projections = parse_num(key, v)?,
            "validate.repeats" => self.validate.repeats = parse_num(key, v)?,
            "validate.trials" => self.validate.trials = parse_num(key, v)?,
            "validate.draws" => self.validate.draws = parse_num(key, v)?,
            "validate.chain_draws" => self.validate.chain_draws = parse_num(key, v)?,
            "validate.lemmas" => self.validate.lemmas = parse_bool(key, v)?,
            "sample.n" => self.sample_n = parse_num(key, v)?,
            "seed.data" => self.seeds.data = parse_num(key, v)?,
            "seed.train" => {
                self.seeds.train = parse_num(key, v)?;
                self.train.seed = self.seeds.train;
            }
            "seed.bound" => self.seeds.bound = parse_num(key, v)?,
            "seed.validate" => self.seeds.validate = parse_num(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `origin` names the source
    /// in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v).map_err(err)?;
        }
        cfg.check().map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::Config {
                path: origin.to_string(),
                line: 0,
                msg: other.to_string(),
            },
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides in order, then re-checks the result.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for (i, o) in overrides.iter().enumerate() {
            let err = |msg: String| Error::Config {
                path: "--set".into(),
                line: i + 1,
                msg,
            };
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{o}`")))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        self.check()
    }

    /// Checks every downstream precondition that the config alone determines.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(msg.to_string()));
        match self.data.generator.as_str() {
            "uniform-square" if !(self.data.side > 0.0 && self.data.side.is_finite()) => {
                return bad("data.side must be positive")
            }
            "uniform-circle" if !(self.data.radius > 0.0 && self.data.radius.is_finite()) => {
                return bad("data.radius must be positive")
            }
            _ => {}
        }
        self.build_schedule()?;
        if self.net.hidden == 0 || self.net.layers == 0 {
            return bad("net.hidden and net.layers must be positive");
        }
        if self.net.time_dim == 0 || self.net.time_dim % 2 != 0 {
            return bad("net.time_dim must be positive and even");
        }
        self.train.validate()?;
        if self.bound.n == 0 {
            return bad("bound.n must be at least 1");
        }
        if self.bound.lambdas.is_empty() {
            return bad("bound.lambdas is empty");
        }
        if !(self.bound.delta > 0.0 && self.bound.delta < 1.0) {
            return bad("bound.delta must lie in (0, 1)");
        }
        self.bound_config().validate()?;
        if self.validate.n == 0 || self.validate.projections == 0 || self.validate.repeats == 0 {
            return bad("validate.n, validate.projections and validate.repeats must be positive");
        }
        if self.validate.trials == 0 || self.validate.draws == 0 || self.validate.chain_draws == 0 {
            return bad("validate.trials, validate.draws and validate.chain_draws must be positive");
        }
        if self.sample_n == 0 {
            return bad("sample.n must be at least 1");
        }
        Ok(())
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        match s.kind.as_str() {
            "cosine" => cosine_schedule(s.steps, s.sigma),
            _ => linear_schedule(s.steps, s.beta_start, s.beta_end, s.sigma),
        }
    }

    pub fn domain(&self) -> Result<DomainBox> {
        let half = match self.data.generator.as_str() {
            "uniform-circle" => self.data.radius,
            _ => self.data.side / 2.0,
        };
        DomainBox::centered_cube(2, half)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        vec![self.net.hidden; self.net.layers]
    }

    pub fn bound_config(&self) -> BoundConfig {
        BoundConfig {
            k_source: self.bound.k_source,
            mode: self.bound.mode,
            decoder_lipschitz: self.bound.k1,
            recon_noise: self.bound.recon_noise,
            recon_chains: self.bound.recon_chains,
            mc_draws: self.bound.mc_draws,
            lipschitz_pairs: self.bound.lipschitz_pairs,
            lipschitz_scales: self.bound.lipschitz_scales.clone(),
            seed: self.seeds.bound,
        }
    }

    pub fn contraction_config(&self, iterated: bool) -> ContractionConfig {
        ContractionConfig {
            n_trials: self.validate.trials,
            draws: if iterated {
                self.validate.chain_draws
            } else {
                self.validate.draws
            },
            lipschitz_pairs: self.bound.lipschitz_pairs,
            lipschitz_scales: self.bound.lipschitz_scales.clone(),
            ..ContractionConfig::default()
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.bound.lambdas.iter().map(|l| l.resolve(self.bound.n)).collect()
    }

    /// Canonical text: every key, fixed order. `out` is omitted so that the
    /// text, and any hash of it, is independent of where results are written.
    pub fn to_text(&self) -> String {
        let b = &self.bound;
        let lines = [
            format!("config_version = {CONFIG_VERSION}"),
            format!("data.generator = {}", self.data.generator),
            format!("data.side = {}", self.data.side),
            format!("data.radius = {}", self.data.radius),
            format!("schedule.kind = {}", self.schedule.kind),
            format!("schedule.T = {}", self.schedule.steps),
            format!("schedule.beta_start = {}", self.schedule.beta_start),
            format!("schedule.beta_end = {}", self.schedule.beta_end),
            format!("schedule.sigma = {}", sigma_name(self.schedule.sigma)),
            format!("net.hidden = {}", self.net.hidden),
            format!("net.layers = {}", self.net.layers),
            format!("net.time_dim = {}", self.net.time_dim),
            format!("net.activation = {}", activation_name(self.net.activation)),
            format!("train.n = {}", self.train.n_train),
            format!("train.batch_size = {}", self.train.batch_size),
            format!("train.steps = {}", self.train.steps),
            format!("train.learning_rate = {}", self.train.learning_rate),
            format!("train.beta1 = {}", self.train.beta1),
            format!("train.beta2 = {}", self.train.beta2),
            format!("train.eps = {}", self.train.eps),
            format!("bound.n = {}", b.n),
            format!("bound.lambdas = {}", join(&b.lambdas)),
            format!("bound.delta = {}", b.delta),
            format!("bound.k_source = {}", b.k_source.as_str()),
            format!("bound.mode = {}", b.mode.as_str()),
            format!(
                "bound.k1 = {}",
                match b.k1 {
                    DecoderLipschitz::Probe => "probe",
                    DecoderLipschitz::One => "one",
                }
            ),
            format!("bound.recon_noise = {}", b.recon_noise),
            format!("bound.recon_chains = {}", b.recon_chains),
            format!("bound.mc_draws = {}", b.mc_draws),
            format!("bound.lipschitz_pairs = {}", b.lipschitz_pairs),
            format!("bound.lipschitz_scales = {}", join(&b.lipschitz_scales)),
            format!("validate.n = {}", self.validate.n),
            format!("validate.projections = {}", self.validate.projections),
            format!("validate.repeats = {}", self.validate.repeats),
            format!("validate.trials = {}", self.validate.trials),
            format!("validate.draws = {}", self.validate.draws),
            format!("validate.chain_draws = {}", self.validate.chain_draws),
            format!("validate.lemmas = {}", self.validate.lemmas),
            format!("sample.n = {}", self.sample_n),
            format!("seed.data = {}", self.seeds.data),
            format!("seed.train = {}", self.seeds.train),
            format!("seed.bound = {}", self.seeds.bound),
            format!("seed.validate = {}", self.seeds.validate),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
