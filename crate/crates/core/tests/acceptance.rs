//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Exits nonzero if any criterion fails.
//!
//! `cargo test -p ddpm-bound --test acceptance`

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;

use ddpm_bound::bound::{
    check_iterated_contraction, contraction_trials, gaussian_pair_distance,
    gaussian_pair_distance_mc, iterated_trials, ContractionConfig, TrialSet,
};
use ddpm_bound::config::ExperimentConfig;
use ddpm_bound::data::{SampleSet, SourceInfo};
use ddpm_bound::denoiser::DiffusionModel;
use ddpm_bound::experiment;
use ddpm_bound::forward::{posterior_mean, prior_kl};
use ddpm_bound::net::Activation;
use ddpm_bound::rng::{stream, SeedRoot};
use ddpm_bound::schedule::{linear_schedule, NoiseSchedule, SigmaKind};
use ddpm_bound::transport::{exact_w1, sliced_w1_lower, trivial_coupling_upper};
use ddpm_bound::BoundReport;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Trained default model and its bound sweep, shared by several criteria.
struct Trained {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    model: DiffusionModel,
    reports: Vec<BoundReport>,
    train_time: Duration,
    bound_time: Duration,
}

static TRAINED: OnceLock<Trained> = OnceLock::new();

fn trained() -> &'static Trained {
    TRAINED.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let cfg = ExperimentConfig::default();
        let t0 = Instant::now();
        let outcome = experiment::cmd_train(&cfg, dir.path()).expect("training");
        let train_time = t0.elapsed();
        let t1 = Instant::now();
        let bound = experiment::cmd_bound(&cfg, &dir.path().join("model.ckpt"), dir.path())
            .expect("bound");
        let bound_time = t1.elapsed();
        Trained {
            _dir: dir,
            cfg,
            model: outcome.model,
            reports: bound.reports,
            train_time,
            bound_time,
        }
    })
}

fn random_schedule<R: Rng>(rng: &mut R) -> NoiseSchedule {
    let steps = rng.random_range(1..=200);
    let lo = rng.random_range(1e-5..0.05);
    let hi = rng.random_range(lo..0.5);
    let kind = if rng.random::<bool>() { SigmaKind::Posterior } else { SigmaKind::Beta };
    linear_schedule(steps, lo, hi, kind).unwrap()
}

fn c1_prior_kl() -> Check {
    let start = Instant::now();
    let mut rng = oracle_rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = random_schedule(&mut rng);
        let d = rng.random_range(1..=8);
        let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ab = s.alpha_bar_final();
        let m: Vec<f64> = x0.iter().map(|v| ab.sqrt() * v).collect();
        let oracle = gaussian_kl_diag(&m, &vec![1.0 - ab; d], &vec![0.0; d], &vec![1.0; d]);
        worst = worst.max((prior_kl(&s, &x0).unwrap() - oracle).abs());
    }
    let el = start.elapsed();
    ensure(worst <= 1e-10, format!("max abs error {worst:.3e} > 1e-10"))?;
    ensure(el < Duration::from_secs(1), format!("took {}", secs(el)))?;
    Ok(format!("1000 cases, max abs error {worst:.2e}, {}", secs(el)))
}

fn c2_pair_distance() -> Check {
    let mut parts = Vec::new();
    for (i, d) in [1usize, 2, 16].into_iter().enumerate() {
        let (exact, _) = gaussian_pair_distance(d).unwrap();
        let est = gaussian_pair_distance_mc(d, 1_000_000, SeedRoot(200 + i as u64)).unwrap();
        let z = (est.mean - exact) / est.std_err;
        ensure(z.abs() <= 3.0, format!("D={d}: crate MC {} vs exact {exact}, z={z:.2}", est.mean))?;
        let (om, ose) = mc_oracle(1_000_000, 300 + d as u64, |r| {
            (0..d).map(|_| (normal(r) - normal(r)).powi(2)).sum::<f64>().sqrt()
        });
        let oz = (om - exact) / ose;
        ensure(oz.abs() <= 3.0, format!("D={d}: oracle MC {om} vs exact {exact}, z={oz:.2}"))?;
        parts.push(format!("D={d} z={z:+.2}"));
    }
    for d in 1..=64 {
        let (exact, bound) = gaussian_pair_distance(d).unwrap();
        ensure(exact <= bound, format!("D={d}: exact {exact} > bound {bound}"))?;
    }
    Ok(format!("{}; exact <= sqrt(2D) for D in 1..=64", parts.join(", ")))
}

fn c3_schedule_constants() -> Check {
    let mut rng = oracle_rng(301);
    let (mut max_k, mut worst_slope, mut checked) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let s = random_schedule(&mut rng);
        for t in 2..=s.num_steps() {
            let k = s.schedule_lipschitz(t).unwrap();
            ensure(k < 1.0, format!("K'_{t} = {k} >= 1"))?;
            max_k = max_k.max(k);
            let x0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = [normal(&mut rng), normal(&mut rng)];
            let b = [normal(&mut rng), normal(&mut rng)];
            let ma = posterior_mean(&s, &a, &x0, t).unwrap();
            let mb = posterior_mean(&s, &b, &x0, t).unwrap();
            let num = ((ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2)).sqrt();
            let den = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            worst_slope = worst_slope.max((num / den - k).abs());
            checked += 1;
        }
    }
    ensure(worst_slope <= 1e-10, format!("slope error {worst_slope:.3e}"))?;
    Ok(format!(
        "1000 schedules, {checked} steps: max K' = {max_k:.6}, max slope error {worst_slope:.1e}"
    ))
}

/// Pooled z of the per-trial MC estimates against per-trial closed forms.
fn pooled_z(trials: &TrialSet, oracle: &[f64]) -> f64 {
    let diff: f64 = trials.lhs.iter().zip(oracle).map(|(l, o)| l.mean - o).sum();
    let var: f64 = trials.lhs.iter().map(|l| l.std_err * l.std_err).sum();
    if var == 0.0 {
        if diff.abs() < 1e-9 { 0.0 } else { f64::INFINITY }
    } else {
        diff / var.sqrt()
    }
}

fn one_d(trials: &TrialSet, i: usize) -> (f64, f64) {
    (trials.x[[i, 0]], trials.y[[i, 0]])
}

fn c4a_null_fixture() -> Result<String, String> {
    let cfg = ContractionConfig {
        n_trials: 10_000,
        draws: 32,
        ..ContractionConfig::default()
    };
    // D = 1, T = 50, ε_net ≡ 0: g_t(x) = x / √α_t and the decoder clamps to [−1, 1].
    let s = linear_schedule(50, 1e-4, 0.2, SigmaKind::Posterior).unwrap();
    let m = null_model(s, 1, 1.0);
    let mut rng = stream(401);
    let mut worst_z: f64 = 0.0;
    for t in 1..=50 {
        let trials = contraction_trials(&m, t, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let v = trials.verdict(Some(t), cfg.draws, 3.0);
        ensure(v.pass, format!("null fixture t={t}: margin {}", v.margin))?;
        let a = m.schedule.alpha(t).sqrt();
        let sigma = if t == 1 { 0.0 } else { m.schedule.sigma(t) };
        let oracle: Vec<f64> = (0..cfg.n_trials)
            .map(|i| {
                let (x, y) = one_d(&trials, i);
                if t == 1 {
                    ((x / a).clamp(-1.0, 1.0) - (y / a).clamp(-1.0, 1.0)).abs()
                } else {
                    folded_normal_mean((x - y) / a, sigma * 2f64.sqrt())
                }
            })
            .collect();
        for (i, o) in oracle.iter().enumerate() {
            ensure(*o <= trials.rhs[i] + 1e-12, format!("t={t}: oracle exceeds RHS at trial {i}"))?;
        }
        let z = pooled_z(&trials, &oracle);
        ensure(z.abs() <= 3.0, format!("t={t}: MC vs folded-normal oracle z={z:.2}"))?;
        worst_z = worst_z.max(z.abs());
    }

    // Explicit two-step chain in a box wide enough that the clamp never acts.
    let s2 = NoiseSchedule::from_alphas(vec![0.9, 0.6], SigmaKind::Posterior).unwrap();
    let m2 = null_model(s2, 1, 50.0);
    let icfg = ContractionConfig { draws: 8, ..cfg.clone() };
    let trials = iterated_trials(&m2, &icfg, &mut rng).map_err(|e| e.to_string())?;
    let (a1, a2) = (0.9f64, 0.6f64);
    let sigma2 = m2.schedule.sigma(2);
    let k_expected = [1.0 / a1.sqrt(), 1.0 / a2.sqrt()];
    for (k, e) in trials.k_hat.iter().zip(k_expected) {
        ensure((k - e).abs() < 1e-9, format!("probed K {k} vs {e}"))?;
    }
    // Endpoints cover the whole box, so the decoder clamp can act near its edges.
    // The unclamped oracle applies to trials whose chains stay ten SDs inside.
    let spread = sigma2 / a1.sqrt();
    let scale = (a1 * a2).sqrt();
    let inside: Vec<usize> = (0..icfg.n_trials)
        .filter(|&i| {
            let (x, y) = one_d(&trials, i);
            x.abs().max(y.abs()) / scale + 10.0 * spread < 50.0
        })
        .collect();
    ensure(inside.len() > icfg.n_trials / 3, "too few interior trials")?;
    let lhs_inside: Vec<_> = inside.iter().map(|&i| trials.lhs[i]).collect();
    let mut oracle = Vec::with_capacity(inside.len());
    for &i in &inside {
        let (x, y) = one_d(&trials, i);
        let o = folded_normal_mean((x - y) / scale, spread * 2f64.sqrt());
        let rhs = ((x - y) / scale).abs() + spread * 2.0 / std::f64::consts::PI.sqrt();
        ensure((rhs - trials.rhs[i]).abs() < 1e-9 * (1.0 + rhs), "iterated RHS differs from formula")?;
        ensure(o <= rhs + 1e-12, format!("iterated oracle exceeds RHS at trial {i}"))?;
        oracle.push(o);
    }
    let diff: f64 = lhs_inside.iter().zip(&oracle).map(|(l, o)| l.mean - o).sum();
    let var: f64 = lhs_inside.iter().map(|l| l.std_err * l.std_err).sum();
    let z2 = diff / var.sqrt();
    let v2 = trials.verdict(None, icfg.draws, 3.0);
    ensure(v2.pass, format!("T=2 iterated margin {}", v2.margin))?;

    let v50 = check_iterated_contraction(&m, &ContractionConfig { draws: 4, ..cfg }, &mut rng)
        .map_err(|e| e.to_string())?;
    ensure(v50.pass, format!("T=50 null iterated margin {}", v50.margin))?;
    Ok(format!(
        "null fixture: 50 steps pass, max oracle |z| {worst_z:.2}; T=2 chain oracle z={z2:+.2}"
    ))
}

fn c4_lemmas() -> Check {
    // Training the shared model is not part of the harness runtime.
    let tr = trained();
    let start = Instant::now();
    let a = c4a_null_fixture()?;
    let t_lemmas = Instant::now();
    let (contraction, iterated) =
        experiment::lemma_checks(&tr.cfg, &tr.model).map_err(|e| e.to_string())?;
    for v in &contraction {
        ensure(v.pass, format!("trained model t={:?}: margin {}", v.t, v.margin))?;
        ensure(v.n_trials == 10_000, "trial count")?;
    }
    ensure(iterated.pass, format!("trained iterated margin {}", iterated.margin))?;
    let exceed: usize = contraction.iter().map(|v| v.trial_exceedances).sum();
    let min_margin = contraction.iter().map(|v| v.margin).fold(f64::INFINITY, f64::min);
    let trained_time = t_lemmas.elapsed();
    let total = start.elapsed();
    ensure(total < Duration::from_secs(120), format!("took {}", secs(total)))?;
    Ok(format!(
        "{a}; trained: 50 steps pass (min margin {min_margin:.3}, {exceed} of 500000 single trials over own 3-SE), iterated margin {:.3}; {} ({} trained part)",
        iterated.margin,
        secs(total),
        secs(trained_time)
    ))
}

fn set(points: &[Vec<f64>]) -> SampleSet {
    SampleSet::from_points(points, SourceInfo::default()).unwrap()
}

fn c5_transport() -> Check {
    let mut rng = oracle_rng(501);
    let mut brute = 0;
    for (k, &n) in [7usize, 64].iter().enumerate() {
        for i in 0..50 {
            let a = random_points(n, 2, 1.0, &mut rng);
            let b = random_points(n, 2, 1.5, &mut rng);
            let (sa, sb) = (set(&a), set(&b));
            let lo = sliced_w1_lower(&sa, &sb, 128, &mut stream((k * 100 + i) as u64)).unwrap().value;
            let ex = exact_w1(&sa, &sb).unwrap().value;
            let hi = trivial_coupling_upper(&sa, &sb).unwrap().value;
            ensure(lo <= ex + 1e-12 && ex <= hi + 1e-12, format!("sandwich {lo} {ex} {hi}"))?;
            if n <= 7 {
                let bf = brute_force_w1(&a, &b);
                ensure((ex - bf).abs() < 1e-12, format!("brute force {bf} vs {ex}"))?;
                brute += 1;
            }
        }
    }
    for n in 1..7 {
        for _ in 0..10 {
            let a = random_points(n, 3, 1.0, &mut rng);
            let b = random_points(n, 3, 1.0, &mut rng);
            let ex = exact_w1(&set(&a), &set(&b)).unwrap().value;
            let bf = brute_force_w1(&a, &b);
            ensure((ex - bf).abs() < 1e-12, format!("brute force n={n}: {bf} vs {ex}"))?;
            brute += 1;
        }
    }
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let (a, b, c) = (
            set(&random_points(n, 2, 1.0, &mut rng)),
            set(&random_points(n, 2, 1.0, &mut rng)),
            set(&random_points(n, 2, 1.0, &mut rng)),
        );
        let w = |p: &SampleSet, q: &SampleSet| exact_w1(p, q).unwrap().value;
        ensure(w(&a, &a).abs() < 1e-12, "identity")?;
        ensure((w(&a, &b) - w(&b, &a)).abs() < 1e-12, "symmetry")?;
        ensure(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12, "triangle inequality")?;
    }
    Ok(format!("100 sandwich instances, {brute} brute-force matches, 100 metric triples"))
}

fn c6_gradcheck() -> Check {
    let err = worst_relative_error(100, Activation::Silu, 601);
    ensure(err <= 1e-5, format!("relative error {err:.3e}"))?;
    Ok(format!("100 parameter points, worst relative error {err:.2e}"))
}

fn c7_reproduction() -> Check {
    let tr = trained();
    let r = &tr.reports;
    ensure(r.len() == 6, format!("{} reports", r.len()))?;
    let pac: Vec<f64> = r.iter().map(|x| x.term_pac).collect();
    ensure(pac == [0.1, 0.2, 0.5, 1.0, 2.0, 10.0], format!("T3 column {pac:?}"))?;
    let totals: Vec<f64> = r.iter().map(|x| x.total).collect();
    ensure((9.0..=14.0).contains(&totals[5]), format!("total at 10n = {}", totals[5]))?;
    ensure(totals[0] < 2.828, format!("total at n/10 = {}", totals[0]))?;
    let reference = [1.124, 1.231, 1.5181, 2.035, 3.056, 11.061];
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        idx
    };
    ensure(order(&totals) == order(&reference), format!("ordering of {totals:?}"))?;
    let runtime = tr.train_time + tr.bound_time;
    ensure(runtime <= Duration::from_secs(900), format!("took {}", secs(runtime)))?;
    let shown: Vec<String> = totals.iter().map(|t| format!("{t:.3}")).collect();
    Ok(format!(
        "totals [{}] vs reference [1.124, 1.231, 1.518, 2.035, 3.056, 11.061]; train {} + bound {}",
        shown.join(", "),
        secs(tr.train_time),
        secs(tr.bound_time)
    ))
}

fn c8_validity() -> Check {
    let tr = trained();
    let runs = experiment::validity_runs(&tr.cfg, &tr.model).map_err(|e| e.to_string())?;
    ensure(runs.len() == 5, "five repeats")?;
    let passed = runs.iter().filter(|r| r.pass).count();
    let worst = runs.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let max_exact = runs.iter().map(|r| r.exact.value).fold(0.0, f64::max);
    ensure(passed == 5, format!("{passed}/5 pass, worst margin {worst}"))?;
    Ok(format!("5/5 pass; largest exact W1 {max_exact:.4}, smallest margin {worst:.4}"))
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn c9_determinism() -> Check {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "train.steps=300".into(),
        "train.n=5000".into(),
        "bound.n=500".into(),
        "bound.mc_draws=100000".into(),
        "bound.recon_noise=4".into(),
    ])
    .map_err(|e| e.to_string())?;
    let run = |threads: usize| -> Vec<(String, Vec<u8>)> {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            experiment::cmd_train(&cfg, dir.path()).unwrap();
            experiment::cmd_bound(&cfg, &dir.path().join("model.ckpt"), dir.path()).unwrap();
        });
        artifacts(dir.path())
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    ensure(a.len() == 6, format!("{} artifacts", a.len()))?;
    ensure(a == b, "rerun with one worker differs")?;
    ensure(a == c, "three workers differ from one")?;
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    Ok(format!("byte-identical across reruns and 1 vs 3 workers: {}", names.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("closed-form KL", c1_prior_kl),
        ("Gaussian pair distance", c2_pair_distance),
        ("schedule constants", c3_schedule_constants),
        ("contraction harnesses", c4_lemmas),
        ("transport oracle sandwich", c5_transport),
        ("gradient check", c6_gradcheck),
        ("uniform-square reproduction", c7_reproduction),
        ("bound validity", c8_validity),
        ("determinism", c9_determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
        let el = secs(start.elapsed());
        match outcome {
            Ok(detail) => println!("PASS {id} {name} [{el}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name} [{el}]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
