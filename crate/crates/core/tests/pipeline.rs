//! Forward process consistency, training behaviour and end-to-end commands.

use std::path::Path;
use std::process::Command;

use ddpm_bound::config::ExperimentConfig;
use ddpm_bound::data::{SampleSet, SourceInfo};
use ddpm_bound::experiment;
use ddpm_bound::forward::{sample_forward_marginal, sample_forward_path};
use ddpm_bound::rng::stream;
use ddpm_bound::schedule::{linear_schedule, SigmaKind};
use ddpm_bound::trainer::{train, TrainConfig};

#[test]
fn forward_path_matches_marginal_moments() {
    let s = linear_schedule(20, 1e-3, 0.1, SigmaKind::Posterior).unwrap();
    let x0 = [0.8, -0.4];
    let n = 100_000;
    let (mut rp, mut rm) = (stream(1), stream(2));
    for t in [1, 7, 20] {
        let mut stats = [[0.0f64; 4]; 2];
        for _ in 0..n {
            let p = sample_forward_path(&s, &x0, t, &mut rp).unwrap();
            let m = sample_forward_marginal(&s, &x0, t, &mut rm).unwrap();
            for (k, v) in [p, m].iter().enumerate() {
                stats[k][0] += v[0];
                stats[k][1] += v[0] * v[0];
                stats[k][2] += v[1];
                stats[k][3] += v[1] * v[1];
            }
        }
        let ab = s.alpha_bar(t);
        for st in stats {
            let mean0 = st[0] / n as f64;
            let var0 = st[1] / n as f64 - mean0 * mean0;
            let mean1 = st[2] / n as f64;
            assert!((mean0 - ab.sqrt() * x0[0]).abs() < 4.0 * ((1.0 - ab) / n as f64).sqrt());
            assert!((mean1 - ab.sqrt() * x0[1]).abs() < 4.0 * ((1.0 - ab) / n as f64).sqrt() + 1e-12);
            assert!((var0 - (1.0 - ab)).abs() < 0.02 * (1.0 - ab) + 1e-9);
        }
    }
}

#[test]
fn model_trained_on_one_point_generates_near_it() {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&["schedule.T=20".into()]).unwrap();
    let target = [0.5, -0.3];
    let data = SampleSet::from_points(&vec![target.to_vec(); 256], SourceInfo::default()).unwrap();
    let model = experiment::initial_model(&cfg).unwrap();
    let tc = TrainConfig {
        steps: 3000,
        batch_size: 128,
        ..TrainConfig::default()
    };
    let (model, losses) = train(model, &data, &tc).unwrap();
    let early: f64 = losses[..100].iter().sum::<f64>() / 100.0;
    let late: f64 = losses[losses.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(late < 0.5 * early, "{early} -> {late}");
    let g = model.generate_batch(500, &mut stream(3));
    let mean_dist = g
        .outer_iter()
        .map(|r| ((r[0] - target[0]).powi(2) + (r[1] - target[1]).powi(2)).sqrt())
        .sum::<f64>()
        / 500.0;
    assert!(mean_dist < 0.2, "mean distance {mean_dist}");
}

#[test]
fn untrained_model_bound_still_dominates_w1() {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "bound.n=400".into(),
        "bound.mc_draws=50000".into(),
        "bound.recon_noise=4".into(),
        "validate.n=128".into(),
        "validate.repeats=2".into(),
    ])
    .unwrap();
    let model = experiment::initial_model(&cfg).unwrap();
    for run in experiment::validity_runs(&cfg, &model).unwrap() {
        assert!(run.pass, "{run:?}");
        assert!(run.sliced_lower.value <= run.exact.value + 1e-12);
        assert!(run.exact.value <= run.trivial_upper.value + 1e-12);
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddpm-bound"))
}

const SMALL: &[&str] = &[
    "--set", "train.steps=150",
    "--set", "train.n=2000",
    "--set", "bound.n=200",
    "--set", "bound.mc_draws=20000",
    "--set", "bound.recon_noise=2",
    "--set", "bound.lipschitz_pairs=256",
    "--set", "validate.n=64",
    "--set", "validate.repeats=1",
    "--set", "validate.trials=300",
    "--set", "validate.draws=8",
    "--set", "validate.chain_draws=2",
];

fn run(verb: &str, out: &Path, extra: &[&str]) -> std::process::Output {
    let o = bin()
        .arg(verb)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .args(extra)
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "{verb} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run("gen-data", out, &[]);
    let data = SampleSet::load(out, "data").unwrap();
    assert_eq!(data.len(), 2000);

    run("train", out, &[]);
    for f in ["model.ckpt", "loss.csv", "schedule.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["steps"], 150);
    assert!(!String::from_utf8(read(out.join("manifest.json"))).unwrap().contains(out.to_str().unwrap()));

    run("bound", out, &[]);
    let csv = String::from_utf8(read(out.join("bound.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("lambda,delta,n,T,D,Delta,term_recon"));
    let pac: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(8).unwrap().parse().unwrap()).collect();
    assert_eq!(pac, vec![0.1, 0.2, 0.5, 1.0, 2.0, 10.0]);
    let first = read(out.join("bound.csv"));
    run("bound", out, &[]);
    assert_eq!(read(out.join("bound.csv")), first);

    run("sample", out, &["--n", "2000"]);
    let samples = String::from_utf8(read(out.join("samples.csv"))).unwrap();
    assert_eq!(samples.lines().count(), 2001);
    for l in samples.lines().skip(1) {
        for v in l.split(',') {
            let v: f64 = v.parse().unwrap();
            assert!(v.abs() <= 1.0);
        }
    }

    let v = run("validate", out, &[]);
    assert!(String::from_utf8_lossy(&v.stdout).contains("overall: pass"));
    let report: serde_json::Value = serde_json::from_slice(&read(out.join("validate.json"))).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["contraction"].as_array().unwrap().len(), 50);
}

#[test]
fn cli_rejects_bad_config_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "config_version = 1\ntrain.steps = 10\nschedule.T = zero\n").unwrap();
    let o = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.cfg") && err.contains('3'), "{err}");
    assert!(!dir.path().join("model.ckpt").exists());

    let o = bin()
        .args(["train", "--set", "schedule.T=0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn bound_rejects_mismatched_schedule() {
    let dir = tempfile::tempdir().unwrap();
    run("train", dir.path(), &[]);
    let o = bin()
        .arg("bound")
        .arg("--out")
        .arg(dir.path())
        .args(SMALL)
        .args(["--set", "schedule.T=40"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("schedule"));
}
