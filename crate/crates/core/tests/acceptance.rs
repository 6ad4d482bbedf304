//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 5 always run. Criteria 6 to 9 train the full benchmark
//! networks and run only when `--ignored` or `--include-ignored` is passed
//! (`cargo test --test acceptance -- --include-ignored`) or `SBNN_SLOW=1`
//! is set. Their replicate outputs live under `SBNN_ACCEPT_DIR` (default:
//! the cargo target tmpdir) and finished replicates are reused.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use sparse_bnn::cli::{self, ElicitOverrides, RunManifest};
use sparse_bnn::config::RunConfig;
use sparse_bnn::elicit::{fd_hessian, laplace_log_evidence};
use sparse_bnn::net::{self, Activation, Arch, Mask, ParamVector, Task};
use sparse_bnn::prior::{self, PriorHyper};
use sparse_bnn::select::{self, effective_variables, ConnectionCounts};

const REPLICATES: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn preset(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name);
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn preset_hyper(name: &str) -> PriorHyper {
    preset(name).prior
}

// criterion 1

fn random_instance<R: Rng>(r: &mut R, a: Activation, t: Task) -> (Arch, ParamVector, ndarray::Array2<f64>, Vec<f64>) {
    loop {
        let arch = random_arch(r, a, t);
        let beta = random_params(r, &arch, 1.0);
        let (x, y) = random_data(r, &arch, 8);
        if a == Activation::Tanh || min_abs_preactivation(&arch, beta.as_slice(), &x) >= 1e-3 {
            return (arch, beta, x, y);
        }
    }
}

fn gradient_correctness() -> Outcome {
    let mut r = rng(101);
    let mut worst_ll = 0.0f64;
    let mut instances = 0;
    for task in [Task::Regression, Task::BinaryClassification] {
        for act in [Activation::Tanh, Activation::Relu] {
            for _ in 0..50 {
                let (arch, beta, x, y) = random_instance(&mut r, act, task);
                let full = Mask::full(&arch);
                let g = net::loglik_grad(&arch, &beta, &full, x.view(), &y).unwrap();
                let fd = fd_gradient(
                    |v| {
                        let b = ParamVector::from_flat(&arch, v.to_vec()).unwrap();
                        net::loglik(&arch, &b, &full, x.view(), &y).unwrap()
                    },
                    beta.as_slice(),
                    1e-5,
                );
                for (a, b) in g.as_slice().iter().zip(&fd) {
                    worst_ll = worst_ll.max(rel_err(*a, *b, 1e-4));
                }
                instances += 1;
            }
        }
    }

    let mut worst_prior = 0.0f64;
    let hypers = [
        preset_hyper("regression-tanh.toml"),
        preset_hyper("structure-selection.toml"),
        PriorHyper::new(1e-3, 1e-4, 1e-1).unwrap(),
    ];
    for h in &hypers {
        let s0 = h.sigma0_sq().sqrt();
        for _ in 0..50 {
            let arch = random_arch(&mut r, Activation::Tanh, Task::Regression);
            // magnitudes from deep in the spike to well inside the slab
            let v = (0..arch.n_params())
                .map(|_| {
                    let u: f64 = r.random_range(0.1..20.0);
                    if r.random_bool(0.5) {
                        u * s0
                    } else {
                        -u * s0
                    }
                })
                .collect();
            let beta = ParamVector::from_flat(&arch, v).unwrap();
            let g = prior::log_prior_grad(&beta, h);
            let fd = fd_gradient(
                |v| prior::log_prior(&ParamVector::from_flat(&arch, v.to_vec()).unwrap(), h),
                beta.as_slice(),
                1e-4 * s0,
            );
            for (a, b) in g.as_slice().iter().zip(&fd) {
                worst_prior = worst_prior.max(rel_err(*a, *b, 1e-3 / s0));
            }
        }
    }
    let tol = 1e-5;
    outcome(
        worst_ll < tol && worst_prior < tol,
        format!(
            "max rel err loglik {worst_ll:.2e} over {instances} instances, log prior {worst_prior:.2e} over 150; tolerance {tol:e}"
        ),
    )
}

// criterion 2

fn threshold_identity() -> Outcome {
    let mut r = rng(202);
    let mut draws = Vec::new();
    while draws.len() < 100 {
        let lambda = 10f64.powf(r.random_range(-7.0..-0.5));
        let s0 = 10f64.powf(r.random_range(-6.0..-2.0));
        let s1 = s0 * 10f64.powf(r.random_range(0.3..4.0));
        let h = PriorHyper::from_std(lambda, s0, s1).unwrap();
        if !prior::threshold(&h).degenerate {
            draws.push(h);
        }
    }
    let worst = draws
        .iter()
        .map(|h| (h.inclusion_prob(prior::threshold(h).value) - 0.5).abs())
        .fold(0.0f64, f64::max);

    let arch = Arch::new(vec![9997, 1, 1], Activation::Tanh, Task::Regression).unwrap();
    let k = arch.n_params();
    let mut mismatches = 0;
    let mut grids = 0;
    for h in [
        preset_hyper("regression-tanh.toml"),
        preset_hyper("structure-selection.toml"),
        draws[0],
        draws[1],
    ] {
        let t = prior::threshold(&h).value;
        let grid: Vec<f64> = (0..k).map(|i| -4.0 * t + 8.0 * t * i as f64 / (k - 1) as f64).collect();
        let mask = prior::sparsify(&ParamVector::from_flat(&arch, grid.clone()).unwrap(), &h);
        mismatches += grid
            .iter()
            .zip(mask.as_slice())
            .filter(|(b, keep)| **keep != (h.inclusion_prob(**b) > 0.5))
            .count();
        grids += 1;
    }
    outcome(
        worst < 1e-12 && mismatches == 0,
        format!("max |π(t) − ½| {worst:.2e} over 100 draws (tolerance 1e-12); {mismatches} mismatches on {grids} grids of {k} points"),
    )
}

// criterion 3

/// Composite Simpson rule on `[a, b]` with `m` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Laplace evidence of the quadratic `h(β) = h0 − ½ (β − m)ᵀ A (β − m)`
/// through the finite-difference Hessian, against `log ∫ exp(n h)` by
/// quadrature.
fn evidence_oracle() -> Outcome {
    let mut errors = Vec::new();

    // the documented one-dimensional example, given to four decimals
    let (ex, _) = laplace_log_evidence(100, -1.0, &DMatrix::from_element(1, 1, -2.0)).unwrap();
    let example_ok = (ex + 101.7302).abs() < 5e-5;

    let one_d = [(100usize, -1.0, 2.0, 0.3), (250, 0.4, 0.7, -1.2), (40, -2.5, 9.0, 0.0)];
    for (n, h0, c, m) in one_d {
        let (hess, _) = fd_hessian(|b| Ok(vec![-c * (b[0] - m)]), &[m]).unwrap();
        let (ev, _) = laplace_log_evidence(n, h0, &hess).unwrap();
        let sd = 1.0 / (n as f64 * c).sqrt();
        let integral = simpson(
            |b| (-(n as f64) * 0.5 * c * (b - m).powi(2)).exp(),
            m - 12.0 * sd,
            m + 12.0 * sd,
            4000,
        );
        let exact = n as f64 * h0 + integral.ln();
        errors.push((ev - exact).abs());
    }

    let two_d = [
        (100usize, -1.0, [2.0, 0.5, 0.5, 1.0], [0.2, -0.4]),
        (60, 0.3, [3.0, -1.2, -1.2, 1.5], [1.0, 0.5]),
    ];
    for (n, h0, a, m) in two_d {
        let grad = |b: &[f64]| {
            let d = [b[0] - m[0], b[1] - m[1]];
            Ok(vec![-(a[0] * d[0] + a[1] * d[1]), -(a[2] * d[0] + a[3] * d[1])])
        };
        let (hess, _) = fd_hessian(grad, &m).unwrap();
        let (ev, _) = laplace_log_evidence(n, h0, &hess).unwrap();
        let nf = n as f64;
        let half_width = 12.0 / (nf * a[0].min(a[3]) * (1.0 - a[1] * a[2] / (a[0] * a[3]))).sqrt();
        let inner = |u: f64| {
            simpson(
                |v| (-0.5 * nf * (a[0] * u * u + 2.0 * a[1] * u * v + a[3] * v * v)).exp(),
                -half_width,
                half_width,
                1200,
            )
        };
        let integral = simpson(inner, -half_width, half_width, 1200);
        let exact = nf * h0 + integral.ln();
        errors.push((ev - exact).abs());
    }
    let worst = errors.iter().copied().fold(0.0f64, f64::max);
    outcome(
        worst < 1e-6 && example_ok,
        format!(
            "max |log Z − quadrature| {worst:.2e} over 3 one-dimensional and 2 two-dimensional cases; n=100, curvature 2 gives {ex:.4}"
        ),
    )
}

// criterion 4

fn reachability_equivalence() -> Outcome {
    let arch = Arch::new(vec![3, 2, 1], Activation::Tanh, Task::Regression).unwrap();
    let slots: Vec<usize> = arch.layers().iter().flat_map(|l| l.weight_range()).collect();
    let mut disagreements = 0;
    for code in 0u32..1 << slots.len() {
        let mut m = Mask::empty(&arch);
        for (b, &slot) in slots.iter().enumerate() {
            m.as_mut_slice()[slot] = code >> b & 1 == 1;
        }
        if effective_variables(&arch, &m) != path_count_variables(&arch, &m) {
            disagreements += 1;
        }
    }
    outcome(
        disagreements == 0 && slots.len() == 8,
        format!("{disagreements} disagreements over all {} masks", 1u32 << slots.len()),
    )
}

// criterion 5

const SMALL_RUN: &str = r#"
tries = 3
selection = "evidence"
base_seed = 17
replicates = 2
output_dir = "determinism"

[arch]
widths = [8, 4, 2, 1]
activation = "tanh"
task = "regression"

[prior]
lambda = 1e-2
sigma0_sq = 1e-4
sigma1_sq = 1.0

[train]
iterations = 400
batch_size = 16
lr_schedule = { kind = "constant", lr = 0.02 }
momentum = 0.5
log_every = 100

[refine]
iterations = 200
batch_size = 16
lr_schedule = { kind = "step_decay", lr = 0.02, factor = 0.5, milestones = [100] }

[data]
source = "generator"
kind = "nonlinear_regression"
p = 8
n_train = 120
n_val = 20
n_test = 40
"#;

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for r in 0..2 {
        let rep = dir.join(format!("replicate-{r:03}"));
        let mut files = vec![rep.join("manifest.json")];
        let mut ckpts: Vec<PathBuf> = std::fs::read_dir(rep.join("checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        ckpts.sort();
        files.extend(ckpts);
        for f in files {
            let bytes = std::fs::read(&f).unwrap();
            out.push((f, bytes));
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let out = tmp.path().join("out");
    let ov = ElicitOverrides {
        output_dir: Some(out.clone()),
        ..Default::default()
    };
    cli::cmd_elicit(&cfg, &ov).unwrap();
    let first = snapshot(&out);
    cli::cmd_elicit(&cfg, &ov).unwrap();
    let second = snapshot(&out);
    let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    outcome(
        differing == 0 && first.len() == second.len() && first.len() == 8,
        format!("{differing} of {} manifest and checkpoint files differ between two runs", first.len()),
    )
}

// slow criteria

fn accept_root() -> PathBuf {
    std::env::var_os("SBNN_ACCEPT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

/// Runs (or reloads) `REPLICATES` replicates of a preset.
fn replicates(name: &str) -> Vec<RunManifest> {
    let mut cfg = preset(name);
    cfg.replicates = REPLICATES;
    let root = accept_root().join(name.trim_end_matches(".toml"));
    (0..REPLICATES)
        .map(|r| {
            let dir = root.join(format!("replicate-{r:03}"));
            let existing = std::fs::read_to_string(dir.join("manifest.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
                .filter(|m| m.config == cfg);
            if let Some(m) = existing {
                return m;
            }
            let start = Instant::now();
            let m = cli::run_replicate(&cfg, r, &dir).unwrap_or_else(|e| panic!("{name} replicate {r}: {e}"));
            eprintln!("{name}: replicate {r} finished in {:.0} s", start.elapsed().as_secs_f64());
            m
        })
        .collect()
}

fn exact_recoveries(ms: &[RunManifest], truth: &BTreeSet<usize>) -> usize {
    ms.iter()
        .filter(|m| m.winner().effective_variables.iter().copied().collect::<BTreeSet<_>>() == *truth)
        .count()
}

fn regression_reproduction(ms: &[RunManifest]) -> Outcome {
    let truth: BTreeSet<usize> = (1..=5).collect();
    let exact = exact_recoveries(ms, &truth);
    let report = cli::build_report(ms).unwrap();
    let mspe = report.prediction.mean;
    outcome(
        exact >= 4 && mspe <= 3.5,
        format!(
            "exact {{1..5}} on {exact}/{} replicates (need 4); mean winner MSPE {mspe:.4} (need <= 3.5); mean |selected| {:.1}",
            ms.len(),
            report.selected_count.mean
        ),
    )
}

fn structure_reproduction(ms: &[RunManifest]) -> Outcome {
    let truth: BTreeSet<usize> = (1..=5).collect();
    let exact = exact_recoveries(ms, &truth);
    let counts: Vec<ConnectionCounts> = ms.iter().filter_map(|m| m.winner().connections).collect();
    let pooled = ConnectionCounts::sum(&counts);
    let ok = exact >= 4 && counts.len() == ms.len() && pooled.nsr() == 0.0 && pooled.fsr() <= 0.3;
    outcome(
        ok,
        format!(
            "exact {{1..5}} on {exact}/{} replicates (need 4); connection NSR {:.4} (need 0), FSR {:.4} (need <= 0.3)",
            ms.len(),
            pooled.nsr(),
            pooled.fsr()
        ),
    )
}

fn classification_reproduction(ms: &[RunManifest]) -> Outcome {
    let truth: BTreeSet<usize> = (1..=4).collect();
    let exact = exact_recoveries(ms, &truth);
    let pa = cli::build_report(ms).unwrap().prediction.mean;
    outcome(
        exact >= 4 && pa >= 0.87,
        format!(
            "exact {{1..4}} on {exact}/{} replicates (need 4); mean winner PA {pa:.4} (need >= 0.87)",
            ms.len()
        ),
    )
}

fn evidence_relationship(ms: &[RunManifest]) -> Outcome {
    let pairs: Vec<(f64, f64)> = ms
        .iter()
        .flat_map(|m| m.tries.iter().map(|t| (t.bic, t.metrics.prediction())))
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    match select::spearman(&a, &b) {
        Ok((rho, p)) => outcome(
            pairs.len() >= 50 && rho < 0.0 && p < 0.01,
            format!("Spearman(BIC, MSPE) {rho:.4}, p {p:.2e} over {} pairs (need >= 50, rho < 0, p < 0.01)", pairs.len()),
        ),
        Err(e) => outcome(false, format!("no correlation over {} pairs: {e}", pairs.len())),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let slow = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var("SBNN_SLOW").is_ok_and(|v| v == "1");

    let fast: [(usize, fn() -> Outcome); 5] = [
        (1, gradient_correctness),
        (2, threshold_identity),
        (3, evidence_oracle),
        (4, reachability_equivalence),
        (5, determinism),
    ];
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    for (n, f) in fast {
        report(n, f());
    }
    if slow {
        let regression = replicates("regression-tanh.toml");
        report(6, regression_reproduction(&regression));
        report(7, structure_reproduction(&replicates("structure-selection.toml")));
        report(8, classification_reproduction(&replicates("classification.toml")));
        report(9, evidence_relationship(&regression));
    } else {
        for n in 6..=9 {
            println!("criterion {n}: SKIPPED (full benchmark; pass --include-ignored or set SBNN_SLOW=1)");
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
