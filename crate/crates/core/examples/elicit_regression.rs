//! Sparse network elicitation on a reduced nonlinear regression benchmark.
//!
//! Several tries train a dense network, prune it at the prior threshold,
//! refine the survivors and are scored by Laplace evidence and BIC. The
//! winner's effective inputs are the selected variables.
//!
//! ```text
//! cargo run --release --example elicit_regression -- [p] [n] [tries]
//! ```

use sparse_bnn::data::{self, GeneratorKind, GeneratorSpec};
use sparse_bnn::elicit::{self, ElicitConfig, SelectionMode};
use sparse_bnn::net::{Activation, Arch, Task};
use sparse_bnn::prior::{self, PriorHyper};
use sparse_bnn::select::{self, Sample};
use sparse_bnn::train::SgdConfig;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() -> sparse_bnn::Result<()> {
    let (p, n, tries) = (arg(1, 20), arg(2, 5000), arg(3, 4));
    let spec = GeneratorSpec {
        kind: GeneratorKind::NonlinearRegression,
        p,
        n_train: n,
        n_val: 200,
        n_test: 1000,
        seed: 2024,
    };
    let triple = data::generate(&spec)?;
    let arch = Arch::new(vec![p, 6, 4, 3, 1], Activation::Tanh, Task::Regression)?;
    let hyper = PriorHyper::new(1e-5, 1e-4, 1e-2)?;
    println!("threshold {:.4}", prior::threshold(&hyper).value);

    let cfg = ElicitConfig {
        train: SgdConfig::constant(20_000, 100, 0.005),
        refine: SgdConfig::constant(10_000, 100, 0.005),
        tries,
        selection: SelectionMode::Evidence,
        base_seed: spec.seed,
        second_pass: false,
        hessian_cap: 500,
        workers: 0,
    };
    let report = elicit::run_algorithm1(&arch, &triple.train, hyper, &cfg)?;

    println!("try  |γ|  log_evidence        bic   mspe  variables");
    for t in &report.tries {
        let fit = select::fit_metrics(
            &arch,
            &t.beta_refined,
            &t.mask,
            Sample { x: triple.train.x(), y: &triple.train.y },
            Sample { x: triple.test.x(), y: &triple.test.y },
        )?;
        let ev = t.log_evidence.map_or("-".to_string(), |e| format!("{e:.2}"));
        println!(
            "{:>3} {:>4} {:>13} {:>10.2} {:>6.3}  {:?}",
            t.try_index,
            t.gamma_size,
            ev,
            t.bic_score,
            fit.prediction(),
            t.effective_variables(&arch)
        );
    }
    for f in &report.failures {
        println!("try {} failed: {}", f.try_index, f.message);
    }
    let w = report.winner();
    println!(
        "winner: try {} by {:?} (requested {:?}), variables {:?}",
        w.try_index,
        report.selection_mode,
        report.requested_mode,
        w.effective_variables(&arch)
    );
    Ok(())
}
