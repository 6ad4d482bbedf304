//! Laplace evidence next to its BIC surrogate for networks of different
//! sparsity fitted to the same data.
//!
//! Each candidate mask is refined, the Hessian of `h_n` over its selected
//! coordinates is taken by finite differences of the analytic gradient,
//! and `n·h_n − ½ log det(−(n/2π)H)` is compared with `n·h_n − ½|γ| log n`.
//!
//! ```text
//! cargo run --release --example evidence_vs_bic
//! ```

use sparse_bnn::data::{self, GeneratorKind, GeneratorSpec};
use sparse_bnn::elicit::{bic_score, hessian_restricted, laplace_log_evidence};
use sparse_bnn::net::{init_params, Activation, Arch, Mask, Task};
use sparse_bnn::prior::PriorHyper;
use sparse_bnn::select::effective_variables;
use sparse_bnn::train::{self, LrSchedule, Objective, SgdConfig};

fn main() -> sparse_bnn::Result<()> {
    let spec = GeneratorSpec {
        kind: GeneratorKind::StructureSelection,
        p: 8,
        n_train: 2000,
        n_val: 100,
        n_test: 100,
        seed: 9,
    };
    let triple = data::generate(&spec)?;
    let arch = Arch::new(vec![8, 3, 1], Activation::Tanh, Task::Regression)?;
    // a slab-only prior keeps the Hessian well conditioned on every mask
    let hyper = PriorHyper::new(1.0, 1e-8, 0.1)?;
    let obj = Objective::new(&arch, &triple.train, hyper)?;
    let n = obj.n();

    let full = Mask::full(&arch);
    let mut inputs_1_to_5 = full.clone();
    let mut inputs_1_to_3 = full.clone();
    for j in 0..3 {
        for k in 0..8 {
            let i = arch.weight_index(0, j, k);
            inputs_1_to_5.as_mut_slice()[i] = k < 5;
            inputs_1_to_3.as_mut_slice()[i] = k < 3;
        }
    }

    println!("mask          |γ|  variables                     h_n    log_evidence          bic");
    for (name, mask) in [("all inputs", &full), ("inputs 1..5", &inputs_1_to_5), ("inputs 1..3", &inputs_1_to_3)] {
        let masked = obj.with_mask(mask)?;
        let sgd = SgdConfig::constant(5000, 100, 0.02).with_seed(3);
        let fitted = train::refine(&masked, &init_params(&arch, 3), &sgd)?;
        // full-batch ascent with a decaying step settles on the mode
        let polish = SgdConfig {
            lr_schedule: LrSchedule::StepDecay {
                lr: 0.1,
                factor: 0.5,
                milestones: vec![10_000, 20_000],
            },
            ..SgdConfig::constant(30_000, n, 0.1)
        };
        let fitted = train::refine(&masked, &fitted.params, &polish)?;
        let h = masked.value(&fitted.params)?;
        let (hess, _) = hessian_restricted(&masked, &fitted.params, 500)?;
        let evidence = match laplace_log_evidence(n, h, &hess) {
            Ok((ev, _)) => format!("{ev:.2}"),
            Err(e) => format!("({e})"),
        };
        println!(
            "{name:<12} {:>4}  {:<24} {:>8.4} {:>15} {:>12.2}",
            mask.count(),
            format!("{:?}", effective_variables(&arch, mask)),
            h,
            evidence,
            bic_score(n, h, mask.count())
        );
    }
    Ok(())
}
