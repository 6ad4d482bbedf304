//! One pass of the sparse learning pipeline by hand: seeded initialization,
//! minibatch ascent on `h_n`, pruning at the prior threshold, and
//! refinement of the surviving weights.
//!
//! ```text
//! cargo run --release --example train_and_sparsify
//! ```

use sparse_bnn::data::{self, GeneratorKind, GeneratorSpec};
use sparse_bnn::net::{init_params, Activation, Arch, Task};
use sparse_bnn::prior::{self, PriorHyper};
use sparse_bnn::select::{self, effective_variables};
use sparse_bnn::train::{self, LrSchedule, Objective, SgdConfig};

fn main() -> sparse_bnn::Result<()> {
    let spec = GeneratorSpec {
        kind: GeneratorKind::NonlinearRegression,
        p: 15,
        n_train: 5000,
        n_val: 100,
        n_test: 1000,
        seed: 5,
    };
    let triple = data::generate(&spec)?;
    let arch = Arch::new(vec![15, 6, 4, 3, 1], Activation::Tanh, Task::Regression)?;
    let hyper = PriorHyper::new(1e-5, 1e-4, 1e-2)?;
    let obj = Objective::new(&arch, &triple.train, hyper)?;

    let beta0 = init_params(&arch, 1);
    let mut cfg = SgdConfig::constant(20_000, 100, 0.005).with_seed(1);
    cfg.log_every = 4000;
    let trained = train::sgd_maximize(&obj, &beta0, &cfg)?;
    for rec in &trained.log {
        println!("iter {:>6}  minibatch h_n {:>9.4}", rec.iteration, rec.objective);
    }
    println!("h_n after training {:.4}", obj.value(&trained.params)?);

    let mask = prior::sparsify(&trained.params, &hyper);
    println!(
        "threshold {:.4}: kept {} of {} parameters, variables {:?}",
        prior::threshold(&hyper).value,
        mask.count(),
        mask.len(),
        effective_variables(&arch, &mask)
    );

    let refine_cfg = SgdConfig {
        lr_schedule: LrSchedule::StepDecay {
            lr: 0.005,
            factor: 0.2,
            milestones: vec![8000],
        },
        ..SgdConfig::constant(10_000, 100, 0.005).with_seed(1)
    };
    let masked = obj.with_mask(&mask)?;
    let refined = train::refine(&masked, &trained.params, &refine_cfg)?;
    println!("h_n after refinement {:.4}", masked.value(&refined.params)?);
    let mspe = select::mean_squared_error(&arch, &refined.params, &mask, triple.test.x(), &triple.test.y)?;
    println!("test MSPE {mspe:.4}");
    Ok(())
}
