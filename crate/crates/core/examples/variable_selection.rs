//! Variable and structure selection from sparse masks: effective inputs,
//! pooled false and negative selection rates, and connection-level rates
//! after aligning hidden units with the generating network.
//!
//! ```text
//! cargo run --release --example variable_selection
//! ```

use std::collections::BTreeSet;

use sparse_bnn::data::{self, GeneratorKind, GeneratorSpec};
use sparse_bnn::net::{init_params, Mask};
use sparse_bnn::prior::{self, PriorHyper};
use sparse_bnn::select::{self, connection_counts, effective_variables, ConnectionCounts};
use sparse_bnn::train::{self, Objective, SgdConfig};

fn main() -> sparse_bnn::Result<()> {
    let p = 20;
    let truth = data::truth(GeneratorKind::StructureSelection, p)?;
    let (arch, true_mask) = truth.true_connections.clone().expect("structure benchmark has a network truth");
    println!(
        "true variables {:?}, true connections {}",
        truth.true_variables,
        select::connections(&arch, &true_mask).len()
    );

    let hyper = PriorHyper::new(1e-5, 1e-4, 1e-2)?;
    let mut selected: Vec<BTreeSet<usize>> = Vec::new();
    let mut counts: Vec<ConnectionCounts> = Vec::new();
    for replicate in 0..3u64 {
        let spec = GeneratorSpec {
            kind: GeneratorKind::StructureSelection,
            p,
            n_train: 5000,
            n_val: 100,
            n_test: 100,
            seed: 100 + replicate,
        };
        let triple = data::generate(&spec)?;
        let obj = Objective::new(&arch, &triple.train, hyper)?;
        let cfg = SgdConfig::constant(30_000, 100, 0.01).with_seed(spec.seed);
        let trained = train::sgd_maximize(&obj, &init_params(&arch, spec.seed), &cfg)?;
        let first: Mask = prior::sparsify(&trained.params, &hyper);
        let refined = train::refine(&obj.with_mask(&first)?, &trained.params, &cfg)?;
        let mask = prior::sparsify(&refined.params, &hyper).and(&first);

        let vars = effective_variables(&arch, &mask);
        let c = connection_counts(&arch, &mask, &(arch.clone(), true_mask.clone())).expect("same shape");
        println!(
            "replicate {replicate}: |γ| {} -> {}, variables {:?}, connections {} ({} false, {} missed)",
            first.count(),
            mask.count(),
            vars,
            c.selected,
            c.false_selected,
            c.missed
        );
        selected.push(vars);
        counts.push(c);
    }
    let (fsr, nsr) = select::fsr_nsr(&truth.true_variables, &selected);
    let pooled = ConnectionCounts::sum(&counts);
    println!("variables:   FSR {fsr:.3}  NSR {nsr:.3}");
    println!("connections: FSR {:.3}  NSR {:.3}", pooled.fsr(), pooled.nsr());
    Ok(())
}
