//! The mixture Gaussian prior: log density, inclusion probability and the
//! pruning threshold where the spike and slab contributions are equal.
//!
//! ```text
//! cargo run --example prior_threshold
//! ```

use sparse_bnn::net::{Activation, Arch, ParamVector, Task};
use sparse_bnn::prior::{self, PriorHyper};

fn main() -> sparse_bnn::Result<()> {
    let settings = [
        ("regression / classification", PriorHyper::new(1e-5, 1e-8, 1e-4)?),
        ("structure selection", PriorHyper::from_std(1e-5, 5e-4, 1e-2)?),
        ("wide spike", PriorHyper::new(1e-5, 1e-4, 1e-2)?),
    ];
    for (name, h) in &settings {
        let t = prior::threshold(h);
        println!(
            "{name}: λ = {:e}, σ0² = {:e}, σ1² = {:e}",
            h.lambda(),
            h.sigma0_sq(),
            h.sigma1_sq()
        );
        println!("  threshold {:.6e} (degenerate: {})", t.value, t.degenerate);
        for k in [0.0, 0.5, 0.9, 1.0, 1.1, 2.0] {
            let b = k * t.value;
            println!(
                "  β = {k:>3}·t  inclusion {:.6}  log density {:>12.4}",
                h.inclusion_prob(b),
                h.log_density(b)
            );
        }
    }

    // sparsify keeps exactly the coordinates beyond the threshold
    let h = settings[1].1;
    let t = prior::threshold(&h).value;
    let arch = Arch::new(vec![2, 2, 1], Activation::Tanh, Task::Regression)?;
    let beta = ParamVector::from_flat(&arch, vec![0.3, -1e-4, 2.0 * t, -0.5 * t, 0.0, 1e-2, -0.8, 0.05, 0.0])?;
    let mask = prior::sparsify(&beta, &h);
    println!("β     {:?}", beta.as_slice());
    println!("γ     {}", mask.to_bit_string());
    println!("kept  {} of {}", mask.count(), mask.len());
    Ok(())
}
