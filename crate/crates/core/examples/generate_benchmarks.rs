//! Writes the three synthetic benchmarks (structure selection, nonlinear
//! regression, nonlinear classification) as CSV with a manifest, then
//! reads one split back.
//!
//! ```text
//! cargo run --release --example generate_benchmarks -- [output-dir]
//! ```

use std::path::PathBuf;

use sparse_bnn::data::{self, CsvSchema, GeneratorKind, GeneratorSpec, Split};

fn main() -> sparse_bnn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sparse-bnn-benchmarks"));
    let benchmarks = [
        ("structure", GeneratorKind::StructureSelection, 1000),
        ("regression", GeneratorKind::NonlinearRegression, 2000),
        ("classification", GeneratorKind::NonlinearClassification, 1000),
    ];
    for (name, kind, p) in benchmarks {
        let spec = GeneratorSpec {
            kind,
            p,
            n_train: 10_000,
            n_val: 1000,
            n_test: 1000,
            seed: 1,
        };
        let triple = data::generate(&spec)?;
        let dir = out.join(name);
        let manifest = data::write_triple(&triple, &spec, &dir)?;
        let y = &triple.train.y;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        println!("{name}: p = {p}, active variables 1..={}", kind.active_variables());
        for f in &manifest.files {
            println!("  {} ({} rows)", dir.join(&f.file).display(), f.rows);
        }
        println!("  training response mean {mean:.4}, variance {var:.4}");
    }

    let test = data::load_csv(
        &out.join("classification/test.csv"),
        CsvSchema {
            p: Some(1000),
            binary_response: true,
            split: Some(Split::Test),
        },
    )?;
    let positives = test.y.iter().filter(|&&v| v == 1.0).count();
    println!("classification test split read back: {} rows, {positives} positive", test.n());
    Ok(())
}
