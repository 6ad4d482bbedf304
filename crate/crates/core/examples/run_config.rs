//! A reproducible study driven by a run config: load a preset, shrink it
//! to desk size, run every replicate into an output directory with
//! manifests and checkpoints, aggregate a report, and score the winning
//! checkpoint on a held-out CSV.
//!
//! ```text
//! cargo run --release --example run_config -- [output-dir]
//! ```

use std::path::{Path, PathBuf};

use sparse_bnn::cli::{self, ElicitOverrides};
use sparse_bnn::config::{DataSource, RunConfig};
use sparse_bnn::data::{self, GeneratorKind};
use sparse_bnn::net::Arch;
use sparse_bnn::prior::PriorHyper;
use sparse_bnn::train::LrSchedule;

fn main() -> sparse_bnn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sparse-bnn-run"));
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/classification.toml");
    let mut cfg = RunConfig::load(&preset)?;
    let p = 12;
    cfg.arch = Arch::new(vec![p, 6, 4, 3, 1], cfg.arch.activation(), cfg.arch.task())?;
    cfg.prior = PriorHyper::new(1e-5, 1e-4, 1e-2)?;
    cfg.data = DataSource::Generator {
        kind: GeneratorKind::NonlinearClassification,
        p,
        n_train: 3000,
        n_val: 200,
        n_test: 1000,
    };
    cfg.train.iterations = 15_000;
    cfg.train.batch_size = 100;
    cfg.refine.iterations = 5000;
    cfg.refine.batch_size = 100;
    cfg.train.lr_schedule = LrSchedule::Constant { lr: 0.05 };
    cfg.train.prior_start_iter = 5000;
    cfg.refine.lr_schedule = LrSchedule::Constant { lr: 0.02 };
    cfg.train.log_every = 2000;
    cfg.refine.log_every = 2000;
    cfg.tries = 3;
    cfg.replicates = 2;
    cfg.validate()?;

    std::fs::create_dir_all(&out).map_err(|e| sparse_bnn::Error::io(&out, e))?;
    let config_path = out.join("study.toml");
    std::fs::write(&config_path, cfg.to_toml_string()?).map_err(|e| sparse_bnn::Error::io(&config_path, e))?;
    let summary = cli::cmd_elicit(
        &config_path,
        &ElicitOverrides {
            output_dir: Some(out.join("run")),
            ..Default::default()
        },
    )?;
    for m in &summary.replicates {
        let w = m.winner();
        println!(
            "{} (seed {}): winner try {} |γ| {} variables {:?} PA {:.4}",
            m.dataset_id,
            m.seed,
            w.try_index,
            w.gamma_size,
            w.effective_variables,
            w.metrics.prediction()
        );
    }
    let report = cli::cmd_report(&summary.output_dir)?;
    print!("{}", report.render());

    // score the first replicate's winner on its own regenerated test split
    let first = &summary.replicates[0];
    let triple = data::generate(&cfg.generator_spec(0)?)?;
    let test_csv = out.join("test-000.csv");
    data::save_csv(&triple.test, &test_csv)?;
    let checkpoint = summary.output_dir.join("replicate-000").join(&first.winner().checkpoint);
    print!("{}", cli::cmd_eval(&checkpoint, &[test_csv])?.to_csv());
    Ok(())
}
