//! Run configuration: a single TOML file describing the network, prior,
//! optimizer settings, tries, dataset source, replicates and output
//! location of an elicitation study.
//!
//! ```toml
//! tries = 10
//! selection = "evidence"
//! base_seed = 1
//! replicates = 10
//! output_dir = "runs/regression-tanh"
//!
//! [arch]
//! widths = [2000, 6, 4, 3, 1]
//! activation = "tanh"
//! task = "regression"
//!
//! [prior]
//! lambda = 1e-5
//! sigma0_sq = 1e-8
//! sigma1_sq = 1e-4
//!
//! [train]
//! iterations = 80000
//! batch_size = 500
//! lr_schedule = { kind = "constant", lr = 0.005 }
//!
//! [refine]
//! iterations = 40000
//! batch_size = 500
//! lr_schedule = { kind = "constant", lr = 0.005 }
//!
//! [data]
//! source = "generator"
//! kind = "nonlinear_regression"
//! p = 2000
//! n_train = 10000
//! ```
//!
//! Replicate `r` (0-based) uses dataset seed `base_seed + 10000·r`; try `t`
//! of that replicate uses seed `dataset seed + t`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{GeneratorKind, GeneratorSpec};
use crate::elicit::{ElicitConfig, SelectionMode, DEFAULT_HESSIAN_CAP};
use crate::error::{Error, Result};
use crate::net::Arch;
use crate::prior::PriorHyper;
use crate::train::SgdConfig;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SBNN_OUTPUT_ROOT";

/// Seed distance between consecutive replicates.
pub const REPLICATE_SEED_STRIDE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic benchmark regenerated per replicate.
    Generator {
        kind: GeneratorKind,
        p: usize,
        n_train: usize,
        #[serde(default = "default_holdout")]
        n_val: usize,
        #[serde(default = "default_holdout")]
        n_test: usize,
    },
    /// Fixed CSV files with header `x1..xp,y`.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        validation: Option<PathBuf>,
    },
}

fn default_holdout() -> usize {
    1000
}

fn default_replicates() -> usize {
    1
}

fn default_cap() -> usize {
    DEFAULT_HESSIAN_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tries: usize,
    #[serde(default)]
    pub selection: SelectionMode,
    #[serde(default)]
    pub second_pass: bool,
    #[serde(default = "default_cap")]
    pub hessian_cap: usize,
    /// Worker threads for concurrent tries; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub output_dir: PathBuf,
    pub arch: Arch,
    pub prior: PriorHyper,
    pub train: SgdConfig,
    pub refine: SgdConfig,
    pub data: DataSource,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, validates, and resolves relative CSV paths against the
    /// directory of the config file; referenced files must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg =
            RunConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Csv { train, test, validation } = &mut cfg.data {
            for file in [Some(train), Some(test), validation.as_mut()].into_iter().flatten() {
                if file.is_relative() {
                    *file = base.join(&*file);
                }
                if !file.is_file() {
                    return Err(Error::Config(format!("data file {} does not exist", file.display())));
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tries == 0 {
            return Err(Error::Config("tries must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.train.validate()?;
        self.refine.validate()?;
        match &self.data {
            DataSource::Generator { kind, p, n_train, .. } => {
                self.generator_spec(0)?.validate()?;
                if *p != self.arch.inputs() {
                    return Err(Error::Config(format!(
                        "network has {} inputs but the generator produces p = {p}",
                        self.arch.inputs()
                    )));
                }
                if kind.task() != self.arch.task() {
                    return Err(Error::Config(format!(
                        "{kind:?} data needs task {:?}, the network has {:?}",
                        kind.task(),
                        self.arch.task()
                    )));
                }
                for (name, sgd) in [("train", &self.train), ("refine", &self.refine)] {
                    if sgd.batch_size > *n_train {
                        return Err(Error::Config(format!(
                            "{name}.batch_size {} exceeds n_train {n_train}",
                            sgd.batch_size
                        )));
                    }
                }
            }
            DataSource::Csv { .. } => {
                if self.replicates != 1 {
                    return Err(Error::Config("CSV data supports exactly one replicate".into()));
                }
            }
        }
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.base_seed
            .wrapping_add(REPLICATE_SEED_STRIDE.wrapping_mul(replicate as u64))
    }

    /// Generator spec for replicate `r`; an error for CSV data.
    pub fn generator_spec(&self, replicate: usize) -> Result<GeneratorSpec> {
        match &self.data {
            DataSource::Generator {
                kind,
                p,
                n_train,
                n_val,
                n_test,
            } => Ok(GeneratorSpec {
                kind: *kind,
                p: *p,
                n_train: *n_train,
                n_val: *n_val,
                n_test: *n_test,
                seed: self.replicate_seed(replicate),
            }),
            DataSource::Csv { .. } => Err(Error::Config("run reads CSV data, not a generator".into())),
        }
    }

    pub fn elicit_config(&self, replicate: usize) -> ElicitConfig {
        ElicitConfig {
            train: self.train.clone(),
            refine: self.refine.clone(),
            tries: self.tries,
            selection: self.selection,
            base_seed: self.replicate_seed(replicate),
            second_pass: self.second_pass,
            hessian_cap: self.hessian_cap,
            workers: self.workers,
        }
    }

    /// Output directory after applying [`OUTPUT_ROOT_ENV`] to a relative
    /// `output_dir`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
