//! Sparse deep neural networks learned under a mixture Gaussian prior.
//!
//! A dense network is trained by stochastic gradient ascent on the
//! log-posterior, every weight whose magnitude falls below the point where
//! the spike and slab densities cross is pruned, the survivors are refined,
//! and the best of several independent tries is chosen by Laplace-approximated
//! Bayesian evidence or its BIC surrogate. The input variables that keep a
//! path to the output form the selected variable set.
//!
//! Module map:
//!
//! - [`net`]: architectures, parameter vectors, masks, forward/backward passes
//! - [`prior`]: mixture-prior density, inclusion probability, threshold
//! - [`train`]: the objective `h_n` and seeded SGD with refinement
//! - [`elicit`]: tries, Hessians, evidence, BIC, winner selection
//! - [`select`]: effective variables, FSR/NSR, fit metrics
//! - [`data`]: benchmark generators and CSV I/O
//! - [`checkpoint`], [`config`], [`cli`]: files and commands
//!
//! See `examples/` for one runnable program per capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod elicit;
pub mod error;
mod kernels;
pub mod net;
pub mod prior;
pub mod select;
pub mod train;

pub use error::{Error, Result};

use std::path::Path;

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
