//! Stochastic gradient ascent on the normalized log-posterior
//!
//! ```text
//! h_n(β) = (1/n) Σ_i log p(y_i | x_i, β) + (1/n) log π(β)
//! ```
//!
//! Minibatch steps use the batch-mean log-likelihood gradient plus `1/n`
//! times the prior gradient, an unbiased estimate of `∇h_n`.

use std::time::Instant;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{self, Arch, Engine, Mask, ParamVector};
use crate::prior::{self, PriorHyper};

/// Random stream used for minibatch shuffling.
pub(crate) const SGD_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr · factor^k` after the k-th milestone has been passed.
    StepDecay { lr: f64, factor: f64, milestones: Vec<usize> },
}

impl LrSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::StepDecay { lr, factor, milestones } => {
                let passed = milestones.iter().take_while(|&&m| m <= iteration).count();
                lr * factor.powi(passed as i32)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let lr = match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::StepDecay { lr, factor, milestones } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(Error::Config(format!("decay factor must be positive, got {factor}")));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!(
                        "milestones must be strictly increasing, got {milestones:?}"
                    )));
                }
                *lr
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

fn default_log_every() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub momentum: f64,
    /// First iteration at which the prior gradient is added.
    #[serde(default)]
    pub prior_start_iter: usize,
    /// Seed of the minibatch stream. Elicitation overrides it per try.
    #[serde(default)]
    pub seed: u64,
    /// Interval between training-log records; 0 disables logging.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl SgdConfig {
    pub fn constant(iterations: usize, batch_size: usize, lr: f64) -> Self {
        SgdConfig {
            iterations,
            batch_size,
            lr_schedule: LrSchedule::Constant { lr },
            momentum: 0.0,
            prior_start_iter: 0,
            seed: 0,
            log_every: default_log_every(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SgdConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.lr_schedule.validate()
    }
}

/// `h_n` for a fixed architecture, dataset and prior, optionally restricted
/// to the coordinates selected by a mask.
///
/// Under a mask the network is evaluated at `β∘γ` and the prior covers the
/// selected coordinates only.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub arch: &'a Arch,
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [f64],
    pub prior: PriorHyper,
    pub mask: Option<&'a Mask>,
}

impl<'a> Objective<'a> {
    pub fn new(arch: &'a Arch, data: &'a Dataset, prior: PriorHyper) -> Result<Self> {
        Objective::from_parts(arch, data.x.view(), &data.y, prior)
    }

    pub fn from_parts(arch: &'a Arch, x: ArrayView2<'a, f64>, y: &'a [f64], prior: PriorHyper) -> Result<Self> {
        net::validate_data(arch, &x, y)?;
        if y.is_empty() {
            return Err(Error::Shape("dataset is empty".into()));
        }
        Ok(Objective {
            arch,
            x,
            y,
            prior,
            mask: None,
        })
    }

    pub fn with_mask<'b>(&self, mask: &'b Mask) -> Result<Objective<'b>>
    where
        'a: 'b,
    {
        if mask.len() != self.arch.n_params() {
            return Err(Error::Shape(format!(
                "mask has {} entries, architecture has {}",
                mask.len(),
                self.arch.n_params()
            )));
        }
        Ok(Objective {
            arch: self.arch,
            x: self.x,
            y: self.y,
            prior: self.prior,
            mask: Some(mask),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn log_prior(&self, beta: &ParamVector) -> f64 {
        match self.mask {
            Some(m) => prior::log_prior_masked(beta, m, &self.prior),
            None => prior::log_prior(beta, &self.prior),
        }
    }

    /// Adds `scale · ∇log π` over the selected coordinates into `grad`.
    fn add_prior_grad(&self, beta: &ParamVector, scale: f64, grad: &mut [f64]) {
        let b = beta.as_slice();
        match self.mask {
            Some(m) => {
                for ((g, &v), &keep) in grad.iter_mut().zip(b).zip(m.as_slice()) {
                    if keep {
                        *g += scale * self.prior.log_density_grad(v);
                    }
                }
            }
            None => {
                for (g, &v) in grad.iter_mut().zip(b) {
                    *g += scale * self.prior.log_density_grad(v);
                }
            }
        }
    }

    /// Exact full-data `h_n(β)`.
    pub fn value(&self, beta: &ParamVector) -> Result<f64> {
        let (sum, _) = net::loglik_sum(self.arch, beta, self.mask, &self.x, self.y, false)?;
        let n = self.n() as f64;
        Ok(sum / n + self.log_prior(beta) / n)
    }

    /// Exact full-data `∇h_n(β)`, zero outside the mask.
    pub fn gradient(&self, beta: &ParamVector) -> Result<ParamVector> {
        Ok(self.value_and_gradient(beta)?.1)
    }

    pub fn value_and_gradient(&self, beta: &ParamVector) -> Result<(f64, ParamVector)> {
        let (sum, grad) = net::loglik_sum(self.arch, beta, self.mask, &self.x, self.y, true)?;
        let n = self.n() as f64;
        let mut grad = grad.expect("gradient requested");
        grad.iter_mut().for_each(|g| *g /= n);
        self.add_prior_grad(beta, 1.0 / n, &mut grad);
        let value = sum / n + self.log_prior(beta) / n;
        Ok((value, ParamVector::from_flat(self.arch, grad)?))
    }

    /// Unbiased minibatch estimate of `∇h_n` over `rows`. Returns the batch
    /// mean log-likelihood alongside.
    pub fn minibatch_gradient(
        &self,
        beta: &ParamVector,
        rows: &[usize],
        with_prior: bool,
        grad: &mut [f64],
    ) -> Result<f64> {
        let engine = Engine::new(self.arch, beta, self.mask)?;
        let mut scratch = engine.scratch();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ll = 0.0;
        for &r in rows {
            let row = self.x.row(r);
            ll += engine.accumulate(&net::row_slice(&row), self.y[r], &mut scratch, grad);
        }
        let m = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        engine.apply_mask(grad);
        if with_prior {
            self.add_prior_grad(beta, 1.0 / self.n() as f64, grad);
        }
        Ok(ll / m)
    }
}

/// Convenience wrapper for [`Objective::value`].
pub fn h_n(obj: &Objective<'_>, beta: &ParamVector) -> Result<f64> {
    obj.value(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    /// Minibatch estimate of `h_n` (prior term included once active).
    pub objective: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ParamVector,
    pub log: Vec<LogRecord>,
}

/// Epoch-wise shuffled minibatches drawn without replacement.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SGD_STREAM);
        BatchSampler {
            rng,
            order: (0..n).collect(),
            pos: n,
            batch,
        }
    }

    /// The next batch; the final batch of an epoch is short when `batch`
    /// does not divide `n`.
    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos = (start + self.batch).min(self.order.len());
        &self.order[start..self.pos]
    }
}

/// Runs `cfg.iterations` ascent steps from `beta0`.
pub fn sgd_maximize(obj: &Objective<'_>, beta0: &ParamVector, cfg: &SgdConfig) -> Result<Trained> {
    cfg.validate()?;
    let n = obj.n();
    if cfg.batch_size > n {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {n} training rows",
            cfg.batch_size
        )));
    }
    let k = obj.arch.n_params();
    if beta0.len() != k {
        return Err(Error::Shape(format!("initial vector has {} entries, expected {k}", beta0.len())));
    }
    let mut beta = match obj.mask {
        Some(m) => beta0.masked(m),
        None => beta0.clone(),
    };
    let mut velocity = vec![0.0; k];
    let mut grad = vec![0.0; k];
    let mut sampler = BatchSampler::new(n, cfg.batch_size, cfg.seed);
    let mut log = Vec::new();
    let start = Instant::now();

    for t in 0..cfg.iterations {
        let with_prior = t >= cfg.prior_start_iter;
        let rows = sampler.next_batch();
        let ll = obj.minibatch_gradient(&beta, rows, with_prior, &mut grad)?;
        if !ll.is_finite() {
            return Err(Error::Diverged { iteration: t, value: ll });
        }
        if cfg.log_every > 0 && t % cfg.log_every == 0 {
            let prior_term = if with_prior { obj.log_prior(&beta) / n as f64 } else { 0.0 };
            let value = ll + prior_term;
            if !value.is_finite() {
                return Err(Error::Diverged { iteration: t, value });
            }
            log.push(LogRecord {
                iteration: t,
                objective: value,
                elapsed_secs: start.elapsed().as_secs_f64(),
            });
        }
        let lr = cfg.lr_schedule.at(t);
        let b = beta.as_mut_slice();
        if cfg.momentum == 0.0 {
            for (bi, gi) in b.iter_mut().zip(&grad) {
                *bi += lr * gi;
            }
        } else {
            for ((bi, vi), gi) in b.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *vi = cfg.momentum * *vi + gi;
                *bi += lr * *vi;
            }
        }
    }
    if !beta.is_finite() {
        return Err(Error::Diverged {
            iteration: cfg.iterations,
            value: f64::NAN,
        });
    }
    Ok(Trained { params: beta, log })
}

/// Refines the selected coordinates of `beta0 ∘ γ`; unselected coordinates
/// stay exactly zero.
pub fn refine(obj: &Objective<'_>, beta0: &ParamVector, cfg: &SgdConfig) -> Result<Trained> {
    if obj.mask.is_none() {
        return Err(Error::Config("refinement needs a mask on the objective".into()));
    }
    sgd_maximize(obj, beta0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, Split};
    use crate::net::{Activation, Task};
    use ndarray::Array2;
    use rand::Rng;

    fn dataset(arch: &Arch, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, arch.inputs()), |_| rng.random_range(-2.0..2.0));
        let y = (0..n)
            .map(|_| match arch.task() {
                Task::Regression => rng.random_range(-1.0..1.0),
                Task::BinaryClassification => f64::from(rng.random::<bool>()),
            })
            .collect();
        Dataset::new(x, y, Split::Train, Provenance::External { path: "mem".into() }).unwrap()
    }

    #[test]
    fn lr_schedule_steps() {
        let s = LrSchedule::StepDecay {
            lr: 0.1,
            factor: 0.1,
            milestones: vec![150, 225],
        };
        assert_eq!(s.at(0), 0.1);
        assert!((s.at(150) - 0.01).abs() < 1e-15);
        assert!((s.at(300) - 0.001).abs() < 1e-15);
        let bad = LrSchedule::StepDecay {
            lr: 0.1,
            factor: 0.1,
            milestones: vec![5, 5],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, 4, 3);
        let mut seen: Vec<usize> = Vec::new();
        for _ in 0..3 {
            seen.extend_from_slice(s.next_batch());
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn zero_iterations_is_identity() {
        let arch = Arch::new(vec![3, 2, 1], Activation::Tanh, Task::Regression).unwrap();
        let data = dataset(&arch, 20, 1);
        let obj = Objective::new(&arch, &data, PriorHyper::default()).unwrap();
        let b0 = net::init_params(&arch, 4);
        let out = sgd_maximize(&obj, &b0, &SgdConfig::constant(0, 5, 0.01)).unwrap();
        assert_eq!(out.params, b0);
    }

    #[test]
    fn rejects_oversized_batch_and_bad_momentum() {
        let arch = Arch::new(vec![3, 2, 1], Activation::Tanh, Task::Regression).unwrap();
        let data = dataset(&arch, 20, 1);
        let obj = Objective::new(&arch, &data, PriorHyper::default()).unwrap();
        let b0 = net::init_params(&arch, 4);
        assert!(sgd_maximize(&obj, &b0, &SgdConfig::constant(5, 21, 0.01)).is_err());
        let mut cfg = SgdConfig::constant(5, 5, 0.01);
        cfg.momentum = 1.0;
        assert!(sgd_maximize(&obj, &b0, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let arch = Arch::new(vec![3, 4, 1], Activation::Relu, Task::Regression).unwrap();
        let mut data = dataset(&arch, 20, 1);
        data.y.iter_mut().for_each(|v| *v *= 1e6);
        let obj = Objective::new(&arch, &data, PriorHyper::new(1.0, 1e-8, 1.0).unwrap()).unwrap();
        let b0 = net::init_params(&arch, 4);
        let err = sgd_maximize(&obj, &b0, &SgdConfig::constant(1000, 5, 10.0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn refine_needs_mask() {
        let arch = Arch::new(vec![3, 2, 1], Activation::Tanh, Task::Regression).unwrap();
        let data = dataset(&arch, 20, 1);
        let obj = Objective::new(&arch, &data, PriorHyper::default()).unwrap();
        assert!(refine(&obj, &ParamVector::zeros(&arch), &SgdConfig::constant(1, 5, 0.1)).is_err());
    }

    #[test]
    fn value_is_loglik_plus_scaled_prior() {
        let arch = Arch::new(vec![4, 3, 1], Activation::Tanh, Task::BinaryClassification).unwrap();
        let data = dataset(&arch, 37, 2);
        let h = PriorHyper::from_std(1e-3, 1e-3, 0.5).unwrap();
        let obj = Objective::new(&arch, &data, h).unwrap();
        let beta = net::init_params(&arch, 8);
        let full = Mask::full(&arch);
        let ll = net::loglik(&arch, &beta, &full, data.x(), &data.y).unwrap();
        let expected = ll + prior::log_prior(&beta, &h) / 37.0;
        assert!((obj.value(&beta).unwrap() - expected).abs() < 1e-12);
    }
}
