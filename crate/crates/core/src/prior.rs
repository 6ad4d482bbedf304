//! Mixture Gaussian prior `λ N(0, σ1²) + (1 − λ) N(0, σ0²)` applied
//! independently to every weight and bias.
//!
//! Everything is evaluated in log space: with `σ0` around `1e-4` the spike
//! density underflows for any weight of ordinary size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Mask, ParamVector};

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HyperRepr {
    lambda: f64,
    sigma0_sq: f64,
    sigma1_sq: f64,
}

/// Prior hyperparameters: inclusion rate `λ`, spike variance `σ0²` and slab
/// variance `σ1²`, with `0 < σ0² < σ1²` and `0 < λ ≤ 1`.
///
/// `λ = 1` is accepted and collapses the mixture to the slab alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperRepr", into = "HyperRepr")]
pub struct PriorHyper {
    lambda: f64,
    sigma0_sq: f64,
    sigma1_sq: f64,
    // log(1-λ) - log σ0 and log λ - log σ1: log-weights of the two
    // components at β = 0, without the common -½log 2π.
    log_spike: f64,
    log_slab: f64,
    // half of 1/σ0² - 1/σ1²
    kappa: f64,
}

impl TryFrom<HyperRepr> for PriorHyper {
    type Error = Error;

    fn try_from(r: HyperRepr) -> Result<Self> {
        PriorHyper::new(r.lambda, r.sigma0_sq, r.sigma1_sq)
    }
}

impl From<PriorHyper> for HyperRepr {
    fn from(h: PriorHyper) -> Self {
        HyperRepr {
            lambda: h.lambda,
            sigma0_sq: h.sigma0_sq,
            sigma1_sq: h.sigma1_sq,
        }
    }
}

impl Default for PriorHyper {
    /// The nonlinear-regression benchmark setting.
    fn default() -> Self {
        PriorHyper::new(1e-5, 1e-8, 1e-4).expect("valid defaults")
    }
}

impl PriorHyper {
    pub fn new(lambda: f64, sigma0_sq: f64, sigma1_sq: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidHyper(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::InvalidHyper(format!("sigma0_sq must be positive, got {sigma0_sq}")));
        }
        if !(sigma1_sq > sigma0_sq && sigma1_sq.is_finite()) {
            return Err(Error::InvalidHyper(format!(
                "need sigma0_sq < sigma1_sq, got {sigma0_sq} and {sigma1_sq}"
            )));
        }
        let log_spike = if lambda < 1.0 {
            (-lambda).ln_1p() - 0.5 * sigma0_sq.ln()
        } else {
            f64::NEG_INFINITY
        };
        let log_slab = lambda.ln() - 0.5 * sigma1_sq.ln();
        Ok(PriorHyper {
            lambda,
            sigma0_sq,
            sigma1_sq,
            log_spike,
            log_slab,
            kappa: 0.5 * (1.0 / sigma0_sq - 1.0 / sigma1_sq),
        })
    }

    /// Same as [`PriorHyper::new`] but from standard deviations.
    pub fn from_std(lambda: f64, sigma0: f64, sigma1: f64) -> Result<Self> {
        PriorHyper::new(lambda, sigma0 * sigma0, sigma1 * sigma1)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma1_sq
    }

    /// `log b̃ − log ã`, the log-odds that `β` came from the slab.
    #[inline]
    pub fn inclusion_logit(&self, beta: f64) -> f64 {
        self.log_slab - self.log_spike + beta * beta * self.kappa
    }

    /// Log mixture density of a single coordinate.
    #[inline]
    pub fn log_density(&self, beta: f64) -> f64 {
        let b2 = beta * beta;
        let spike = self.log_spike - b2 / (2.0 * self.sigma0_sq);
        let slab = self.log_slab - b2 / (2.0 * self.sigma1_sq);
        let (hi, lo) = if spike > slab { (spike, slab) } else { (slab, spike) };
        let tail = if lo == f64::NEG_INFINITY { 0.0 } else { (lo - hi).exp().ln_1p() };
        hi + tail - HALF_LOG_2PI
    }

    /// Derivative of [`PriorHyper::log_density`].
    #[inline]
    pub fn log_density_grad(&self, beta: f64) -> f64 {
        let p = self.inclusion_prob(beta);
        -beta * ((1.0 - p) / self.sigma0_sq + p / self.sigma1_sq)
    }

    /// `π(γ = 1 | β)`.
    #[inline]
    pub fn inclusion_prob(&self, beta: f64) -> f64 {
        let t = self.inclusion_logit(beta);
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    }
}

/// Magnitude at which spike and slab densities cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// The densities never cross (`((1−λ)/λ)(σ1/σ0) ≤ 1`): the slab dominates
    /// everywhere, `value` is 0 and every nonzero weight is kept.
    pub degenerate: bool,
}

pub fn log_prior(beta: &ParamVector, h: &PriorHyper) -> f64 {
    beta.as_slice().iter().map(|&b| h.log_density(b)).sum()
}

/// Log prior over the coordinates selected by `mask` only.
pub fn log_prior_masked(beta: &ParamVector, mask: &Mask, h: &PriorHyper) -> f64 {
    beta.as_slice()
        .iter()
        .zip(mask.as_slice())
        .filter(|(_, &g)| g)
        .map(|(&b, _)| h.log_density(b))
        .sum()
}

pub fn log_prior_grad(beta: &ParamVector, h: &PriorHyper) -> ParamVector {
    let mut g = beta.clone();
    for v in g.as_mut_slice() {
        *v = h.log_density_grad(*v);
    }
    g
}

pub fn inclusion_prob(beta_i: f64, h: &PriorHyper) -> f64 {
    h.inclusion_prob(beta_i)
}

pub fn threshold(h: &PriorHyper) -> Threshold {
    let (s0, s1) = (h.sigma0_sq.sqrt(), h.sigma1_sq.sqrt());
    // log(((1-λ)/λ)(σ1/σ0)) = log ã(0) - log b̃(0)
    let log_arg = h.log_spike - h.log_slab;
    if !(log_arg > 0.0) {
        return Threshold {
            value: 0.0,
            degenerate: true,
        };
    }
    let value = std::f64::consts::SQRT_2 * s0 * s1 / (h.sigma1_sq - h.sigma0_sq).sqrt() * log_arg.sqrt();
    Threshold {
        value,
        degenerate: false,
    }
}

/// `γ_i = 1` iff `|β_i|` is strictly above the threshold.
pub fn sparsify(beta: &ParamVector, h: &PriorHyper) -> Mask {
    let t = threshold(h).value;
    let bits = beta.as_slice().iter().map(|b| b.abs() > t).collect();
    Mask::from_raw(bits)
}
