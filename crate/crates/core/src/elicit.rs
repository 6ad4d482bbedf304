//! Sparse network elicitation: `T` independent tries of
//! train → sparsify → refine → score, and selection of the best try.
//!
//! Each try is scored by its Laplace-approximated log evidence
//!
//! ```text
//! log Z ≈ n·h_n(β̃) − ½ log det(−(n/2π) H_n(β̃))
//! ```
//!
//! where `H_n` is the Hessian of `h_n` restricted to the selected
//! coordinates, or by the BIC surrogate `n·h_n(β̃) − ½|γ| log n`.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{self, Arch, Mask, ParamVector};
use crate::prior::{self, PriorHyper};
use crate::select;
use crate::train::{self, LogRecord, Objective, SgdConfig};

pub const DEFAULT_HESSIAN_CAP: usize = 5000;

/// Relative jitter levels tried, in order, when `−H` is not numerically
/// positive definite. Scaled by the mean absolute diagonal.
const JITTERS: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Evidence,
    #[default]
    Bic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitConfig {
    pub train: SgdConfig,
    pub refine: SgdConfig,
    pub tries: usize,
    #[serde(default)]
    pub selection: SelectionMode,
    #[serde(default)]
    pub base_seed: u64,
    /// Sparsify once more after refinement and refine the survivors again.
    #[serde(default)]
    pub second_pass: bool,
    #[serde(default = "default_cap")]
    pub hessian_cap: usize,
    /// Worker threads for concurrent tries; 0 uses the global pool.
    #[serde(default)]
    pub workers: usize,
}

fn default_cap() -> usize {
    DEFAULT_HESSIAN_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum HessianStatus {
    /// `−H` factorized, possibly after adding `jitter` to its diagonal.
    Ok { jitter: f64, asymmetry: f64 },
    /// Nothing selected; the evidence is `n·h_n`.
    Empty,
    /// More selected coordinates than the cap.
    Skipped { size: usize, cap: usize },
    NotNegativeDefinite { asymmetry: f64 },
}

#[derive(Debug, Clone)]
pub struct TryResult {
    /// 1-based.
    pub try_index: usize,
    pub seed: u64,
    pub beta_refined: ParamVector,
    pub mask: Mask,
    /// Structure from the first sparsification, before any second pass.
    pub first_mask: Mask,
    pub h_n: f64,
    pub log_evidence: Option<f64>,
    pub bic_score: f64,
    pub gamma_size: usize,
    /// `|γ| / K_n`.
    pub sparsity: f64,
    pub hessian: HessianStatus,
    pub train_log: Vec<LogRecord>,
    pub refine_log: Vec<LogRecord>,
}

impl TryResult {
    pub fn score(&self, mode: SelectionMode) -> Option<f64> {
        match mode {
            SelectionMode::Evidence => self.log_evidence,
            SelectionMode::Bic => Some(self.bic_score),
        }
    }

    pub fn effective_variables(&self, arch: &Arch) -> BTreeSet<usize> {
        select::effective_variables(arch, &self.mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TryFailure {
    pub try_index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ElicitReport {
    pub tries: Vec<TryResult>,
    pub failures: Vec<TryFailure>,
    /// `try_index` of the selected try.
    pub winner: usize,
    pub requested_mode: SelectionMode,
    /// Mode actually used; evidence falls back to BIC when any successful
    /// try lacks an evidence value.
    pub selection_mode: SelectionMode,
}

impl ElicitReport {
    pub fn winner(&self) -> &TryResult {
        self.tries
            .iter()
            .find(|t| t.try_index == self.winner)
            .expect("winner is one of the tries")
    }
}

/// Candidate for winner selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub try_index: usize,
    pub score: f64,
    pub gamma_size: usize,
}

/// Largest score; ties go to the smaller `|γ|`, then the smaller index.
pub fn select_winner(cands: &[Candidate]) -> Option<usize> {
    cands
        .iter()
        .filter(|c| !c.score.is_nan())
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.gamma_size.cmp(&b.gamma_size))
                .then(a.try_index.cmp(&b.try_index))
        })
        .map(|c| c.try_index)
}

pub fn bic_score(n: usize, h_value: f64, gamma_size: usize) -> f64 {
    let n = n as f64;
    n * h_value - 0.5 * gamma_size as f64 * n.ln()
}

/// Central-difference Hessian of a gradient function, returned symmetrized
/// together with `max |H − Hᵀ|` before symmetrization. The step for
/// coordinate `i` is `1e-4 · max(1, |x_i|)`.
pub fn fd_hessian<F>(mut grad: F, point: &[f64]) -> Result<(DMatrix<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let d = point.len();
    let mut h = DMatrix::zeros(d, d);
    let mut x = point.to_vec();
    for i in 0..d {
        let step = 1e-4 * point[i].abs().max(1.0);
        x[i] = point[i] + step;
        let up = grad(&x)?;
        x[i] = point[i] - step;
        let down = grad(&x)?;
        x[i] = point[i];
        for j in 0..d {
            h[(j, i)] = (up[j] - down[j]) / (2.0 * step);
        }
    }
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
            let m = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = m;
            h[(j, i)] = m;
        }
    }
    Ok((h, asym))
}

/// Hessian of `h_n` with respect to the coordinates selected by the
/// objective's mask, in ascending flat-index order.
pub fn hessian_restricted(obj: &Objective<'_>, beta: &ParamVector, cap: usize) -> Result<(DMatrix<f64>, f64)> {
    let mask = obj
        .mask
        .ok_or_else(|| Error::Config("restricted Hessian needs a masked objective".into()))?;
    let idx = mask.selected_indices();
    if idx.len() > cap {
        return Err(Error::HessianTooLarge { size: idx.len(), cap });
    }
    let base = beta.masked(mask);
    let point: Vec<f64> = idx.iter().map(|&i| base.as_slice()[i]).collect();
    let mut work = base.clone();
    fd_hessian(
        |sel| {
            for (&i, &v) in idx.iter().zip(sel) {
                work.as_mut_slice()[i] = v;
            }
            let g = obj.gradient(&work)?;
            Ok(idx.iter().map(|&i| g.as_slice()[i]).collect())
        },
        &point,
    )
}

/// `n·h − ½ log det((n/2π)(−H))` via Cholesky. Returns the jitter that was
/// needed alongside.
pub fn laplace_log_evidence(n: usize, h_value: f64, hessian: &DMatrix<f64>) -> Result<(f64, f64)> {
    let d = hessian.nrows();
    let nh = n as f64 * h_value;
    if d == 0 {
        return Ok((nh, 0.0));
    }
    let a = hessian * (-(n as f64) / (2.0 * std::f64::consts::PI));
    let scale = (0..d).map(|i| a[(i, i)].abs()).sum::<f64>() / d as f64;
    let mut last = 0.0;
    for rel in JITTERS {
        let jitter = rel * scale;
        last = jitter;
        let mut m = a.clone();
        for i in 0..d {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            let l = chol.l_dirty();
            let logdet: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
            if logdet.is_finite() {
                return Ok((nh - 0.5 * logdet, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Laplace log evidence of a masked objective at `beta`.
pub fn log_evidence(obj: &Objective<'_>, beta: &ParamVector, hessian: &DMatrix<f64>) -> Result<f64> {
    let h = obj.value(beta)?;
    Ok(laplace_log_evidence(obj.n(), h, hessian)?.0)
}

fn score_try(obj: &Objective<'_>, beta: &ParamVector, cap: usize) -> Result<(f64, Option<f64>, HessianStatus)> {
    let mask = obj.mask.expect("masked objective");
    let h = obj.value(beta)?;
    let size = mask.count();
    if size == 0 {
        return Ok((h, Some(obj.n() as f64 * h), HessianStatus::Empty));
    }
    if size > cap {
        return Ok((h, None, HessianStatus::Skipped { size, cap }));
    }
    let (hess, asymmetry) = hessian_restricted(obj, beta, cap)?;
    match laplace_log_evidence(obj.n(), h, &hess) {
        Ok((ev, jitter)) => Ok((h, Some(ev), HessianStatus::Ok { jitter, asymmetry })),
        Err(Error::NotPositiveDefinite { .. }) => Ok((h, None, HessianStatus::NotNegativeDefinite { asymmetry })),
        Err(e) => Err(e),
    }
}

/// One try with the given seed; `try_index` is only recorded.
pub fn run_try(
    arch: &Arch,
    data: &Dataset,
    hyper: PriorHyper,
    cfg: &ElicitConfig,
    try_index: usize,
    seed: u64,
) -> Result<TryResult> {
    let obj = Objective::new(arch, data, hyper)?;
    let beta0 = net::init_params(arch, seed);
    let trained = train::sgd_maximize(&obj, &beta0, &cfg.train.with_seed(seed))?;
    let first_mask = prior::sparsify(&trained.params, &hyper);

    let refined = train::refine(&obj.with_mask(&first_mask)?, &trained.params, &cfg.refine.with_seed(seed))?;
    let mut refine_log = refined.log;
    let (mask, beta) = if cfg.second_pass {
        let second = prior::sparsify(&refined.params, &hyper).and(&first_mask);
        if second != first_mask {
            let again = train::refine(&obj.with_mask(&second)?, &refined.params, &cfg.refine.with_seed(seed))?;
            refine_log.extend(again.log);
            (second, again.params)
        } else {
            (first_mask.clone(), refined.params)
        }
    } else {
        (first_mask.clone(), refined.params)
    };

    let masked = obj.with_mask(&mask)?;
    let (h, log_evidence, hessian) = score_try(&masked, &beta, cfg.hessian_cap)?;
    let gamma_size = mask.count();
    Ok(TryResult {
        try_index,
        seed,
        bic_score: bic_score(obj.n(), h, gamma_size),
        beta_refined: beta,
        first_mask,
        h_n: h,
        log_evidence,
        gamma_size,
        sparsity: gamma_size as f64 / arch.n_params() as f64,
        hessian,
        mask,
        train_log: trained.log,
        refine_log,
    })
}

/// Runs all tries (try `t` uses seed `base_seed + t`) and picks the winner.
pub fn run_algorithm1(arch: &Arch, data: &Dataset, hyper: PriorHyper, cfg: &ElicitConfig) -> Result<ElicitReport> {
    if cfg.tries == 0 {
        return Err(Error::Config("need at least one try".into()));
    }
    cfg.train.validate()?;
    cfg.refine.validate()?;
    let run = || -> Vec<(usize, u64, Result<TryResult>)> {
        (1..=cfg.tries)
            .into_par_iter()
            .map(|t| {
                let seed = cfg.base_seed.wrapping_add(t as u64);
                (t, seed, run_try(arch, data, hyper, cfg, t, seed))
            })
            .collect()
    };
    let outcomes = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(run)
    } else {
        run()
    };

    let mut tries = Vec::new();
    let mut failures = Vec::new();
    for (t, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => tries.push(r),
            Err(e) => failures.push(TryFailure {
                try_index: t,
                seed,
                message: e.to_string(),
            }),
        }
    }
    if tries.is_empty() {
        return Err(Error::AllTriesFailed(cfg.tries));
    }
    let selection_mode = match cfg.selection {
        SelectionMode::Evidence if tries.iter().all(|t| t.log_evidence.is_some()) => SelectionMode::Evidence,
        _ => SelectionMode::Bic,
    };
    let cands: Vec<Candidate> = tries
        .iter()
        .map(|t| Candidate {
            try_index: t.try_index,
            score: t.score(selection_mode).expect("mode has scores for all tries"),
            gamma_size: t.gamma_size,
        })
        .collect();
    let winner = select_winner(&cands).ok_or(Error::AllTriesFailed(cfg.tries))?;
    Ok(ElicitReport {
        tries,
        failures,
        winner,
        requested_mode: cfg.selection,
        selection_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_arithmetic() {
        assert!((bic_score(100, -1.0, 1) - (-100.0 - 0.5 * 100f64.ln())).abs() < 1e-12);
        assert!((bic_score(100, -1.0, 1) + 102.3026).abs() < 1e-4);
        assert_eq!(bic_score(100, -1.0, 0), -100.0);
    }

    #[test]
    fn empty_selection_evidence() {
        let (ev, jitter) = laplace_log_evidence(50, -2.0, &DMatrix::zeros(0, 0)).unwrap();
        assert_eq!(ev, -100.0);
        assert_eq!(jitter, 0.0);
    }

    #[test]
    fn indefinite_hessian_is_flagged() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 3.0]);
        assert!(matches!(
            laplace_log_evidence(10, 0.0, &h),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn winner_ties() {
        let c = |try_index, score, gamma_size| Candidate {
            try_index,
            score,
            gamma_size,
        };
        assert_eq!(select_winner(&[c(1, -5.0, 3)]), Some(1));
        assert_eq!(select_winner(&[c(1, -5.0, 3), c(2, -4.0, 9)]), Some(2));
        assert_eq!(select_winner(&[c(1, -4.0, 9), c(2, -4.0, 3)]), Some(2));
        assert_eq!(select_winner(&[c(3, -4.0, 3), c(2, -4.0, 3)]), Some(2));
        assert_eq!(select_winner(&[]), None);
    }

    #[test]
    fn quadratic_hessian_diagonal() {
        let a = [0.5, 2.0, 7.0];
        let m = [0.1, -3.0, 40.0];
        let (h, asym) = fd_hessian(
            |x| Ok(x.iter().zip(a.iter().zip(&m)).map(|(xi, (ai, mi))| -2.0 * ai * (xi - mi)).collect()),
            &[0.0, 1.0, 100.0],
        )
        .unwrap();
        assert!(asym < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { -2.0 * a[i] } else { 0.0 };
                assert!((h[(i, j)] - want).abs() < 1e-6);
            }
        }
    }
}
