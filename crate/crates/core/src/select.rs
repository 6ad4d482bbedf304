//! Variable and structure selection from masks, and evaluation metrics.
//!
//! Variable numbers are 1-based, matching the `x1..xp` column names.

use std::collections::BTreeSet;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{self, Arch, Mask, ParamVector, Task};

/// Known truth of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTruth {
    pub true_variables: BTreeSet<usize>,
    /// Generating network's weight indicators, for benchmarks where the
    /// data come from a known network.
    pub true_connections: Option<(Arch, Mask)>,
}

impl SelectionTruth {
    pub fn new(true_variables: BTreeSet<usize>, true_connections: Option<(Arch, Mask)>, p: usize) -> Result<Self> {
        if let Some(&bad) = true_variables.iter().find(|&&v| v == 0 || v > p) {
            return Err(Error::Config(format!("true variable {bad} outside 1..={p}")));
        }
        Ok(SelectionTruth {
            true_variables,
            true_connections,
        })
    }
}

/// Input variables with at least one active weight path to the output.
///
/// Equivalent to the positive entries of the integer product of the layer
/// weight-indicator matrices (biases excluded), evaluated as boolean
/// reachability so deep networks cannot overflow a path count.
pub fn effective_variables(arch: &Arch, mask: &Mask) -> BTreeSet<usize> {
    let depth = arch.depth();
    // reach[j]: unit j of the current layer has an active path to the output
    let mut reach = vec![true; 1];
    for h in (0..depth).rev() {
        let l = &arch.layers()[h];
        let w = mask.weights(arch, h);
        let mut below = vec![false; l.cols];
        for (j, _) in reach.iter().enumerate().filter(|(_, &r)| r) {
            let row = &w[j * l.cols..(j + 1) * l.cols];
            for (k, &on) in row.iter().enumerate() {
                below[k] |= on;
            }
        }
        reach = below;
    }
    reach
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| r.then_some(i + 1))
        .collect()
}

/// Pooled false and negative selection rates over replicates.
///
/// `FSR = Σ|Ŝ_i \ S| / Σ|Ŝ_i|` (0 when nothing was selected anywhere) and
/// `NSR = Σ|S \ Ŝ_i| / Σ|S|`.
pub fn fsr_nsr<T: Ord>(truth: &BTreeSet<T>, selected: &[BTreeSet<T>]) -> (f64, f64) {
    let mut false_sel = 0usize;
    let mut total_sel = 0usize;
    let mut missed = 0usize;
    for s in selected {
        false_sel += s.difference(truth).count();
        total_sel += s.len();
        missed += truth.difference(s).count();
    }
    let total_true = truth.len() * selected.len();
    let fsr = if total_sel == 0 { 0.0 } else { false_sel as f64 / total_sel as f64 };
    let nsr = if total_true == 0 { 0.0 } else { missed as f64 / total_true as f64 };
    (fsr, nsr)
}

/// A weight connection: `(layer, unit, input)`, all 0-based.
pub type Connection = (usize, usize, usize);

pub fn connections(arch: &Arch, mask: &Mask) -> BTreeSet<Connection> {
    let mut out = BTreeSet::new();
    for (h, l) in arch.layers().iter().enumerate() {
        let w = mask.weights(arch, h);
        for j in 0..l.rows {
            for k in 0..l.cols {
                if w[j * l.cols + k] {
                    out.insert((h, j, k));
                }
            }
        }
    }
    out
}

/// Hidden-unit relabelling, one permutation per hidden layer;
/// `perm[h][j]` is the new index of unit `j` of hidden layer `h`.
pub type UnitPermutation = Vec<Vec<usize>>;

/// Applies a hidden-unit permutation to a connection set.
pub fn permute_connections(arch: &Arch, conns: &BTreeSet<Connection>, perm: &UnitPermutation) -> BTreeSet<Connection> {
    let hidden = arch.depth() - 1;
    conns
        .iter()
        .map(|&(h, j, k)| {
            let j2 = if h < hidden { perm[h][j] } else { j };
            let k2 = if h > 0 { perm[h - 1][k] } else { k };
            (h, j2, k2)
        })
        .collect()
}

const MAX_JOINT_PERMUTATIONS: usize = 1_000_000;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Relabels the fitted network's hidden units to best match the true
/// structure, minimizing the symmetric difference of weight connections.
///
/// The search is exhaustive over all joint permutations when there are at
/// most a million of them, and otherwise proceeds one hidden layer at a
/// time from the input side. Ties keep the lexicographically first
/// permutation.
pub fn align_connections(arch: &Arch, fitted: &Mask, truth: &Mask) -> (BTreeSet<Connection>, UnitPermutation) {
    let fitted_set = connections(arch, fitted);
    let true_set = connections(arch, truth);
    let hidden: Vec<usize> = arch.widths()[1..arch.depth()].to_vec();
    let identity: UnitPermutation = hidden.iter().map(|&w| (0..w).collect()).collect();
    let cost = |perm: &UnitPermutation| {
        permute_connections(arch, &fitted_set, perm)
            .symmetric_difference(&true_set)
            .count()
    };

    let joint = hidden
        .iter()
        .try_fold(1usize, |acc, &w| (1..=w).try_fold(acc, |a, i| a.checked_mul(i)))
        .filter(|&c| c <= MAX_JOINT_PERMUTATIONS);

    let best = if joint.is_some() {
        let per_layer: Vec<Vec<Vec<usize>>> = hidden.iter().map(|&w| permutations(w)).collect();
        let mut idx = vec![0usize; hidden.len()];
        let mut best = (usize::MAX, identity.clone());
        loop {
            let perm: UnitPermutation = idx.iter().zip(&per_layer).map(|(&i, ps)| ps[i].clone()).collect();
            let c = cost(&perm);
            if c < best.0 {
                best = (c, perm);
            }
            // odometer over layers, last layer fastest
            let mut h = hidden.len();
            loop {
                if h == 0 {
                    return (permute_connections(arch, &fitted_set, &best.1), best.1);
                }
                h -= 1;
                idx[h] += 1;
                if idx[h] < per_layer[h].len() {
                    break;
                }
                idx[h] = 0;
            }
        }
    } else {
        let mut perm = identity;
        for h in 0..hidden.len() {
            let mut best = (usize::MAX, perm[h].clone());
            for cand in permutations(hidden[h].min(8)) {
                // layers wider than 8 units only permute their first 8
                let mut full: Vec<usize> = (0..hidden[h]).collect();
                full[..cand.len()].copy_from_slice(&cand);
                let mut trial = perm.clone();
                trial[h] = full.clone();
                let c = cost(&trial);
                if c < best.0 {
                    best = (c, full);
                }
            }
            perm[h] = best.1;
        }
        perm
    };
    (permute_connections(arch, &fitted_set, &best), best)
}

/// Connection-level selection counts after hidden-unit alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConnectionCounts {
    pub selected: usize,
    pub false_selected: usize,
    pub missed: usize,
    pub true_total: usize,
}

impl ConnectionCounts {
    /// Pools counts over replicates.
    pub fn sum<'a>(items: impl IntoIterator<Item = &'a ConnectionCounts>) -> ConnectionCounts {
        items.into_iter().fold(ConnectionCounts::default(), |a, c| ConnectionCounts {
            selected: a.selected + c.selected,
            false_selected: a.false_selected + c.false_selected,
            missed: a.missed + c.missed,
            true_total: a.true_total + c.true_total,
        })
    }

    pub fn fsr(&self) -> f64 {
        if self.selected == 0 {
            0.0
        } else {
            self.false_selected as f64 / self.selected as f64
        }
    }

    pub fn nsr(&self) -> f64 {
        if self.true_total == 0 {
            0.0
        } else {
            self.missed as f64 / self.true_total as f64
        }
    }
}

/// Aligns `fitted` to the true network and counts false and missed weight
/// connections. `None` when the architectures differ.
pub fn connection_counts(arch: &Arch, fitted: &Mask, truth: &(Arch, Mask)) -> Option<ConnectionCounts> {
    let (true_arch, true_mask) = truth;
    if true_arch.widths() != arch.widths() {
        return None;
    }
    let (aligned, _) = align_connections(arch, fitted, true_mask);
    let true_set = connections(arch, true_mask);
    Some(ConnectionCounts {
        selected: aligned.len(),
        false_selected: aligned.difference(&true_set).count(),
        missed: true_set.difference(&aligned).count(),
        true_total: true_set.len(),
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (ties get average ranks) and its two-sided
/// p-value from the t approximation with `n − 2` degrees of freedom.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::Shape(format!(
            "need two samples of equal length at least 3, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Shape("a sample is constant, so its ranks carry no order".into()));
    }
    let rho = sab / (saa * sbb).sqrt();
    let df = n - 2.0;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Shape(e.to_string()))?;
        2.0 * dist.cdf(-t.abs())
    };
    Ok((rho, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum FitMetrics {
    Regression { msfe: f64, mspe: f64 },
    Classification { fa: f64, pa: f64 },
}

impl FitMetrics {
    /// The held-out metric: MSPE or PA.
    pub fn prediction(&self) -> f64 {
        match *self {
            FitMetrics::Regression { mspe, .. } => mspe,
            FitMetrics::Classification { pa, .. } => pa,
        }
    }

    /// The in-sample metric: MSFE or FA.
    pub fn fitting(&self) -> f64 {
        match *self {
            FitMetrics::Regression { msfe, .. } => msfe,
            FitMetrics::Classification { fa, .. } => fa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fsr: Option<f64>,
    pub nsr: Option<f64>,
    pub fit: FitMetrics,
    pub selected_count: usize,
}

pub fn mean_squared_error(arch: &Arch, beta: &ParamVector, mask: &Mask, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<f64> {
    let mu = net::forward(arch, beta, mask, x)?;
    if y.len() != mu.len() {
        return Err(Error::Shape(format!("{} responses for {} rows", y.len(), mu.len())));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(mu.iter().zip(y).map(|(m, v)| (v - m) * (v - m)).sum::<f64>() / y.len() as f64)
}

/// Fraction of rows where `μ > 0` agrees with `y = 1`; `μ = 0` predicts 0.
pub fn accuracy(arch: &Arch, beta: &ParamVector, mask: &Mask, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<f64> {
    let mu = net::forward(arch, beta, mask, x)?;
    if y.len() != mu.len() {
        return Err(Error::Shape(format!("{} responses for {} rows", y.len(), mu.len())));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let hits = mu.iter().zip(y).filter(|(&m, &v)| (m > 0.0) == (v == 1.0)).count();
    Ok(hits as f64 / y.len() as f64)
}

pub struct Sample<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [f64],
}

pub fn regression_metrics(arch: &Arch, beta: &ParamVector, mask: &Mask, train: Sample<'_>, test: Sample<'_>) -> Result<(f64, f64)> {
    Ok((
        mean_squared_error(arch, beta, mask, train.x, train.y)?,
        mean_squared_error(arch, beta, mask, test.x, test.y)?,
    ))
}

pub fn classification_metrics(arch: &Arch, beta: &ParamVector, mask: &Mask, train: Sample<'_>, test: Sample<'_>) -> Result<(f64, f64)> {
    Ok((
        accuracy(arch, beta, mask, train.x, train.y)?,
        accuracy(arch, beta, mask, test.x, test.y)?,
    ))
}

/// MSFE/MSPE or FA/PA depending on the network's task.
pub fn fit_metrics(arch: &Arch, beta: &ParamVector, mask: &Mask, train: Sample<'_>, test: Sample<'_>) -> Result<FitMetrics> {
    Ok(match arch.task() {
        Task::Regression => {
            let (msfe, mspe) = regression_metrics(arch, beta, mask, train, test)?;
            FitMetrics::Regression { msfe, mspe }
        }
        Task::BinaryClassification => {
            let (fa, pa) = classification_metrics(arch, beta, mask, train, test)?;
            FitMetrics::Classification { fa, pa }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Task};

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn effective_variables_examples() {
        let arch = Arch::new(vec![3, 2, 1], Activation::Tanh, Task::Regression).unwrap();
        assert_eq!(effective_variables(&arch, &Mask::full(&arch)), set(&[1, 2, 3]));
        assert!(effective_variables(&arch, &Mask::empty(&arch)).is_empty());
        // w1 = [[1,0,0],[0,0,1]], b1 = [0,0], w2 = [[1,0]], b2 = [0]
        let bits = [1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0].map(|b| b == 1).to_vec();
        let m = Mask::from_flat(&arch, bits).unwrap();
        assert_eq!(effective_variables(&arch, &m), set(&[1]));
    }

    #[test]
    fn biases_do_not_make_variables_effective() {
        let arch = Arch::new(vec![2, 2, 1], Activation::Tanh, Task::Regression).unwrap();
        let mut m = Mask::empty(&arch);
        for l in arch.layers() {
            for i in l.bias_range() {
                m.as_mut_slice()[i] = true;
            }
        }
        assert!(effective_variables(&arch, &m).is_empty());
    }

    #[test]
    fn fsr_nsr_examples() {
        let s = set(&[1, 2, 3, 4, 5]);
        assert_eq!(fsr_nsr(&s, &[s.clone(), s.clone()]), (0.0, 0.0));
        let (f, n) = fsr_nsr(&s, &[set(&[1, 2, 3, 6])]);
        assert!((f - 0.25).abs() < 1e-15);
        assert!((n - 0.4).abs() < 1e-15);
        assert_eq!(fsr_nsr(&s, &[set(&[])]), (0.0, 1.0));
    }

    #[test]
    fn alignment_undoes_a_relabelling() {
        let (arch, truth) = crate::data::structure_true_mask(8).unwrap();
        let true_set = connections(&arch, &truth);
        let perm: UnitPermutation = vec![vec![4, 2, 0, 1, 3], vec![2, 0, 1]];
        let scrambled = permute_connections(&arch, &true_set, &perm);
        let mut m = Mask::empty(&arch);
        for &(h, j, k) in &scrambled {
            m.as_mut_slice()[arch.weight_index(h, j, k)] = true;
        }
        let (aligned, _) = align_connections(&arch, &m, &truth);
        assert_eq!(aligned, true_set);
    }

    #[test]
    fn accuracy_tie_rule() {
        let arch = Arch::new(vec![1, 1, 1], Activation::Tanh, Task::BinaryClassification).unwrap();
        let zero = ParamVector::zeros(&arch);
        let x = ndarray::array![[0.1], [0.2], [0.3], [0.4]];
        let acc = accuracy(&arch, &zero, &Mask::full(&arch), x.view(), &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(acc, 0.5);
        let acc = accuracy(&arch, &zero, &Mask::full(&arch), x.view(), &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(acc, 0.75);
    }
}
