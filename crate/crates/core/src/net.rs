//! Dense and masked multilayer perceptrons.
//!
//! Parameters live in one flat `Vec<f64>` with a fixed canonical ordering:
//! layer by layer (input side first), each layer's weight matrix in
//! row-major order (`rows = units of this layer`, `cols = units of the
//! previous layer`) followed by that layer's bias vector. Checkpoints store
//! exactly this vector, so the ordering is part of the file format.
//!
//! The network output `mu` is always the raw output unit (the logit for
//! classification). The sigmoid only appears inside likelihood and metric
//! code.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;

/// Random stream used by [`init_params`].
pub(crate) const INIT_STREAM: u64 = 1;

/// Rows per chunk in full-data passes. Fixed so the reduction order does
/// not depend on the number of worker threads.
const ROW_CHUNK: usize = 256;

/// A layer whose weights are less dense than this is evaluated through
/// per-row index lists instead of full inner products.
const SPARSE_DENSITY: f64 = 0.5;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output. The ReLU
    /// subgradient at zero is taken as zero.
    #[inline]
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Gaussian response with unit noise variance.
    Regression,
    /// Bernoulli response with a logistic link.
    BinaryClassification,
}

/// Position of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.rows * self.cols
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.rows
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchRepr {
    widths: Vec<usize>,
    activation: Activation,
    task: Task,
}

/// Layer widths `[p, L1, ..., 1]`, activation and likelihood family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ArchRepr", into = "ArchRepr")]
pub struct Arch {
    widths: Vec<usize>,
    activation: Activation,
    task: Task,
    layers: Vec<LayerLayout>,
    n_params: usize,
}

impl TryFrom<ArchRepr> for Arch {
    type Error = Error;

    fn try_from(r: ArchRepr) -> Result<Self> {
        Arch::new(r.widths, r.activation, r.task)
    }
}

impl From<Arch> for ArchRepr {
    fn from(a: Arch) -> Self {
        ArchRepr {
            widths: a.widths,
            activation: a.activation,
            task: a.task,
        }
    }
}

impl Arch {
    pub fn new(widths: Vec<usize>, activation: Activation, task: Task) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidArch(format!(
                "need an input, at least one hidden layer and an output; got widths {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArch(format!(
                "all widths must be positive; got {widths:?}"
            )));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidArch(format!(
                "output width must be 1; got {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (cols, rows) = (pair[0], pair[1]);
            let weight_offset = offset;
            let bias_offset = weight_offset + rows * cols;
            offset = bias_offset + rows;
            layers.push(LayerLayout {
                rows,
                cols,
                weight_offset,
                bias_offset,
            });
        }
        Ok(Arch {
            widths,
            activation,
            task,
            layers,
            n_params: offset,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Number of input variables.
    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    /// Number of weight layers (hidden layers plus the output layer).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Total number of weights and biases.
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    /// Flat index of weight `(row, col)` in layer `layer` (0-based).
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let l = &self.layers[layer];
        debug_assert!(row < l.rows && col < l.cols);
        l.weight_offset + row * l.cols + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        let l = &self.layers[layer];
        debug_assert!(row < l.rows);
        l.bias_offset + row
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.n_params {
            return Err(Error::Shape(format!(
                "{what} has {len} entries, architecture has {}",
                self.n_params
            )));
        }
        Ok(())
    }
}

/// All weights and biases of one network in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(arch: &Arch) -> Self {
        ParamVector(vec![0.0; arch.n_params()])
    }

    pub fn from_flat(arch: &Arch, values: Vec<f64>) -> Result<Self> {
        arch.check_len("parameter vector", values.len())?;
        Ok(ParamVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self, arch: &Arch, layer: usize) -> &[f64] {
        &self.0[arch.layers[layer].weight_range()]
    }

    pub fn weights_mut(&mut self, arch: &Arch, layer: usize) -> &mut [f64] {
        &mut self.0[arch.layers[layer].weight_range()]
    }

    pub fn biases(&self, arch: &Arch, layer: usize) -> &[f64] {
        &self.0[arch.layers[layer].bias_range()]
    }

    pub fn biases_mut(&mut self, arch: &Arch, layer: usize) -> &mut [f64] {
        &mut self.0[arch.layers[layer].bias_range()]
    }

    /// `self ∘ mask`.
    pub fn masked(&self, mask: &Mask) -> ParamVector {
        debug_assert_eq!(self.len(), mask.len());
        ParamVector(
            self.0
                .iter()
                .zip(mask.as_slice())
                .map(|(&b, &g)| if g { b } else { 0.0 })
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Binary inclusion indicator for every weight and bias.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn full(arch: &Arch) -> Self {
        Mask(vec![true; arch.n_params()])
    }

    pub fn empty(arch: &Arch) -> Self {
        Mask(vec![false; arch.n_params()])
    }

    pub fn from_flat(arch: &Arch, bits: Vec<bool>) -> Result<Self> {
        arch.check_len("mask", bits.len())?;
        Ok(Mask(bits))
    }

    pub(crate) fn from_raw(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    /// Parses the compact `"0101…"` form used in checkpoints.
    pub fn from_bit_string(arch: &Arch, s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Shape(format!("mask character {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Mask::from_flat(arch, bits)
    }

    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|γ|`, the number of included parameters.
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Flat indices of included parameters, ascending.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn weights(&self, arch: &Arch, layer: usize) -> &[bool] {
        &self.0[arch.layers[layer].weight_range()]
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask(self.0.iter().zip(&other.0).map(|(&a, &b)| a && b).collect())
    }
}

/// Standard initialization: Glorot-uniform weights and zero biases for
/// tanh networks, `U(±1/√fan_in)` weights and biases for ReLU networks.
pub fn init_params(arch: &Arch, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut beta = ParamVector::zeros(arch);
    for (h, l) in arch.layers.iter().enumerate() {
        let (fan_in, fan_out) = (l.cols as f64, l.rows as f64);
        let (w_bound, b_bound) = match arch.activation {
            Activation::Tanh => ((6.0 / (fan_in + fan_out)).sqrt(), 0.0),
            Activation::Relu => {
                let b = 1.0 / fan_in.sqrt();
                (b, b)
            }
        };
        for w in beta.weights_mut(arch, h) {
            *w = rng.random_range(-w_bound..=w_bound);
        }
        if b_bound > 0.0 {
            for b in beta.biases_mut(arch, h) {
                *b = rng.random_range(-b_bound..=b_bound);
            }
        }
    }
    beta
}

fn check_design(arch: &Arch, x: &ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != arch.inputs() {
        return Err(Error::Shape(format!(
            "design matrix has {} columns, network expects {}",
            x.ncols(),
            arch.inputs()
        )));
    }
    Ok(())
}

fn check_response(arch: &Arch, x: &ArrayView2<'_, f64>, y: &[f64]) -> Result<()> {
    check_design(arch, x)?;
    if y.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} responses for {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if arch.task == Task::BinaryClassification {
        if let Some((row, &value)) = y
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::NonBinaryLabel { row, value });
        }
    }
    Ok(())
}

/// `log(1 + e^mu)` without overflow.
#[inline]
pub(crate) fn softplus(mu: f64) -> f64 {
    mu.max(0.0) + (-mu.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(mu: f64) -> f64 {
    if mu >= 0.0 {
        1.0 / (1.0 + (-mu).exp())
    } else {
        let e = mu.exp();
        e / (1.0 + e)
    }
}

/// Per-observation log-likelihood and its derivative with respect to `mu`.
#[inline]
fn obs_loglik(task: Task, mu: f64, y: f64) -> (f64, f64) {
    match task {
        Task::Regression => {
            let r = y - mu;
            (-0.5 * r * r - HALF_LOG_2PI, r)
        }
        Task::BinaryClassification => (y * mu - softplus(mu), y - sigmoid(mu)),
    }
}

/// Per-layer evaluation strategy for one fixed `β ∘ γ`.
///
/// The forward strategy is derived from the nonzeros of the effective
/// parameters only, so `(β, γ)` and `(β∘γ, full)` evaluate identically.
/// The gradient strategy only decides which entries get accumulated; each
/// accumulated entry is summed over rows in the same order either way.
pub(crate) struct Engine<'a> {
    arch: &'a Arch,
    eff: Vec<f64>,
    fwd_cols: Vec<Option<Vec<Vec<usize>>>>,
    grad_cols: Vec<Option<Vec<Vec<usize>>>>,
    mask: Option<&'a Mask>,
}

pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(arch: &'a Arch, beta: &ParamVector, mask: Option<&'a Mask>) -> Result<Self> {
        arch.check_len("parameter vector", beta.len())?;
        if let Some(m) = mask {
            arch.check_len("mask", m.len())?;
        }
        let eff = match mask {
            Some(m) => beta.masked(m).into_flat(),
            None => beta.as_slice().to_vec(),
        };
        let mut fwd_cols = Vec::with_capacity(arch.depth());
        let mut grad_cols = Vec::with_capacity(arch.depth());
        for l in &arch.layers {
            let w = &eff[l.weight_range()];
            fwd_cols.push(sparse_rows(l, |i| w[i] != 0.0));
            grad_cols.push(match mask {
                Some(m) => {
                    let bits = &m.as_slice()[l.weight_range()];
                    sparse_rows(l, |i| bits[i])
                }
                None => None,
            });
        }
        Ok(Engine {
            arch,
            eff,
            fwd_cols,
            grad_cols,
            mask,
        })
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch {
            acts: self.arch.widths[1..].iter().map(|&w| vec![0.0; w]).collect(),
            deltas: self.arch.widths[1..].iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    fn forward_layers(&self, x: &[f64], s: &mut Scratch) -> f64 {
        let act = self.arch.activation;
        let last = self.arch.depth() - 1;
        for (h, l) in self.arch.layers.iter().enumerate() {
            let (prev, rest) = s.acts.split_at_mut(h);
            let input: &[f64] = if h == 0 { x } else { &prev[h - 1] };
            let out = &mut rest[0];
            let w = &self.eff[l.weight_range()];
            let b = &self.eff[l.bias_range()];
            for j in 0..l.rows {
                let row = &w[j * l.cols..(j + 1) * l.cols];
                let z = b[j]
                    + match &self.fwd_cols[h] {
                        Some(cols) => cols[j].iter().fold(0.0, |acc, &k| acc + row[k] * input[k]),
                        None => kernels::dot(row, input),
                    };
                out[j] = if h == last { z } else { act.apply(z) };
            }
        }
        s.acts[last][0]
    }

    pub(crate) fn mu(&self, x: &[f64], s: &mut Scratch) -> f64 {
        self.forward_layers(x, s)
    }

    /// Adds `∂ log p(y|x, β∘γ) / ∂β` for one observation into `grad` and
    /// returns the observation's log-likelihood.
    pub(crate) fn accumulate(&self, x: &[f64], y: f64, s: &mut Scratch, grad: &mut [f64]) -> f64 {
        let mu = self.forward_layers(x, s);
        let (ll, dmu) = obs_loglik(self.arch.task, mu, y);
        let act = self.arch.activation;
        let depth = self.arch.depth();
        s.deltas[depth - 1][0] = dmu;
        for h in (0..depth).rev() {
            let l = &self.arch.layers[h];
            let (lower, upper) = s.deltas.split_at_mut(h);
            let delta = &upper[0];
            let input: &[f64] = if h == 0 { x } else { &s.acts[h - 1] };
            let gw = &mut grad[l.weight_range()];
            for j in 0..l.rows {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut gw[j * l.cols..(j + 1) * l.cols];
                match &self.grad_cols[h] {
                    Some(cols) => {
                        for &k in &cols[j] {
                            g_row[k] += d * input[k];
                        }
                    }
                    None => kernels::axpy(d, input, g_row),
                }
            }
            let gb = &mut grad[l.bias_range()];
            for j in 0..l.rows {
                gb[j] += delta[j];
            }
            if h > 0 {
                let w = &self.eff[l.weight_range()];
                let below = &mut lower[h - 1];
                below.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..l.rows {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[j * l.cols..(j + 1) * l.cols];
                    for k in 0..l.cols {
                        below[k] += row[k] * d;
                    }
                }
                let a = &s.acts[h - 1];
                for k in 0..l.cols {
                    below[k] *= act.slope_from_output(a[k]);
                }
            }
        }
        ll
    }

    /// Zeroes gradient entries outside the mask. Needed only for layers
    /// accumulated densely.
    pub(crate) fn apply_mask(&self, grad: &mut [f64]) {
        if let Some(m) = self.mask {
            for (g, &keep) in grad.iter_mut().zip(m.as_slice()) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
    }

    /// Sum of log-likelihoods over all rows and, if requested, the sum of
    /// their gradients. Rows are processed in fixed-size chunks whose
    /// partial sums are combined in chunk order.
    pub(crate) fn full_pass(
        &self,
        x: &ArrayView2<'_, f64>,
        y: &[f64],
        want_grad: bool,
    ) -> (f64, Option<Vec<f64>>) {
        let n = x.nrows();
        let chunks: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
        let k = self.arch.n_params();
        let partials: Vec<(f64, Option<Vec<f64>>)> = chunks
            .par_iter()
            .map(|&start| {
                let end = (start + ROW_CHUNK).min(n);
                let mut s = self.scratch();
                let mut grad = want_grad.then(|| vec![0.0; k]);
                let mut ll = 0.0;
                for r in start..end {
                    let row = x.row(r);
                    let xr = row_slice(&row);
                    ll += match grad.as_mut() {
                        Some(g) => self.accumulate(&xr, y[r], &mut s, g),
                        None => obs_loglik(self.arch.task, self.mu(&xr, &mut s), y[r]).0,
                    };
                }
                (ll, grad)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; k]);
        for (ll, g) in partials {
            total += ll;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
        }
        if let Some(g) = grad.as_mut() {
            self.apply_mask(g);
        }
        (total, grad)
    }
}

fn sparse_rows(l: &LayerLayout, keep: impl Fn(usize) -> bool) -> Option<Vec<Vec<usize>>> {
    let size = l.rows * l.cols;
    let nnz = (0..size).filter(|&i| keep(i)).count();
    if (nnz as f64) >= SPARSE_DENSITY * size as f64 {
        return None;
    }
    Some(
        (0..l.rows)
            .map(|j| (0..l.cols).filter(|&k| keep(j * l.cols + k)).collect())
            .collect(),
    )
}

/// Contiguous view of a design-matrix row, copying only when the matrix is
/// not in standard layout.
pub(crate) fn row_slice<'b>(row: &'b ArrayView1<'_, f64>) -> std::borrow::Cow<'b, [f64]> {
    match row.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(row.to_vec()),
    }
}

/// `μ(β∘γ, x_i)` for every row of `x`.
pub fn forward(arch: &Arch, beta: &ParamVector, mask: &Mask, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_design(arch, &x)?;
    let engine = Engine::new(arch, beta, Some(mask))?;
    let mut s = engine.scratch();
    Ok(x
        .axis_iter(Axis(0))
        .map(|row| engine.mu(&row_slice(&row), &mut s))
        .collect())
}

/// Mean per-observation log-likelihood of `y` under the masked network.
pub fn loglik(
    arch: &Arch,
    beta: &ParamVector,
    mask: &Mask,
    x: ArrayView2<'_, f64>,
    y: &[f64],
) -> Result<f64> {
    check_response(arch, &x, y)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let engine = Engine::new(arch, beta, Some(mask))?;
    let (sum, _) = engine.full_pass(&x, y, false);
    Ok(sum / y.len() as f64)
}

/// Gradient of [`loglik`] with respect to `β`, zero wherever `γ = 0`.
pub fn loglik_grad(
    arch: &Arch,
    beta: &ParamVector,
    mask: &Mask,
    x: ArrayView2<'_, f64>,
    y: &[f64],
) -> Result<ParamVector> {
    check_response(arch, &x, y)?;
    let engine = Engine::new(arch, beta, Some(mask))?;
    if y.is_empty() {
        return Ok(ParamVector::zeros(arch));
    }
    let (_, grad) = engine.full_pass(&x, y, true);
    let n = y.len() as f64;
    let mut grad = grad.expect("gradient requested");
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(ParamVector(grad))
}

/// Sum of log-likelihoods and, optionally, their gradient, without input
/// validation. Used by the training loop and the objective.
pub(crate) fn loglik_sum(
    arch: &Arch,
    beta: &ParamVector,
    mask: Option<&Mask>,
    x: &ArrayView2<'_, f64>,
    y: &[f64],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let engine = Engine::new(arch, beta, mask)?;
    Ok(engine.full_pass(x, y, want_grad))
}

pub(crate) fn validate_data(arch: &Arch, x: &ArrayView2<'_, f64>, y: &[f64]) -> Result<()> {
    check_response(arch, x, y)
}
