//! Shared test helpers: random instances and an independent, deliberately
//! naive reference implementation of the network used as an oracle.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_bnn::data::{Dataset, Provenance, Split};
use sparse_bnn::net::{Activation, Arch, Mask, ParamVector, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
    }
}

/// Per-layer weight matrices and biases read straight from the documented
/// flat layout: layer by layer, row-major weights, then biases.
pub fn unpack(arch: &Arch, flat: &[f64]) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    let w = arch.widths();
    let mut pos = 0;
    let mut out = Vec::new();
    for h in 1..w.len() {
        let (rows, cols) = (w[h], w[h - 1]);
        let mut m = vec![vec![0.0; cols]; rows];
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        let b = flat[pos..pos + rows].to_vec();
        pos += rows;
        out.push((m, b));
    }
    assert_eq!(pos, flat.len());
    out
}

/// Pre-activations of every hidden layer and the output for one row.
pub fn reference_trace(arch: &Arch, flat: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let layers = unpack(arch, flat);
    let mut a = x.to_vec();
    let mut pre = Vec::new();
    for (h, (m, b)) in layers.iter().enumerate() {
        let z: Vec<f64> = m
            .iter()
            .zip(b)
            .map(|(row, bias)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + bias)
            .collect();
        if h + 1 == layers.len() {
            return (pre, z[0]);
        }
        a = z.iter().map(|&v| act(arch.activation(), v)).collect();
        pre.push(z);
    }
    unreachable!("network has an output layer")
}

pub fn reference_mu(arch: &Arch, flat: &[f64], x: &[f64]) -> f64 {
    reference_trace(arch, flat, x).1
}

pub fn reference_loglik(arch: &Arch, flat: &[f64], x: &Array2<f64>, y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (row, &yi) in x.rows().into_iter().zip(y) {
        let mu = reference_mu(arch, flat, row.as_slice().unwrap());
        s += match arch.task() {
            Task::Regression => -(yi - mu) * (yi - mu) / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln(),
            Task::BinaryClassification => yi * mu - (1.0 + mu.exp()).ln(),
        };
    }
    s / y.len() as f64
}

pub fn random_arch<R: Rng>(rng: &mut R, activation: Activation, task: Task) -> Arch {
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        widths.push(rng.random_range(1..=4));
    }
    widths.push(1);
    Arch::new(widths, activation, task).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R, arch: &Arch, scale: f64) -> ParamVector {
    let v = (0..arch.n_params()).map(|_| rng.random_range(-scale..scale)).collect();
    ParamVector::from_flat(arch, v).unwrap()
}

pub fn random_mask<R: Rng>(rng: &mut R, arch: &Arch, density: f64) -> Mask {
    let bits = (0..arch.n_params()).map(|_| rng.random_bool(density)).collect();
    Mask::from_flat(arch, bits).unwrap()
}

pub fn random_data<R: Rng>(rng: &mut R, arch: &Arch, n: usize) -> (Array2<f64>, Vec<f64>) {
    let x = Array2::from_shape_fn((n, arch.inputs()), |_| rng.random_range(-2.0..2.0));
    let y = (0..n)
        .map(|_| match arch.task() {
            Task::Regression => rng.random_range(-2.0..2.0),
            Task::BinaryClassification => f64::from(rng.random_bool(0.5)),
        })
        .collect();
    (x, y)
}

pub fn dataset(x: Array2<f64>, y: Vec<f64>) -> Dataset {
    Dataset::new(x, y, Split::Train, Provenance::External { path: "memory".into() }).unwrap()
}

/// Relative error with a floor on the denominator, so components that
/// are zero analytically are compared absolutely at the floor's scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Smallest |pre-activation| over all hidden units and rows.
pub fn min_abs_preactivation(arch: &Arch, flat: &[f64], x: &Array2<f64>) -> f64 {
    x.rows()
        .into_iter()
        .flat_map(|r| reference_trace(arch, flat, r.as_slice().unwrap()).0.into_iter().flatten())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Central-difference gradient of `f` at `x` with a fixed step.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Positive entries of the integer product of the weight indicator
/// matrices, output row first.
pub fn path_count_variables(arch: &Arch, mask: &Mask) -> std::collections::BTreeSet<usize> {
    let mut acc: Vec<Vec<u64>> = vec![vec![1]];
    for h in (0..arch.depth()).rev() {
        let l = &arch.layers()[h];
        let w = mask.weights(arch, h);
        let next: Vec<Vec<u64>> = acc
            .iter()
            .map(|row| {
                (0..l.cols)
                    .map(|k| (0..l.rows).map(|j| row[j] * u64::from(w[j * l.cols + k])).sum())
                    .collect()
            })
            .collect();
        acc = next;
    }
    acc[0]
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (c > 0).then_some(i + 1))
        .collect()
}
