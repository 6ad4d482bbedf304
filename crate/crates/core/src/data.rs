//! Synthetic benchmark generators and CSV persistence.
//!
//! Covariates: draw `e, z_1, …, z_p` from a standard normal truncated to
//! `[−10, 10]` and set `x_i = (e + z_i)/√2`, giving pairwise correlation
//! about 0.5. Every row (and every candidate row for the balanced
//! classification generator) has its own ChaCha stream keyed by the seed,
//! so generation is a pure function of the spec and can be sharded across
//! threads without changing the output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, Arch, Mask, Task};
use crate::select::SelectionTruth;

pub const DATASET_MANIFEST_FORMAT: &str = "sparse-bnn-dataset";
pub const DATASET_MANIFEST_VERSION: u32 = 1;

const TRUNCATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 16,
            Split::Validation => 17,
            Split::Test => 18,
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum Provenance {
    Generator { kind: GeneratorKind, seed: u64 },
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub split: Split,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<f64>, split: Split, provenance: Provenance) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} responses", x.nrows(), y.len())));
        }
        if let Some(v) = x.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value {v} in dataset")));
        }
        Ok(Dataset {
            x,
            y,
            split,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    StructureSelection,
    NonlinearRegression,
    NonlinearClassification,
}

impl GeneratorKind {
    /// Number of leading covariates that enter the response.
    pub fn active_variables(self) -> usize {
        match self {
            GeneratorKind::StructureSelection | GeneratorKind::NonlinearRegression => 5,
            GeneratorKind::NonlinearClassification => 4,
        }
    }

    pub fn task(self) -> Task {
        match self {
            GeneratorKind::NonlinearClassification => Task::BinaryClassification,
            _ => Task::Regression,
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structure" | "structure_selection" | "structure-selection" => Ok(GeneratorKind::StructureSelection),
            "regression" | "nonlinear_regression" | "nonlinear-regression" => Ok(GeneratorKind::NonlinearRegression),
            "classification" | "nonlinear_classification" | "nonlinear-classification" => {
                Ok(GeneratorKind::NonlinearClassification)
            }
            other => Err(Error::Config(format!("unknown generator kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub p: usize,
    pub n_train: usize,
    #[serde(default = "default_holdout")]
    pub n_val: usize,
    #[serde(default = "default_holdout")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_holdout() -> usize {
    1000
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let need = self.kind.active_variables();
        if self.p < need {
            return Err(Error::Config(format!(
                "{:?} needs p >= {need}, got {}",
                self.kind, self.p
            )));
        }
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GeneratorSpec { seed, ..self.clone() }
    }
}

/// Train, validation and test splits of one generated dataset.
#[derive(Debug, Clone)]
pub struct DatasetTriple {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DatasetTriple {
    pub fn splits(&self) -> [&Dataset; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

fn row_rng(seed: u64, split: Split, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream_tag() << 40) | row);
    rng
}

/// Fills one covariate row and returns the generator for follow-up draws.
fn covariate_row(out: &mut [f64], seed: u64, split: Split, row: u64) -> ChaCha8Rng {
    let mut rng = row_rng(seed, split, row);
    let e = truncated_normal(&mut rng);
    for v in out.iter_mut() {
        *v = (e + truncated_normal(&mut rng)) / std::f64::consts::SQRT_2;
    }
    rng
}

/// `n × p` correlated covariates (training-split stream).
pub fn gen_covariates(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut x = Array2::zeros((n, p));
    x.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut row)| {
            covariate_row(row.as_slice_mut().expect("standard layout"), seed, Split::Train, r as u64);
        });
    x
}

/// Noise-free response of the structure-selection network model.
pub fn structure_signal(x: &[f64]) -> f64 {
    (2.0 * (2.0 * x[0] - x[1]).tanh()).tanh() + 2.0 * ((x[2] - 2.0 * x[3]).tanh() - (2.0 * x[4]).tanh()).tanh()
}

/// Noise-free response of the nonlinear regression model.
pub fn regression_signal(x: &[f64]) -> f64 {
    5.0 * x[1] / (1.0 + x[0] * x[0]) + 5.0 * (x[2] * x[3]).sin() + 2.0 * x[4]
}

/// Decision score of the nonlinear classification system; the label is 1
/// iff the score is positive.
pub fn classification_score(x: &[f64]) -> f64 {
    x[0].exp() + x[1] * x[1] + 5.0 * (x[2] * x[3]).sin() - 3.0
}

fn gaussian_split(spec: &GeneratorSpec, split: Split, n: usize, signal: fn(&[f64]) -> f64) -> Result<Dataset> {
    let mut x = Array2::zeros((n, spec.p));
    let mut y = vec![0.0; n];
    x.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(y.par_iter_mut())
        .enumerate()
        .for_each(|(r, (mut row, yr))| {
            let row = row.as_slice_mut().expect("standard layout");
            let mut rng = covariate_row(row, spec.seed, split, r as u64);
            let eps: f64 = rng.sample(StandardNormal);
            *yr = signal(row) + eps;
        });
    Dataset::new(
        x,
        y,
        split,
        Provenance::Generator {
            kind: spec.kind,
            seed: spec.seed,
        },
    )
}

/// Exactly `⌊n/2⌋` positives: candidate rows are drawn in order and kept
/// while their class still has room.
fn balanced_split(spec: &GeneratorSpec, split: Split, n: usize) -> Result<Dataset> {
    let want_pos = n / 2;
    let want_neg = n - want_pos;
    let (mut pos, mut neg) = (0, 0);
    let mut x = Array2::zeros((n, spec.p));
    let mut y = vec![0.0; n];
    let mut buf = vec![0.0; spec.p];
    let mut filled = 0;
    let mut candidate = 0u64;
    while filled < n {
        covariate_row(&mut buf, spec.seed, split, candidate);
        candidate += 1;
        let label = classification_score(&buf) > 0.0;
        let room = if label { pos < want_pos } else { neg < want_neg };
        if !room {
            continue;
        }
        if label {
            pos += 1;
        } else {
            neg += 1;
        }
        x.row_mut(filled).as_slice_mut().expect("standard layout").copy_from_slice(&buf);
        y[filled] = f64::from(u8::from(label));
        filled += 1;
    }
    Dataset::new(
        x,
        y,
        split,
        Provenance::Generator {
            kind: spec.kind,
            seed: spec.seed,
        },
    )
}

fn triple(spec: &GeneratorSpec, make: impl Fn(Split, usize) -> Result<Dataset>) -> Result<DatasetTriple> {
    spec.validate()?;
    Ok(DatasetTriple {
        train: make(Split::Train, spec.n_train)?,
        validation: make(Split::Validation, spec.n_val)?,
        test: make(Split::Test, spec.n_test)?,
    })
}

pub fn gen_structure_selection(spec: &GeneratorSpec) -> Result<DatasetTriple> {
    triple(spec, |s, n| gaussian_split(spec, s, n, structure_signal))
}

pub fn gen_nonlinear_regression(spec: &GeneratorSpec) -> Result<DatasetTriple> {
    triple(spec, |s, n| gaussian_split(spec, s, n, regression_signal))
}

pub fn gen_nonlinear_classification(spec: &GeneratorSpec) -> Result<DatasetTriple> {
    triple(spec, |s, n| balanced_split(spec, s, n))
}

pub fn generate(spec: &GeneratorSpec) -> Result<DatasetTriple> {
    match spec.kind {
        GeneratorKind::StructureSelection => gen_structure_selection(spec),
        GeneratorKind::NonlinearRegression => gen_nonlinear_regression(spec),
        GeneratorKind::NonlinearClassification => gen_nonlinear_classification(spec),
    }
}

/// Variables and (for the structure-selection model) connections of the
/// data-generating process, expressed for a fitted network of shape
/// `p-5-3-1` (structure selection) or any shape (the other two).
pub fn truth(kind: GeneratorKind, p: usize) -> Result<SelectionTruth> {
    let variables = (1..=kind.active_variables()).collect();
    let connections = match kind {
        GeneratorKind::StructureSelection => Some(structure_true_mask(p)?),
        _ => None,
    };
    SelectionTruth::new(variables, connections, p)
}

/// Generating network of the structure-selection model embedded in a
/// `p-5-3-1` tanh network: hidden units `tanh(2x1 − x2)`, `tanh(x3 − 2x4)`,
/// `tanh(2x5)`, then `tanh(2u1)`, `tanh(u2 − u3)`, output `v1 + 2v2`.
/// Only weights are marked; the true network has no biases.
pub fn structure_true_mask(p: usize) -> Result<(Arch, Mask)> {
    let arch = Arch::new(vec![p, 5, 3, 1], Activation::Tanh, Task::Regression)?;
    let mut mask = Mask::empty(&arch);
    let edges: [(usize, usize, usize); 10] = [
        (0, 0, 0),
        (0, 0, 1),
        (0, 1, 2),
        (0, 1, 3),
        (0, 2, 4),
        (1, 0, 0),
        (1, 1, 1),
        (1, 1, 2),
        (2, 0, 0),
        (2, 0, 1),
    ];
    for (layer, row, col) in edges {
        let i = arch.weight_index(layer, row, col);
        mask.as_mut_slice()[i] = true;
    }
    Ok((arch, mask))
}

/// Expected CSV layout.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvSchema {
    /// Required number of covariate columns, if known.
    pub p: Option<usize>,
    /// Labels must be 0/1 when set.
    pub binary_response: bool,
    pub split: Option<Split>,
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v == 0.0 || (1e-5..1e16).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (1..=data.p()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for (row, y) in data.x.axis_iter(Axis(0)).zip(&data.y) {
        line.clear();
        for v in row.iter() {
            line.push_str(&fmt_f64(*v));
            line.push(',');
        }
        line.push_str(&fmt_f64(*y));
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let schema_err = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let y_col = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| schema_err("missing response column \"y\"".into()))?;
    if y_col != headers.len() - 1 {
        return Err(schema_err("column \"y\" must be last".into()));
    }
    let p = headers.len() - 1;
    for (i, h) in headers.iter().take(p).enumerate() {
        if h.trim() != format!("x{}", i + 1) {
            return Err(schema_err(format!("column {} is named {h:?}, expected \"x{}\"", i + 1, i + 1)));
        }
    }
    if let Some(want) = schema.p {
        if want != p {
            return Err(schema_err(format!("expected {want} covariate columns, found {p}")));
        }
    }
    let mut values = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, line, e))?;
        if record.len() != p + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", p + 1, record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column {} is not a number: {cell:?}", headers.get(j).unwrap_or("?")),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-finite value in column {}", headers.get(j).unwrap_or("?")),
                });
            }
            if j == p {
                if schema.binary_response && v != 0.0 && v != 1.0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("label {v} is not 0 or 1"),
                    });
                }
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let x = Array2::from_shape_vec((y.len(), p), values).map_err(|e| schema_err(e.to_string()))?;
    Dataset::new(
        x,
        y,
        schema.split.unwrap_or(Split::Train),
        Provenance::External {
            path: path.to_path_buf(),
        },
    )
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("is_io_error implies an Io kind");
    }
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Sidecar describing a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub spec: GeneratorSpec,
    pub files: Vec<SplitFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub split: Split,
    pub file: String,
    pub rows: usize,
}

/// Writes `train.csv`, `val.csv`, `test.csv` and `manifest.json` into `dir`.
pub fn write_triple(triple: &DatasetTriple, spec: &GeneratorSpec, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for d in triple.splits() {
        let file = format!("{}.csv", d.split.file_stem());
        save_csv(d, &dir.join(&file))?;
        files.push(SplitFile {
            split: d.split,
            file,
            rows: d.n(),
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_MANIFEST_FORMAT.into(),
        version: DATASET_MANIFEST_VERSION,
        spec: spec.clone(),
        files,
    };
    crate::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: GeneratorKind, p: usize, n: usize) -> GeneratorSpec {
        GeneratorSpec {
            kind,
            p,
            n_train: n,
            n_val: 20,
            n_test: 20,
            seed: 11,
        }
    }

    #[test]
    fn signal_values() {
        let mut x = [0.0; 6];
        assert_eq!(structure_signal(&x), 0.0);
        assert_eq!(regression_signal(&x), 0.0);
        assert_eq!(classification_score(&x), -2.0);
        x[0] = 1.0;
        assert!((structure_signal(&x) - (2.0 * 2f64.tanh()).tanh()).abs() < 1e-15);
        assert!((structure_signal(&x) - 0.958576).abs() < 1e-6);
        let h = std::f64::consts::FRAC_PI_2.sqrt();
        let x = [0.0, 1.0, h, h, 0.0];
        assert!((regression_signal(&x) - 10.0).abs() < 1e-12);
        let x = [2.0, 0.0, 0.0, 0.0];
        assert!((classification_score(&x) - (2f64.exp() - 3.0)).abs() < 1e-15);
        assert!(classification_score(&x) > 0.0);
    }

    #[test]
    fn covariates_are_bounded_and_deterministic() {
        let a = gen_covariates(200, 7, 3);
        assert_eq!(a, gen_covariates(200, 7, 3));
        assert_ne!(a, gen_covariates(200, 7, 4));
        let bound = 10.0 * std::f64::consts::SQRT_2;
        assert!(a.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn rejects_too_few_covariates() {
        assert!(generate(&spec(GeneratorKind::NonlinearRegression, 4, 10)).is_err());
        assert!(generate(&spec(GeneratorKind::NonlinearClassification, 3, 10)).is_err());
        assert!(generate(&spec(GeneratorKind::NonlinearClassification, 4, 10)).is_ok());
    }

    #[test]
    fn classification_is_balanced() {
        let t = generate(&spec(GeneratorKind::NonlinearClassification, 6, 101)).unwrap();
        let pos = t.train.y.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(pos, 50);
        assert_eq!(t.train.n(), 101);
        for d in t.splits() {
            for (row, y) in d.x.axis_iter(Axis(0)).zip(&d.y) {
                let label = classification_score(row.as_slice().unwrap()) > 0.0;
                assert_eq!(f64::from(u8::from(label)), *y);
            }
        }
    }

    #[test]
    fn structure_truth_network_reproduces_signal() {
        let (arch, mask) = structure_true_mask(7).unwrap();
        assert_eq!(mask.count(), 10);
        let mut beta = crate::net::ParamVector::zeros(&arch);
        let w = [2.0, -1.0, 1.0, -2.0, 2.0, 2.0, 1.0, -1.0, 1.0, 2.0];
        let edges = mask.selected_indices();
        for (i, v) in edges.iter().zip(w) {
            beta.as_mut_slice()[*i] = v;
        }
        let x = gen_covariates(50, 7, 2);
        let mu = crate::net::forward(&arch, &beta, &mask, x.view()).unwrap();
        for (r, m) in mu.iter().enumerate() {
            assert!((m - structure_signal(x.row(r).as_slice().unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn fmt_round_trips() {
        for v in [0.0, -0.0, 1.0, 0.1, -3.25e-300, 1e300, 123456.789, f64::MIN_POSITIVE, 5e-6] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
