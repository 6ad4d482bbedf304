//! Commands behind the `sparse-bnn` binary.
//!
//! - `gen`: write a synthetic benchmark (train/val/test CSVs + manifest)
//! - `elicit`: run every replicate of a [`RunConfig`] and persist the results
//! - `eval`: score a checkpoint on CSV datasets
//! - `report`: aggregate a run directory into summary tables
//!
//! Each replicate directory of an `elicit` run holds:
//!
//! - `manifest.json`: config, seeds, per-try scores, metrics and the winner
//! - `checkpoints/try-NN.json`: refined network of every successful try
//! - `scores.csv`: `try,log_evidence,bic,gamma_size,<mspe|pa>`
//! - `metrics.csv`: metrics keyed by `(dataset_id, try_index)`
//! - `train_log.jsonl`: training and refinement objective traces
//!
//! Only the training log records wall-clock time, so every other file is
//! byte-identical across reruns of the same config.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig, OUTPUT_ROOT_ENV};
use crate::data::{self, fmt_f64, CsvSchema, Dataset, DatasetManifest, GeneratorKind, GeneratorSpec, Split};
use crate::elicit::{self, HessianStatus, SelectionMode, TryFailure};
use crate::error::{Error, Result};
use crate::net::{self, Task};
use crate::prior::{self, Threshold};
use crate::select::{self, ConnectionCounts, FitMetrics, Sample, SelectionTruth};

pub const RUN_MANIFEST_FORMAT: &str = "sparse-bnn-run";
pub const RUN_MANIFEST_VERSION: u32 = 1;
pub const REPORT_FORMAT: &str = "sparse-bnn-report";
pub const REPORT_VERSION: u32 = 1;

/// Arguments of `gen`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenArgs {
    pub kind: GeneratorKind,
    pub p: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_gen(args: &GenArgs) -> Result<DatasetManifest> {
    let spec = GeneratorSpec {
        kind: args.kind,
        p: args.p,
        n_train: args.n_train,
        n_val: args.n_val,
        n_test: args.n_test,
        seed: args.seed,
    };
    spec.validate()?;
    let triple = data::generate(&spec)?;
    data::write_triple(&triple, &spec, &args.out)
}

/// Command-line overrides of [`RunConfig`] fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElicitOverrides {
    pub output_dir: Option<PathBuf>,
    pub tries: Option<usize>,
    pub replicates: Option<usize>,
    pub base_seed: Option<u64>,
    pub selection: Option<SelectionMode>,
    pub second_pass: Option<bool>,
    pub workers: Option<usize>,
}

impl ElicitOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.tries {
            cfg.tries = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = self.base_seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.selection {
            cfg.selection = v;
        }
        if let Some(v) = self.second_pass {
            cfg.second_pass = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate()
    }
}

/// Per-try record in a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TryEntry {
    pub try_index: usize,
    pub seed: u64,
    pub h_n: f64,
    pub log_evidence: Option<f64>,
    pub bic: f64,
    pub gamma_size: usize,
    pub first_pass_gamma_size: usize,
    pub sparsity: f64,
    pub hessian: HessianStatus,
    pub effective_variables: Vec<usize>,
    pub metrics: FitMetrics,
    /// Variable-level rates for this try alone, when the truth is known.
    pub fsr: Option<f64>,
    pub nsr: Option<f64>,
    pub connections: Option<ConnectionCounts>,
    pub first_pass_connections: Option<ConnectionCounts>,
    pub checkpoint: String,
}

/// Everything an `elicit` replicate produced, except the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub dataset_id: String,
    pub replicate: usize,
    /// Seed of the generated dataset and base of the try seeds.
    pub seed: u64,
    pub provenance: data::Provenance,
    pub n_train: usize,
    pub n_test: usize,
    pub threshold: Threshold,
    pub true_variables: Option<Vec<usize>>,
    pub requested_mode: SelectionMode,
    pub selection_mode: SelectionMode,
    pub winner: usize,
    pub tries: Vec<TryEntry>,
    pub failures: Vec<TryFailure>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn winner(&self) -> &TryEntry {
        self.tries
            .iter()
            .find(|t| t.try_index == self.winner)
            .expect("winner is one of the tries")
    }

    pub fn task(&self) -> Task {
        self.config.arch.task()
    }
}

#[derive(Debug, Clone)]
pub struct ElicitSummary {
    pub output_dir: PathBuf,
    pub replicates: Vec<RunManifest>,
}

struct LoadedData {
    dataset_id: String,
    seed: u64,
    train: Dataset,
    test: Dataset,
    truth: Option<SelectionTruth>,
}

fn load_data(cfg: &RunConfig, replicate: usize) -> Result<LoadedData> {
    match &cfg.data {
        DataSource::Generator { kind, p, .. } => {
            let spec = cfg.generator_spec(replicate)?;
            let triple = data::generate(&spec)?;
            Ok(LoadedData {
                dataset_id: format!("{}-{:03}", file_kind(*kind), replicate),
                seed: spec.seed,
                train: triple.train,
                test: triple.test,
                truth: Some(data::truth(*kind, *p)?),
            })
        }
        DataSource::Csv { train, test, .. } => {
            let schema = |split| CsvSchema {
                p: Some(cfg.arch.inputs()),
                binary_response: cfg.arch.task() == Task::BinaryClassification,
                split: Some(split),
            };
            Ok(LoadedData {
                dataset_id: format!("csv-{replicate:03}"),
                seed: cfg.replicate_seed(replicate),
                train: data::load_csv(train, schema(Split::Train))?,
                test: data::load_csv(test, schema(Split::Test))?,
                truth: None,
            })
        }
    }
}

fn file_kind(kind: GeneratorKind) -> &'static str {
    match kind {
        GeneratorKind::StructureSelection => "structure",
        GeneratorKind::NonlinearRegression => "regression",
        GeneratorKind::NonlinearClassification => "classification",
    }
}

fn metric_names(task: Task) -> (&'static str, &'static str) {
    match task {
        Task::Regression => ("msfe", "mspe"),
        Task::BinaryClassification => ("fa", "pa"),
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one replicate of `cfg` and writes its files into `dir`.
pub fn run_replicate(cfg: &RunConfig, replicate: usize, dir: &Path) -> Result<RunManifest> {
    let loaded = load_data(cfg, replicate)?;
    let arch = &cfg.arch;
    let report = elicit::run_algorithm1(arch, &loaded.train, cfg.prior, &cfg.elicit_config(replicate))?;

    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let truth_conns = loaded.truth.as_ref().and_then(|t| t.true_connections.as_ref());
    let mut tries = Vec::with_capacity(report.tries.len());
    for t in &report.tries {
        let file = format!("checkpoints/try-{:02}.json", t.try_index);
        Checkpoint::new(arch.clone(), t.beta_refined.clone(), t.mask.clone(), t.seed)?.save(&dir.join(&file))?;
        let metrics = select::fit_metrics(
            arch,
            &t.beta_refined,
            &t.mask,
            Sample {
                x: loaded.train.x(),
                y: &loaded.train.y,
            },
            Sample {
                x: loaded.test.x(),
                y: &loaded.test.y,
            },
        )?;
        let vars = t.effective_variables(arch);
        let rates = loaded
            .truth
            .as_ref()
            .map(|truth| select::fsr_nsr(&truth.true_variables, std::slice::from_ref(&vars)));
        tries.push(TryEntry {
            try_index: t.try_index,
            seed: t.seed,
            h_n: t.h_n,
            log_evidence: t.log_evidence,
            bic: t.bic_score,
            gamma_size: t.gamma_size,
            first_pass_gamma_size: t.first_mask.count(),
            sparsity: t.sparsity,
            hessian: t.hessian.clone(),
            effective_variables: vars.into_iter().collect(),
            metrics,
            fsr: rates.map(|r| r.0),
            nsr: rates.map(|r| r.1),
            connections: truth_conns.and_then(|tc| select::connection_counts(arch, &t.mask, tc)),
            first_pass_connections: truth_conns.and_then(|tc| select::connection_counts(arch, &t.first_mask, tc)),
            checkpoint: file,
        });
    }

    let manifest = RunManifest {
        format: RUN_MANIFEST_FORMAT.into(),
        version: RUN_MANIFEST_VERSION,
        dataset_id: loaded.dataset_id,
        replicate,
        seed: loaded.seed,
        provenance: loaded.train.provenance.clone(),
        n_train: loaded.train.n(),
        n_test: loaded.test.n(),
        threshold: prior::threshold(&cfg.prior),
        true_variables: loaded.truth.map(|t| t.true_variables.into_iter().collect()),
        requested_mode: report.requested_mode,
        selection_mode: report.selection_mode,
        winner: report.winner,
        tries,
        failures: report.failures.clone(),
        config: cfg.clone(),
    };
    crate::write_json(&dir.join("manifest.json"), &manifest)?;
    write_text(&dir.join("scores.csv"), &scores_csv(&manifest))?;
    write_text(&dir.join("metrics.csv"), &metrics_csv(&manifest))?;

    let log_path = dir.join("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    for t in &report.tries {
        for (phase, log) in [("train", &t.train_log), ("refine", &t.refine_log)] {
            for rec in log {
                let line = serde_json::json!({
                    "try": t.try_index,
                    "phase": phase,
                    "iteration": rec.iteration,
                    "objective": rec.objective,
                    "elapsed_secs": rec.elapsed_secs,
                });
                writeln!(w, "{line}").map_err(|e| Error::io(&log_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(manifest)
}

/// One row per try, failed tries included with empty fields.
pub fn scores_csv(m: &RunManifest) -> String {
    let (_, pred) = metric_names(m.task());
    let mut out = format!("try,log_evidence,bic,gamma_size,{pred}\n");
    let tries = m.config.tries;
    for idx in 1..=tries {
        match m.tries.iter().find(|t| t.try_index == idx) {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    idx,
                    opt_f64(t.log_evidence),
                    fmt_f64(t.bic),
                    t.gamma_size,
                    fmt_f64(t.metrics.prediction())
                );
            }
            None => {
                let _ = writeln!(out, "{idx},,,,");
            }
        }
    }
    out
}

pub fn metrics_csv(m: &RunManifest) -> String {
    let (fit, pred) = metric_names(m.task());
    let mut out = format!("dataset_id,try_index,gamma_size,selected_count,fsr,nsr,{fit},{pred}\n");
    for t in &m.tries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.dataset_id,
            t.try_index,
            t.gamma_size,
            t.effective_variables.len(),
            opt_f64(t.fsr),
            opt_f64(t.nsr),
            fmt_f64(t.metrics.fitting()),
            fmt_f64(t.metrics.prediction())
        );
    }
    out
}

/// Loads `config`, applies overrides and runs every replicate into
/// `<output>/replicate-NNN/`.
pub fn cmd_elicit(config: &Path, overrides: &ElicitOverrides) -> Result<ElicitSummary> {
    let mut cfg = RunConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    let out = match &overrides.output_dir {
        Some(dir) => dir.clone(),
        None => cfg.resolved_output_dir(),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("config.toml"), &cfg.to_toml_string()?)?;
    let mut replicates = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let dir = out.join(format!("replicate-{r:03}"));
        replicates.push(run_replicate(&cfg, r, &dir)?);
    }
    Ok(ElicitSummary {
        output_dir: out,
        replicates,
    })
}

/// One row of an `eval` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub file: String,
    pub n: usize,
    pub loglik: f64,
    /// Mean squared error (regression) or accuracy (classification).
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub task: Task,
    pub gamma_size: usize,
    pub effective_variables: Vec<usize>,
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn to_csv(&self) -> String {
        let name = match self.task {
            Task::Regression => "mse",
            Task::BinaryClassification => "accuracy",
        };
        let mut out = format!("file,n,loglik,{name}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.file, r.n, fmt_f64(r.loglik), fmt_f64(r.metric));
        }
        out
    }
}

pub fn cmd_eval(checkpoint: &Path, datasets: &[PathBuf]) -> Result<EvalTable> {
    let ck = Checkpoint::load(checkpoint)?;
    let schema = CsvSchema {
        p: Some(ck.arch.inputs()),
        binary_response: ck.arch.task() == Task::BinaryClassification,
        split: None,
    };
    let mut rows = Vec::with_capacity(datasets.len());
    for path in datasets {
        let d = data::load_csv(path, schema)?;
        let loglik = net::loglik(&ck.arch, &ck.beta, &ck.mask, d.x(), &d.y)?;
        let metric = match ck.arch.task() {
            Task::Regression => select::mean_squared_error(&ck.arch, &ck.beta, &ck.mask, d.x(), &d.y)?,
            Task::BinaryClassification => select::accuracy(&ck.arch, &ck.beta, &ck.mask, d.x(), &d.y)?,
        };
        rows.push(EvalRow {
            file: path.display().to_string(),
            n: d.n(),
            loglik,
            metric,
        });
    }
    Ok(EvalTable {
        task: ck.arch.task(),
        gamma_size: ck.mask.count(),
        effective_variables: select::effective_variables(&ck.arch, &ck.mask).into_iter().collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for one value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanSd { mean, sd })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pairs: usize,
    pub spearman_rho: f64,
    pub p_value: f64,
}

/// Aggregate over the replicates of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub replicates: usize,
    pub tries: usize,
    pub failed_tries: usize,
    /// Pooled variable-level rates of the winners.
    pub fsr: Option<f64>,
    pub nsr: Option<f64>,
    /// Replicates whose winner selected exactly the true variables.
    pub exact_recoveries: Option<usize>,
    pub selected_count: MeanSd,
    pub connections: Option<ConnectionCounts>,
    pub first_pass_connections: Option<ConnectionCounts>,
    pub fitting: MeanSd,
    pub prediction: MeanSd,
    /// BIC against the held-out metric over every successful try.
    pub bic_vs_prediction: Option<Correlation>,
    /// Log evidence against the held-out metric over tries that have one.
    pub evidence_vs_prediction: Option<Correlation>,
}

/// Manifests of a single replicate directory or of every
/// `replicate-*` subdirectory, in name order.
pub fn load_manifests(run_dir: &Path) -> Result<Vec<RunManifest>> {
    let direct = run_dir.join("manifest.json");
    let paths = if direct.is_file() {
        vec![direct]
    } else {
        let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let mut dirs = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(run_dir, e))?;
            let path = entry.path().join("manifest.json");
            if path.is_file() {
                dirs.push(path);
            }
        }
        dirs.sort();
        dirs
    };
    if paths.is_empty() {
        return Err(Error::Schema {
            path: run_dir.to_path_buf(),
            message: "no manifest.json found in the directory or its subdirectories".into(),
        });
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let m: RunManifest = crate::read_json(&p)?;
        if m.format != RUN_MANIFEST_FORMAT || m.version != RUN_MANIFEST_VERSION {
            return Err(Error::Schema {
                path: p,
                message: format!("expected {RUN_MANIFEST_FORMAT} version {RUN_MANIFEST_VERSION}"),
            });
        }
        out.push(m);
    }
    Ok(out)
}

fn correlation(pairs: &[(f64, f64)]) -> Option<Correlation> {
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    select::spearman(&a, &b).ok().map(|(rho, p)| Correlation {
        pairs: pairs.len(),
        spearman_rho: rho,
        p_value: p,
    })
}

/// Aggregates manifests; the pure part of [`cmd_report`].
pub fn build_report(manifests: &[RunManifest]) -> Result<Report> {
    let first = manifests
        .first()
        .ok_or_else(|| Error::Config("report needs at least one replicate".into()))?;
    let task = first.task();
    if manifests.iter().any(|m| m.task() != task) {
        return Err(Error::Config("replicates mix regression and classification".into()));
    }
    let winners: Vec<&TryEntry> = manifests.iter().map(|m| m.winner()).collect();
    let selected: Vec<BTreeSet<usize>> = winners
        .iter()
        .map(|w| w.effective_variables.iter().copied().collect())
        .collect();
    let truth: Option<BTreeSet<usize>> = first.true_variables.as_ref().map(|v| v.iter().copied().collect());
    let same_truth = manifests
        .iter()
        .all(|m| m.true_variables.as_ref().map(|v| v.iter().copied().collect()) == truth);
    let (fsr, nsr, exact) = match (&truth, same_truth) {
        (Some(t), true) => {
            let (f, n) = select::fsr_nsr(t, &selected);
            (Some(f), Some(n), Some(selected.iter().filter(|s| *s == t).count()))
        }
        _ => (None, None, None),
    };
    let conns = |pick: fn(&TryEntry) -> Option<ConnectionCounts>| -> Option<ConnectionCounts> {
        let all: Option<Vec<ConnectionCounts>> = winners.iter().map(|w| pick(w)).collect();
        all.map(|v| ConnectionCounts::sum(&v))
    };
    let all_tries = manifests.iter().flat_map(|m| &m.tries);
    let bic_pairs: Vec<(f64, f64)> = all_tries.clone().map(|t| (t.bic, t.metrics.prediction())).collect();
    let ev_pairs: Vec<(f64, f64)> = all_tries
        .clone()
        .filter_map(|t| t.log_evidence.map(|e| (e, t.metrics.prediction())))
        .collect();
    let counts: Vec<f64> = selected.iter().map(|s| s.len() as f64).collect();
    let fitting: Vec<f64> = winners.iter().map(|w| w.metrics.fitting()).collect();
    let prediction: Vec<f64> = winners.iter().map(|w| w.metrics.prediction()).collect();
    Ok(Report {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        task,
        replicates: manifests.len(),
        tries: manifests.iter().map(|m| m.tries.len() + m.failures.len()).sum(),
        failed_tries: manifests.iter().map(|m| m.failures.len()).sum(),
        fsr,
        nsr,
        exact_recoveries: exact,
        selected_count: MeanSd::of(&counts).expect("at least one replicate"),
        connections: conns(|w| w.connections),
        first_pass_connections: conns(|w| w.first_pass_connections),
        fitting: MeanSd::of(&fitting).expect("at least one replicate"),
        prediction: MeanSd::of(&prediction).expect("at least one replicate"),
        bic_vs_prediction: correlation(&bic_pairs),
        evidence_vs_prediction: correlation(&ev_pairs),
    })
}

/// Per-replicate winner table.
pub fn summary_csv(manifests: &[RunManifest]) -> String {
    let task = manifests.first().map(|m| m.task()).unwrap_or(Task::Regression);
    let (fit, pred) = metric_names(task);
    let mut out = format!("dataset_id,winner,gamma_size,selected_count,fsr,nsr,{fit},{pred}\n");
    for m in manifests {
        let w = m.winner();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.dataset_id,
            w.try_index,
            w.gamma_size,
            w.effective_variables.len(),
            opt_f64(w.fsr),
            opt_f64(w.nsr),
            fmt_f64(w.metrics.fitting()),
            fmt_f64(w.metrics.prediction())
        );
    }
    out
}

/// Every (score, held-out metric) pair, for plotting prediction error
/// against evidence.
pub fn figure3_csv(manifests: &[RunManifest]) -> String {
    let task = manifests.first().map(|m| m.task()).unwrap_or(Task::Regression);
    let (_, pred) = metric_names(task);
    let mut out = format!("dataset_id,try,log_evidence,bic,{pred}\n");
    for m in manifests {
        for t in &m.tries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.dataset_id,
                t.try_index,
                opt_f64(t.log_evidence),
                fmt_f64(t.bic),
                fmt_f64(t.metrics.prediction())
            );
        }
    }
    out
}

impl Report {
    /// Human-readable summary.
    pub fn render(&self) -> String {
        let (fit, pred) = metric_names(self.task);
        let mut s = String::new();
        let _ = writeln!(s, "replicates: {}  tries: {} ({} failed)", self.replicates, self.tries, self.failed_tries);
        if let (Some(f), Some(n), Some(e)) = (self.fsr, self.nsr, self.exact_recoveries) {
            let _ = writeln!(s, "variables: FSR {f:.4}  NSR {n:.4}  exact recoveries {e}/{}", self.replicates);
        }
        let _ = writeln!(
            s,
            "selected variables: {:.2} ({:.2})",
            self.selected_count.mean, self.selected_count.sd
        );
        for (label, c) in [("connections", self.connections), ("connections (first pass)", self.first_pass_connections)] {
            if let Some(c) = c {
                let _ = writeln!(s, "{label}: FSR {:.4}  NSR {:.4}  ({} selected)", c.fsr(), c.nsr(), c.selected);
            }
        }
        let _ = writeln!(s, "{fit}: {:.4} ({:.4})", self.fitting.mean, self.fitting.sd);
        let _ = writeln!(s, "{pred}: {:.4} ({:.4})", self.prediction.mean, self.prediction.sd);
        for (label, c) in [("bic", self.bic_vs_prediction), ("log evidence", self.evidence_vs_prediction)] {
            if let Some(c) = c {
                let _ = writeln!(
                    s,
                    "spearman({label}, {pred}) = {:.4}  p = {:.3e}  over {} pairs",
                    c.spearman_rho, c.p_value, c.pairs
                );
            }
        }
        s
    }
}

/// Writes `report/summary.csv`, `report/figure3.csv` and
/// `report/report.json` under `run_dir`.
pub fn cmd_report(run_dir: &Path) -> Result<Report> {
    let manifests = load_manifests(run_dir)?;
    let report = build_report(&manifests)?;
    let out = run_dir.join("report");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("summary.csv"), &summary_csv(&manifests))?;
    write_text(&out.join("figure3.csv"), &figure3_csv(&manifests))?;
    crate::write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArch(_) | Error::InvalidHyper(_) => 1,
        _ => 2,
    }
}

fn parse_selection(s: &str) -> std::result::Result<SelectionMode, String> {
    match s {
        "bic" => Ok(SelectionMode::Bic),
        "evidence" => Ok(SelectionMode::Evidence),
        other => Err(format!("expected `bic` or `evidence`, got `{other}`")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparse-bnn", version, about = "Sparse Bayesian neural networks with evidence-based elicitation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Gen {
        /// structure, regression or classification
        #[arg(long)]
        kind: GeneratorKind,
        #[arg(long)]
        p: usize,
        /// Training rows.
        #[arg(long = "n")]
        n_train: usize,
        #[arg(long, default_value_t = 1000)]
        n_val: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; relative paths go under $SBNN_OUTPUT_ROOT when set.
        #[arg(long, short, default_value = "data")]
        out: PathBuf,
    },
    /// Run every replicate of a config file.
    Elicit {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        tries: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long, value_parser = parse_selection)]
        selection: Option<SelectionMode>,
        #[arg(long)]
        second_pass: Option<bool>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score a checkpoint on one or more CSV datasets.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
    },
    /// Aggregate a run directory.
    Report { run_dir: PathBuf },
}

fn under_output_root(path: PathBuf) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path,
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen {
            kind,
            p,
            n_train,
            n_val,
            n_test,
            seed,
            out,
        } => {
            let out = under_output_root(out);
            let m = cmd_gen(&GenArgs {
                kind,
                p,
                n_train,
                n_val,
                n_test,
                seed,
                out: out.clone(),
            })?;
            for f in &m.files {
                println!("{}\t{} rows", out.join(&f.file).display(), f.rows);
            }
        }
        Command::Elicit {
            config,
            output,
            tries,
            replicates,
            base_seed,
            selection,
            second_pass,
            workers,
        } => {
            let ov = ElicitOverrides {
                output_dir: output.map(under_output_root),
                tries,
                replicates,
                base_seed,
                selection,
                second_pass,
                workers,
            };
            let summary = cmd_elicit(&config, &ov)?;
            for m in &summary.replicates {
                let w = m.winner();
                println!(
                    "{}: winner try {} |γ| = {} variables {:?} bic {:.4} prediction {:.4}",
                    m.dataset_id,
                    w.try_index,
                    w.gamma_size,
                    w.effective_variables,
                    w.bic,
                    w.metrics.prediction()
                );
            }
            println!("wrote {}", summary.output_dir.display());
        }
        Command::Eval { checkpoint, data } => {
            let table = cmd_eval(&checkpoint, &data)?;
            print!("{}", table.to_csv());
        }
        Command::Report { run_dir } => {
            let report = cmd_report(&run_dir)?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command, returning
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
