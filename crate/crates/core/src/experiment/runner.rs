use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::ExperimentSpec;
use crate::diagnostics::{write_confusion, write_metrics, MetricsRecord};
use crate::error::{Error, Result};
use crate::methods::{train, Method, TrainConfig};

/// Outcome of one (method, seed) pair.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub final_error: f64,
}

/// Per-method aggregate of final test error.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub n: usize,
}

pub fn metrics_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{method}_{seed}_metrics.csv"))
}

pub fn confusion_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{method}_{seed}_confusion.csv"))
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.csv")
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(results: &[RunResult], methods: &[Method]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&m| {
            let errors: Vec<f64> = results.iter().filter(|r| r.method == m).map(|r| r.final_error).collect();
            let (mean, std) = mean_std(&errors);
            SummaryRow {
                method: m,
                mean,
                std,
                n: errors.len(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,mean_test_error,std_test_error,n\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.16e},{:.16e},{}", r.method, r.mean, r.std, r.n);
    }
    out
}

/// Trains one method on the split generated from `seed`.
pub fn run_one(spec: &ExperimentSpec, method: Method, seed: u64) -> Result<(RunResult, crate::diagnostics::ConfusionMatrix)> {
    let split = spec.data.build(seed)?;
    let config = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let out = train(method, &split, &spec.model, &config)?;
    let final_error = match out.records.last() {
        Some(r) => r.test_error,
        None => crate::diagnostics::evaluate_error(&out.params, &split.test, method.uses_aux(&config))?,
    };
    Ok((
        RunResult {
            method,
            seed,
            records: out.records,
            final_error,
        },
        out.confusion,
    ))
}

/// Runs the sweep sequentially, writing per-run files as each run finishes
/// and `summary.csv` at the end. Files of finished runs survive a failure.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<SummaryRow>> {
    run_with_progress(spec, |_| {})
}

pub fn run_with_progress(spec: &ExperimentSpec, mut progress: impl FnMut(&RunResult)) -> Result<Vec<SummaryRow>> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(|e| Error::io(&spec.out_dir, e))?;
    let mut results = Vec::with_capacity(spec.methods.len() * spec.seeds.len());
    for &method in &spec.methods {
        for &seed in &spec.seeds {
            let (result, confusion) = run_one(spec, method, seed)?;
            write_metrics(&result.records, &metrics_path(&spec.out_dir, method, seed))?;
            write_confusion(&confusion, &confusion_path(&spec.out_dir, method, seed))?;
            progress(&result);
            results.push(result);
        }
    }
    let rows = summarize(&results, &spec.methods);
    let path = summary_path(&spec.out_dir);
    fs::write(&path, summary_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
