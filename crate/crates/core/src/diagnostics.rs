//! Test error, rotation-head specialization, and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::{rotation_quadruple, Example, ANGLES};
use crate::error::{Error, Result};
use crate::model::{predict, test_predict, ModelParameters};

pub const METRICS_HEADER: &str = "epoch,supervised_ce,rotation_ce,sharpen_ce,aux_ce,total,test_error,diagonality";

/// Row-stochastic `C x C` matrix. Entry `(i, j)` is the fraction of rotated
/// copies of class `i` whose angle is best predicted by head `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    entries: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, entries: Vec<f64>) -> Result<Self> {
        if classes == 0 || entries.len() != classes * classes {
            return Err(Error::dim("confusion", format!("{} entries for {classes} classes", entries.len())));
        }
        for (row, r) in entries.chunks(classes).enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NotDistribution {
                    op: "confusion",
                    row,
                    sum,
                });
            }
        }
        Ok(ConfusionMatrix { classes, entries })
    }

    pub fn identity(classes: usize) -> Self {
        let mut entries = vec![0.0; classes * classes];
        for i in 0..classes {
            entries[i * classes + i] = 1.0;
        }
        ConfusionMatrix { classes, entries }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.classes..(i + 1) * self.classes]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Trace over `C`.
pub fn diagonality(m: &ConfusionMatrix) -> f64 {
    (0..m.classes).map(|i| m.get(i, i)).sum::<f64>() / m.classes as f64
}

/// Confusion matrix from head outputs `[N, C, K]` of rotated copies with
/// known class and angle. The best head is the one with the highest
/// probability on the true angle; ties go to the lowest index.
pub fn confusion_from_heads(head_dists: &Tensor, classes: &[usize], angles: &[usize]) -> Result<ConfusionMatrix> {
    let shape = head_dists.shape();
    if shape.len() != 3 || shape[0] != classes.len() || angles.len() != classes.len() {
        return Err(Error::dim("confusion", format!("heads {shape:?} for {} labels", classes.len())));
    }
    let (c, k) = (shape[1], shape[2]);
    let mut counts = vec![0usize; c * c];
    let mut totals = vec![0usize; c];
    for (n, (&y, &z)) in classes.iter().zip(angles).enumerate() {
        if y >= c || z >= k {
            return Err(Error::invalid(format!("label ({y}, {z}) out of range")));
        }
        let base = n * c * k;
        let mut best = 0;
        for j in 1..c {
            if head_dists.values()[base + j * k + z] > head_dists.values()[base + best * k + z] {
                best = j;
            }
        }
        counts[y * c + best] += 1;
        totals[y] += 1;
    }
    if let Some(missing) = totals.iter().position(|&t| t == 0) {
        return Err(Error::invalid(format!("class {missing} has no examples")));
    }
    let entries = counts
        .iter()
        .enumerate()
        .map(|(idx, &n)| n as f64 / totals[idx / c] as f64)
        .collect();
    ConfusionMatrix::new(c, entries)
}

/// Head specialization over all four rotated copies of every example.
pub fn head_confusion(params: &ModelParameters, examples: &[&Example]) -> Result<ConfusionMatrix> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples for head confusion"));
    }
    let mut images = Vec::with_capacity(examples.len() * ANGLES);
    let mut classes = Vec::with_capacity(images.capacity());
    let mut angles = Vec::with_capacity(images.capacity());
    for ex in examples {
        for r in rotation_quadruple(&ex.image)? {
            images.push(r.image);
            classes.push(ex.label);
            angles.push(r.angle);
        }
    }
    let refs: Vec<_> = images.iter().collect();
    let pred = predict(params, &refs)?;
    confusion_from_heads(&pred.head_dists, &classes, &angles)
}

/// Fraction of `examples` misclassified at test time.
pub fn evaluate_error(params: &ModelParameters, examples: &[Example], use_aux: bool) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let images: Vec<_> = examples.iter().map(|e| &e.image).collect();
    let predicted = test_predict(params, &images, use_aux)?;
    Ok(error_rate(&predicted, examples.iter().map(|e| e.label)))
}

pub fn error_rate(predicted: &[usize], truth: impl IntoIterator<Item = usize>) -> f64 {
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| **p != *t).count();
    wrong as f64 / predicted.len() as f64
}

/// One row of the per-epoch training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub supervised_ce: f64,
    pub rotation_ce: f64,
    pub sharpen_ce: f64,
    pub aux_ce: f64,
    pub total: f64,
    pub test_error: f64,
    pub diagonality: f64,
}

impl MetricsRecord {
    fn reals(&self) -> [f64; 7] {
        [
            self.supervised_ce,
            self.rotation_ce,
            self.sharpen_ce,
            self.aux_ce,
            self.total,
            self.test_error,
            self.diagonality,
        ]
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.epoch);
        for v in r.reals() {
            out.push(',');
            out.push_str(&fmt_real(v));
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_reals(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(path, line, format!("`{f}`: {e}")))
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(parse_err(path, 1, "missing metrics header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let (epoch, rest) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, lineno, "too few fields"))?;
        let epoch = epoch
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("epoch: {e}")))?;
        let v = parse_reals(path, lineno, rest)?;
        if v.len() != 7 {
            return Err(parse_err(path, lineno, format!("expected 8 fields, got {}", v.len() + 1)));
        }
        out.push(MetricsRecord {
            epoch,
            supervised_ce: v[0],
            rotation_ce: v[1],
            sharpen_ce: v[2],
            aux_ce: v[3],
            total: v[4],
            test_error: v[5],
            diagonality: v[6],
        });
    }
    Ok(out)
}

pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.classes {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_real(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_confusion(m: &ConfusionMatrix, path: &Path) -> Result<()> {
    fs::write(path, confusion_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn read_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        entries.extend(parse_reals(path, i + 1, line)?);
        rows += 1;
    }
    ConfusionMatrix::new(rows, entries)
}
