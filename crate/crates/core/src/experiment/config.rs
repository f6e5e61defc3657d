use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::methods::{Method, TrainConfig};
use crate::model::ModelConfig;

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "methods",
    "seeds",
    "out",
    "classes",
    "height",
    "width",
    "n_per_class",
    "n_labeled",
    "n_test",
    "noise",
    "jitter",
    "backbone",
    "proj_dim",
    "head_hidden",
    "eta",
    "eta1",
    "eta2",
    "ramp_fraction",
    "temp",
    "alpha_min",
    "alpha_max",
    "lr",
    "momentum",
    "batch_size",
    "epochs",
    "use_aux",
    "diag_samples",
];

/// A method x seed sweep. Each run regenerates its data from its seed, so
/// methods compared at the same seed see the same split.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let data = DataConfig::default();
        ExperimentSpec {
            methods: vec![Method::Crae],
            seeds: vec![0],
            model: ModelConfig::new(data.height * data.width, data.classes),
            data,
            train: TrainConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(config_err("methods", "at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if self.model.classes != self.data.classes || self.model.input_dim != self.data.height * self.data.width {
            return Err(config_err("classes", "model and data dimensions disagree"));
        }
        self.train.validate()?;
        self.model.validate()
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub methods: Option<Vec<Method>>,
    pub seeds: Option<Vec<u64>>,
    pub labels: Option<usize>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub eta: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub temp: Option<f64>,
    pub proj_dim: Option<usize>,
    pub no_aux: bool,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| config_err(key, format!("cannot parse `{value}`: {e}")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(config_err(key, format!("`{value}` is not a boolean"))),
    }
}

fn parse_methods(value: &str) -> Result<Vec<Method>> {
    if value.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: Error| config_err("methods", e.to_string())))
        .collect()
}

fn apply(spec: &mut ExperimentSpec, key: &str, value: &str) -> Result<()> {
    let t = &mut spec.train;
    let d = &mut spec.data;
    let m = &mut spec.model;
    match key {
        "methods" => spec.methods = parse_methods(value)?,
        "seeds" => spec.seeds = list(key, value)?,
        "out" => spec.out_dir = PathBuf::from(value),
        "classes" => d.classes = scalar(key, value)?,
        "height" => d.height = scalar(key, value)?,
        "width" => d.width = scalar(key, value)?,
        "n_per_class" => d.n_per_class = scalar(key, value)?,
        "n_labeled" => d.n_labeled = scalar(key, value)?,
        "n_test" => d.n_test = scalar(key, value)?,
        "noise" => d.noise = scalar(key, value)?,
        "jitter" => d.jitter = scalar(key, value)?,
        "backbone" => m.backbone_widths = list(key, value)?,
        "proj_dim" => m.proj_dim = scalar(key, value)?,
        "head_hidden" => m.head_hidden = scalar(key, value)?,
        "eta" => t.eta = scalar(key, value)?,
        "eta1" => t.eta1 = scalar(key, value)?,
        "eta2" => t.eta2 = scalar(key, value)?,
        "ramp_fraction" => t.ramp_fraction = scalar(key, value)?,
        "temp" => t.temperature = scalar(key, value)?,
        "alpha_min" => t.alpha_min = scalar(key, value)?,
        "alpha_max" => t.alpha_max = scalar(key, value)?,
        "lr" => t.lr = scalar(key, value)?,
        "momentum" => t.momentum = scalar(key, value)?,
        "batch_size" => t.batch_size = scalar(key, value)?,
        "epochs" => t.epochs = scalar(key, value)?,
        "use_aux" => t.use_aux = boolean(key, value)?,
        "diag_samples" => t.diag_samples = scalar(key, value)?,
        _ => return Err(config_err(key, "unknown key")),
    }
    Ok(())
}

/// Parses flat `key = value` text. `#` starts a comment; blank lines are
/// skipped; absent keys keep their defaults.
pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected `key = value`"))?;
        apply(&mut spec, key.trim(), value.trim())?;
    }
    apply_overrides(&mut spec, overrides);
    spec.model.input_dim = spec.data.height * spec.data.width;
    spec.model.classes = spec.data.classes;
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentSpec> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

fn apply_overrides(spec: &mut ExperimentSpec, o: &Overrides) {
    if let Some(v) = &o.methods {
        spec.methods = v.clone();
    }
    if let Some(v) = &o.seeds {
        spec.seeds = v.clone();
    }
    if let Some(v) = o.labels {
        spec.data.n_labeled = v;
    }
    if let Some(v) = o.epochs {
        spec.train.epochs = v;
    }
    if let Some(v) = &o.out {
        spec.out_dir = v.clone();
    }
    if let Some(v) = o.eta {
        spec.train.eta = v;
    }
    if let Some(v) = o.eta1 {
        spec.train.eta1 = v;
    }
    if let Some(v) = o.eta2 {
        spec.train.eta2 = v;
    }
    if let Some(v) = o.temp {
        spec.train.temperature = v;
    }
    if let Some(v) = o.proj_dim {
        spec.model.proj_dim = v;
    }
    if o.no_aux {
        spec.train.use_aux = false;
    }
}
