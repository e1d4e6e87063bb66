//! Run configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hgnn::encoder::GraphConfig;
use hgnn::model::{ModelConfig, Variant};

use crate::error::{HarnessError, Result};

/// Everything a training or evaluation run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Fraction of samples used for training.
    pub split: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine decay target: the learning rate at the last step, as a
    /// fraction of `learning_rate`. 1 keeps it constant.
    pub lr_final: f64,
    pub variant: Variant,
    /// Message-passing rounds `L`.
    pub rounds: usize,
    pub top_k: usize,
    pub lambda: f64,
    pub r_multiplier: f64,
    pub k_inter: usize,
    /// Keeps only the first (nearest) contacts of every sensor.
    pub max_tactile_points: Option<usize>,
    pub out_dir: PathBuf,
    pub single_thread: bool,
    /// Optimizer steps between checkpoints.
    pub checkpoint_every: u64,
    /// Model points per object in the training objective.
    pub loss_points: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Stops training after this many optimizer steps.
    pub max_steps: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            dataset: PathBuf::from("data.vtds"),
            split: 0.8,
            seed: 1,
            epochs: 10,
            batch_size: 2,
            learning_rate: 1e-3,
            lr_final: 0.05,
            variant: Variant::Full,
            rounds: model.rounds,
            top_k: model.top_k,
            lambda: model.lambda,
            r_multiplier: model.graph.r_multiplier,
            k_inter: model.graph.k_inter,
            max_tactile_points: None,
            out_dir: PathBuf::from("runs"),
            single_thread: false,
            checkpoint_every: 200,
            loss_points: 512,
            clip_norm: 10.0,
            max_steps: None,
        }
    }
}

/// Recognized configuration keys; `-` and `_` are interchangeable.
pub const KEYS: &[&str] = &[
    "dataset",
    "split",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "lr_final",
    "model",
    "rounds",
    "top_k",
    "lambda",
    "r_multiplier",
    "k_inter",
    "max_tactile_points",
    "out_dir",
    "single_thread",
    "checkpoint_every",
    "loss_points",
    "clip_norm",
    "max_steps",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(HarnessError::config(format!(
            "`{key}`: expected a boolean, got `{value}`"
        ))),
    }
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.to_ascii_lowercase().as_str() {
        "none" | "" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = PathBuf::from(value),
            "split" => self.split = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "lr" | "learning_rate" => self.learning_rate = parse(&key, value)?,
            "lr_final" => self.lr_final = parse(&key, value)?,
            "model" | "flag" => {
                self.variant = value
                    .parse()
                    .map_err(|e: hgnn::HgnnError| HarnessError::config(e.to_string()))?
            }
            "rounds" => self.rounds = parse(&key, value)?,
            "top_k" => self.top_k = parse(&key, value)?,
            "lambda" => self.lambda = parse(&key, value)?,
            "r_multiplier" => self.r_multiplier = parse(&key, value)?,
            "k_inter" => self.k_inter = parse(&key, value)?,
            "max_tactile_points" => self.max_tactile_points = parse_optional(&key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "single_thread" => self.single_thread = parse_bool(&key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(&key, value)?,
            "loss_points" => self.loss_points = parse(&key, value)?,
            "clip_norm" => self.clip_norm = parse(&key, value)?,
            "max_steps" => self.max_steps = parse_optional(&key, value)?,
            _ => return Err(HarnessError::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.apply(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        self.apply_text(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Serializes every key; `apply_text` on the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<u64>| v.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "dataset = {}", self.dataset.display());
        let _ = writeln!(s, "split = {:?}", self.split);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {:?}", self.learning_rate);
        let _ = writeln!(s, "lr_final = {:?}", self.lr_final);
        let _ = writeln!(s, "model = {}", self.variant);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "top_k = {}", self.top_k);
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "r_multiplier = {:?}", self.r_multiplier);
        let _ = writeln!(s, "k_inter = {}", self.k_inter);
        let _ = writeln!(
            s,
            "max_tactile_points = {}",
            opt(self.max_tactile_points.map(|v| v as u64))
        );
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "single_thread = {}", self.single_thread);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "loss_points = {}", self.loss_points);
        let _ = writeln!(s, "clip_norm = {:?}", self.clip_norm);
        let _ = writeln!(s, "max_steps = {}", opt(self.max_steps));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(HarnessError::config(format!(
                "split {} outside (0, 1)",
                self.split
            )));
        }
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("rounds", self.rounds),
            ("top_k", self.top_k),
            ("k_inter", self.k_inter),
            ("loss_points", self.loss_points),
            ("checkpoint_every", self.checkpoint_every as usize),
            ("max_tactile_points", self.max_tactile_points.unwrap_or(1)),
            ("max_steps", self.max_steps.unwrap_or(1) as usize),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::config(format!("`{k}` must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= 1.0) {
            return Err(HarnessError::config(format!(
                "lr_final {} outside (0, 1]",
                self.lr_final
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(HarnessError::config(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        if !(self.r_multiplier > 0.0 && self.r_multiplier.is_finite()) {
            return Err(HarnessError::config(format!(
                "r_multiplier {} must be positive",
                self.r_multiplier
            )));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(HarnessError::config(format!(
                "clip_norm {} must be non-negative",
                self.clip_norm
            )));
        }
        self.model_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = ModelConfig::default();
        ModelConfig {
            variant: self.variant,
            rounds: self.rounds,
            top_k: self.top_k,
            lambda: self.lambda,
            graph: GraphConfig {
                r_multiplier: self.r_multiplier,
                k_inter: self.k_inter,
                ..base.graph
            },
            ..base
        }
    }
}

/// Resolves repeated `--flag` values. `full` combines with anything; two
/// different ablations are rejected.
pub fn variant_from_flags<S: AsRef<str>>(flags: &[S]) -> Result<Option<Variant>> {
    let mut chosen: Option<Variant> = None;
    for f in flags {
        let v: Variant = f
            .as_ref()
            .parse()
            .map_err(|e: hgnn::HgnnError| HarnessError::config(e.to_string()))?;
        chosen = match (chosen, v) {
            (None, v) => Some(v),
            (Some(a), Variant::Full) => Some(a),
            (Some(Variant::Full), b) => Some(b),
            (Some(a), b) if a == b => Some(a),
            (Some(a), b) => {
                return Err(HarnessError::config(format!(
                    "model flags {a} and {b} are mutually exclusive"
                )))
            }
        };
    }
    Ok(chosen)
}

/// Learning rate at `step` of `total`: cosine from `lr` down to
/// `lr * final_fraction`.
pub fn scheduled_lr(lr: f64, final_fraction: f64, step: u64, total: u64) -> f64 {
    if total <= 1 {
        return lr;
    }
    let t = (step.min(total - 1) as f64) / ((total - 1) as f64);
    lr * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}
