//! Dataset generation settings, the ablation table, and the tactile sweep.

use std::fs;
use std::path::Path;

use hgnn::model::Variant;
use hgnn::sim::{default_library, CameraModel, Dataset, GripperConfig};

use crate::config::RunConfig;
use crate::data::split_indices;
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate_model, write_metrics, EvalRow, MetricsReport, Summary};
use crate::train::train_on;

pub const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];
pub const SWEEP_CAPS: [usize; 4] = [4, 8, 16, 32];

/// Settings of a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub samples: usize,
    pub seed: u64,
    /// Object categories drawn from the default library (1 to 5).
    pub objects: usize,
    pub max_points_per_sensor: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 1,
            objects: 5,
            max_points_per_sensor: GripperConfig::default().max_points_per_sensor,
        }
    }
}

impl GenSpec {
    pub fn generate(&self) -> Result<Dataset> {
        let mut library = default_library(self.seed)?;
        if self.objects == 0 || self.objects > library.len() {
            return Err(HarnessError::config(format!(
                "object count {} outside 1..={}",
                self.objects,
                library.len()
            )));
        }
        library.truncate(self.objects);
        let gripper = GripperConfig {
            max_points_per_sensor: self.max_points_per_sensor,
            ..GripperConfig::default()
        };
        Ok(Dataset::generate(
            self.samples,
            library,
            gripper,
            CameraModel::default(),
            self.seed,
        )?)
    }
}

/// Train on the split of `cfg.seed`, evaluate on its test part, and write
/// `metrics.csv` beside the checkpoint.
pub fn train_and_evaluate(cfg: &RunConfig, dataset: &Dataset) -> Result<MetricsReport> {
    let split = split_indices(dataset.samples.len(), cfg.split, cfg.seed)?;
    let out = train_on(cfg, dataset, &split.train, None)?;
    let report = crate::train::with_threads(cfg.single_thread, || {
        evaluate_model(cfg, dataset, &split.test, &out.model, &out.state.params)
    })??;
    write_metrics(&cfg.out_dir.join("metrics.csv"), &report.rows)?;
    Ok(report)
}

/// One model's errors pooled over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub position: Summary,
    pub angular: Summary,
}

impl SummaryRow {
    fn of(label: String, rows: &[EvalRow]) -> Self {
        let p: Vec<f64> = rows.iter().map(|r| r.pos_err_cm).collect();
        let a: Vec<f64> = rows.iter().map(|r| r.ang_err_deg).collect();
        Self {
            label,
            position: Summary::of(&p),
            angular: Summary::of(&a),
        }
    }
}

/// A single training run of the ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub position: Summary,
    pub angular: Summary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    /// One row per variant, in [`Variant::ALL`] order.
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == v.name())
    }
}

/// Trains and evaluates every variant for every seed. Each seed fixes
/// the split and the initialization, so variants are compared on
/// identical test samples. Runs go to `out_dir/<variant>/seed<k>`.
pub fn ablate(base: &RunConfig, dataset: &Dataset, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(HarnessError::config("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for v in Variant::ALL {
        let mut pooled = Vec::new();
        for &seed in seeds {
            let cfg = RunConfig {
                variant: v,
                seed,
                out_dir: base.out_dir.join(v.name()).join(format!("seed{seed}")),
                ..base.clone()
            };
            let report = train_and_evaluate(&cfg, dataset)?;
            runs.push(AblationRun {
                variant: v,
                seed,
                position: report.position,
                angular: report.angular,
            });
            pooled.extend(report.rows);
        }
        rows.push(SummaryRow::of(v.name().to_string(), &pooled));
    }
    Ok(AblationReport { rows, runs })
}

/// Re-generates the dataset for every cap, then trains and evaluates on
/// each. Runs go to `out_dir/cap<c>`.
pub fn sweep_tactile(
    base: &RunConfig,
    spec: &GenSpec,
    caps: &[usize],
) -> Result<Vec<(usize, SummaryRow)>> {
    let mut out = Vec::new();
    for &cap in caps {
        let dir = base.out_dir.join(format!("cap{cap}"));
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let data_path = dir.join("data.vtds");
        let dataset = GenSpec {
            max_points_per_sensor: cap,
            ..*spec
        }
        .generate()?;
        dataset.save(&data_path)?;
        let cfg = RunConfig {
            dataset: data_path,
            out_dir: dir,
            max_tactile_points: None,
            ..base.clone()
        };
        let report = train_and_evaluate(&cfg, &dataset)?;
        out.push((cap, SummaryRow::of(cap.to_string(), &report.rows)));
    }
    Ok(out)
}

fn write_summary(path: &Path, first: &str, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        first,
        "pos_err_cm",
        "pos_se_cm",
        "ang_err_deg",
        "ang_se_deg",
        "n",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.position.mean.to_string(),
            r.position.se.to_string(),
            r.angular.mean.to_string(),
            r.angular.se.to_string(),
            r.position.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

fn read_summary(path: &Path, first: &str) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some(first) || header.len() != 6 {
        return Err(HarnessError::Parse {
            path: path.into(),
            detail: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || HarnessError::Parse {
            path: path.into(),
            detail: format!("bad row {rec:?}"),
        };
        let num = |i: usize| {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(bad)
        };
        let n = rec.get(5).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.push(SummaryRow {
            label: rec.get(0).ok_or_else(bad)?.to_string(),
            position: Summary {
                mean: num(1)?,
                se: num(2)?,
                n,
            },
            angular: Summary {
                mean: num(3)?,
                se: num(4)?,
                n,
            },
        });
    }
    Ok(out)
}

/// `model,pos_err_cm,pos_se_cm,ang_err_deg,ang_se_deg,n` where `n` counts
/// the pooled test samples.
pub fn write_ablation(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_summary(path, "model", rows)
}

pub fn read_ablation(path: &Path) -> Result<Vec<SummaryRow>> {
    read_summary(path, "model")
}

/// `cap,pos_err_cm,pos_se_cm,ang_err_deg,ang_se_deg,n`.
pub fn write_sweep(path: &Path, rows: &[(usize, SummaryRow)]) -> Result<()> {
    let rows: Vec<SummaryRow> = rows.iter().map(|(_, r)| r.clone()).collect();
    write_summary(path, "cap", &rows)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SummaryRow>> {
    read_summary(path, "cap")
}

/// `model,seed,pos_err_cm,pos_se_cm,ang_err_deg,ang_se_deg`, one row per run.
pub fn write_ablation_runs(path: &Path, runs: &[AblationRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "seed",
        "pos_err_cm",
        "pos_se_cm",
        "ang_err_deg",
        "ang_se_deg",
    ])?;
    for r in runs {
        w.write_record([
            r.variant.name().to_string(),
            r.seed.to_string(),
            r.position.mean.to_string(),
            r.position.se.to_string(),
            r.angular.mean.to_string(),
            r.angular.se.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}
