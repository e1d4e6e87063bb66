//! Per-sample pose errors, aggregates, and occlusion bins.

use std::path::Path;

use hgnn::geometry::{
    angular_error, occlusion_level, position_error, Pose, DEFAULT_OCCLUSION_THRESHOLD,
};
use hgnn::model::{node_predictions, select_pose, Model, Observation};
use hgnn::sim::{Dataset, SceneSample};
use hgnn_autodiff::{ParamStore, Tape};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::observation;
use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 5] = [
    "sample_id",
    "object_id",
    "occlusion_pct",
    "pos_err_cm",
    "ang_err_deg",
];
pub const BIN_WIDTH_PCT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub sample_id: u32,
    pub object_id: String,
    pub occlusion_pct: f64,
    pub pos_err_cm: f64,
    pub ang_err_deg: f64,
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero for fewer than two values.
    pub se: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, se, n }
    }
}

/// Rows whose occlusion falls in `[lo, hi)` (the last bin also takes 100).
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionBin {
    pub lo: f64,
    pub hi: f64,
    pub position: Summary,
    pub angular: Summary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<EvalRow>,
    pub position: Summary,
    pub angular: Summary,
    /// Ten bins of 10 percentage points, empty ones included.
    pub bins: Vec<OcclusionBin>,
}

pub fn bin_index(occlusion_pct: f64) -> usize {
    ((occlusion_pct / BIN_WIDTH_PCT).floor().max(0.0) as usize).min(9)
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let pos: Vec<f64> = rows.iter().map(|r| r.pos_err_cm).collect();
        let ang: Vec<f64> = rows.iter().map(|r| r.ang_err_deg).collect();
        let bins = (0..10)
            .map(|b| {
                let in_bin: Vec<&EvalRow> = rows
                    .iter()
                    .filter(|r| bin_index(r.occlusion_pct) == b)
                    .collect();
                let p: Vec<f64> = in_bin.iter().map(|r| r.pos_err_cm).collect();
                let a: Vec<f64> = in_bin.iter().map(|r| r.ang_err_deg).collect();
                OcclusionBin {
                    lo: b as f64 * BIN_WIDTH_PCT,
                    hi: (b + 1) as f64 * BIN_WIDTH_PCT,
                    position: Summary::of(&p),
                    angular: Summary::of(&a),
                }
            })
            .collect();
        Self {
            position: Summary::of(&pos),
            angular: Summary::of(&ang),
            rows,
            bins,
        }
    }

    pub fn non_empty_bins(&self) -> usize {
        self.bins.iter().filter(|b| b.position.n > 0).count()
    }
}

/// The pose of the most confident node.
pub fn predict_pose(model: &Model, params: &ParamStore<f32>, obs: &Observation) -> Result<Pose> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let out = model.forward(&mut tape, &p, obs)?;
    Ok(select_pose(&node_predictions(&tape, &out))?)
}

/// Scores `predict` on the given samples. Samples are processed in
/// parallel; rows keep the order of `indices`.
pub fn evaluate_with<F>(dataset: &Dataset, indices: &[usize], predict: F) -> Result<MetricsReport>
where
    F: Fn(&SceneSample) -> Result<Pose> + Sync,
{
    if indices.is_empty() {
        return Err(HarnessError::config("nothing to evaluate"));
    }
    let rows: Vec<EvalRow> = indices
        .par_iter()
        .map(|&i| {
            let s = dataset
                .samples
                .get(i)
                .ok_or_else(|| HarnessError::config(format!("sample index {i} out of range")))?;
            let object = dataset.object(s);
            let est = predict(s)?;
            Ok(EvalRow {
                sample_id: s.sample_id,
                object_id: object.id.clone(),
                occlusion_pct: occlusion_level(
                    object,
                    &s.pose_gt,
                    &s.vision_cloud,
                    DEFAULT_OCCLUSION_THRESHOLD,
                )?,
                pos_err_cm: 100.0 * position_error(est.translation, s.pose_gt.translation),
                ang_err_deg: angular_error(est.rotation, s.pose_gt.rotation),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_rows(rows))
}

pub fn evaluate_model(
    cfg: &RunConfig,
    dataset: &Dataset,
    indices: &[usize],
    model: &Model,
    params: &ParamStore<f32>,
) -> Result<MetricsReport> {
    let mcfg = model.config;
    evaluate_with(dataset, indices, |s| {
        let obs = observation(dataset, s, &mcfg, cfg.max_tactile_points)?;
        predict_pose(model, params, &obs)
    })
}

pub fn write_metrics(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            r.object_id.clone(),
            r.occlusion_pct.to_string(),
            r.pos_err_cm.to_string(),
            r.ang_err_deg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(HarnessError::Parse {
            path: path.into(),
            detail: "unexpected metrics header".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || HarnessError::Parse {
            path: path.into(),
            detail: format!("bad metrics row {rec:?}"),
        };
        let num = |i: usize| {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(bad)
        };
        out.push(EvalRow {
            sample_id: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            object_id: rec.get(1).ok_or_else(bad)?.to_string(),
            occlusion_pct: num(2)?,
            pos_err_cm: num(3)?,
            ang_err_deg: num(4)?,
        });
    }
    Ok(out)
}

/// `bin_lo,bin_hi,count,pos_err_cm,pos_se_cm,ang_err_deg,ang_se_deg`; empty
/// bins are written with a zero count and `NaN` means.
pub fn write_bins(path: &Path, bins: &[OcclusionBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "bin_lo",
        "bin_hi",
        "count",
        "pos_err_cm",
        "pos_se_cm",
        "ang_err_deg",
        "ang_se_deg",
    ])?;
    for b in bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.position.n.to_string(),
            b.position.mean.to_string(),
            b.position.se.to_string(),
            b.angular.mean.to_string(),
            b.angular.se.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}
