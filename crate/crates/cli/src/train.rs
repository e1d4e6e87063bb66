//! Mini-batch training with checkpoints and a loss log.

use std::fs;
use std::path::{Path, PathBuf};

use hgnn::geometry::Vec3;
use hgnn::model::{Model, Observation};
use hgnn::sim::{child_seed, Dataset};
use hgnn_autodiff::{checkpoint, optim_step, OptimState, ParamGrads, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{scheduled_lr, RunConfig};
use crate::data::{loss_points, observation, split_indices};
use crate::error::{HarnessError, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STATE_FILE: &str = "checkpoint.state";
pub const CONFIG_FILE: &str = "run.cfg";
pub const LOG_FILE: &str = "train_log.csv";

/// Parameters plus the optimizer state needed to continue training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub optim: OptimState<f32>,
    /// Optimizer steps taken.
    pub step: u64,
}

/// Result of a completed training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub state: TrainState,
    /// `(step, mean batch loss)` rows of the log, including any steps
    /// restored from a resumed run.
    pub losses: Vec<(u64, f64)>,
    pub checkpoint: PathBuf,
}

/// Runs `f` on a single worker thread when `single` is set, otherwise on
/// the global pool.
pub fn with_threads<R: Send>(single: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    if single {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

pub fn save_checkpoint(dir: &Path, state: &TrainState) -> Result<PathBuf> {
    let mut records: Vec<(String, Tensor<f32>)> = Vec::new();
    for (name, t) in state.params.iter() {
        records.push((name.to_string(), t.clone()));
    }
    for (id, (name, _)) in state.params.ids().zip(state.params.iter()) {
        records.push((
            format!("adam.m.{name}"),
            state.optim.first_moment[id.index()].clone(),
        ));
        records.push((
            format!("adam.v.{name}"),
            state.optim.second_moment[id.index()].clone(),
        ));
    }
    // Written beside the target and renamed so an interrupted write never
    // replaces the last good checkpoint.
    let path = dir.join(CHECKPOINT_FILE);
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    checkpoint::save(&tmp, &records)?;
    fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e))?;
    let meta = format!(
        "step = {}\nlearning_rate = {:?}\n",
        state.step, state.optim.learning_rate
    );
    let meta_path = dir.join(STATE_FILE);
    fs::write(&meta_path, meta).map_err(|e| HarnessError::io(&meta_path, e))?;
    Ok(path)
}

/// Restores a checkpoint into freshly built parameters of `model`'s layout.
pub fn load_checkpoint(path: &Path, fresh: ParamStore<f32>) -> Result<TrainState> {
    let records: Vec<(String, Tensor<f32>)> =
        checkpoint::load(path).map_err(|e| HarnessError::Parse {
            path: path.into(),
            detail: e.to_string(),
        })?;
    let mut params = fresh;
    let (param_records, rest): (Vec<_>, Vec<_>) = records
        .into_iter()
        .partition(|(n, _)| !n.starts_with("adam."));
    if param_records.len() != params.len() {
        return Err(HarnessError::Parse {
            path: path.into(),
            detail: format!(
                "{} parameter records for a model with {}",
                param_records.len(),
                params.len()
            ),
        });
    }
    params.load_named(&param_records)?;
    let mut optim = OptimState::new(&params, 1e-3);
    for (name, t) in rest {
        let (slot, pname) = if let Some(p) = name.strip_prefix("adam.m.") {
            (&mut optim.first_moment, p)
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            (&mut optim.second_moment, p)
        } else {
            continue;
        };
        let id = params.find(pname).ok_or_else(|| HarnessError::Parse {
            path: path.into(),
            detail: format!("moment for unknown parameter `{pname}`"),
        })?;
        if t.shape() != params.get(id).shape() {
            return Err(HarnessError::Parse {
                path: path.into(),
                detail: format!("moment `{name}` has the wrong shape"),
            });
        }
        slot[id.index()] = t;
    }
    let meta_path = path.with_file_name(STATE_FILE);
    let meta = fs::read_to_string(&meta_path).map_err(|e| HarnessError::io(&meta_path, e))?;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let bad = || HarnessError::Parse {
            path: meta_path.clone(),
            detail: format!("bad line `{line}`"),
        };
        match k.trim() {
            "step" => optim.step = v.trim().parse().map_err(|_| bad())?,
            "learning_rate" => optim.learning_rate = v.trim().parse().map_err(|_| bad())?,
            _ => {}
        }
    }
    Ok(TrainState {
        step: optim.step,
        params,
        optim,
    })
}

/// One sample's loss and parameter gradients.
pub fn sample_gradient(
    model: &Model,
    params: &ParamStore<f32>,
    obs: &Observation,
    pose: &hgnn::geometry::Pose,
    points: &[Vec3],
) -> Result<(f64, ParamGrads<f32>)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let (loss, _) = model.loss(&mut tape, &p, obs, pose, points)?;
    let value = tape.value(loss).item() as f64;
    if !value.is_finite() {
        return Ok((value, ParamGrads::zeros_like(params)));
    }
    let g = tape.backward(loss)?;
    Ok((value, p.gradients(&tape, &g)))
}

struct Prepared {
    obs: Observation,
    pose: hgnn::geometry::Pose,
    points: Vec<Vec3>,
}

fn prepare(cfg: &RunConfig, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Prepared>> {
    let mcfg = cfg.model_config();
    indices
        .par_iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            Ok(Prepared {
                obs: observation(dataset, s, &mcfg, cfg.max_tactile_points)?,
                pose: s.pose_gt,
                points: loss_points(&dataset.object(s).surface_points, cfg.loss_points),
            })
        })
        .collect()
}

fn write_log(path: &Path, rows: &[(u64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (s, l) in rows {
        w.write_record([s.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Reads a `step,loss` log.
pub fn read_log(path: &Path) -> Result<Vec<(u64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || HarnessError::Parse {
            path: path.into(),
            detail: format!("bad log row {rec:?}"),
        };
        let step = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let loss = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.push((step, loss));
    }
    Ok(out)
}

/// Trains on the training split of `dataset` from scratch.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = split_indices(dataset.samples.len(), cfg.split, cfg.seed)?;
    train_on(cfg, dataset, &split.train, None)
}

/// Trains on `indices`, optionally continuing from a checkpoint.
///
/// Each epoch visits the samples in an order drawn from `(seed, epoch)`;
/// a step averages the gradients of one batch in a fixed order, so the
/// result does not depend on the thread count. Writes `run.cfg`,
/// `train_log.csv` and the checkpoint to `cfg.out_dir`.
pub fn train_on(
    cfg: &RunConfig,
    dataset: &Dataset,
    indices: &[usize],
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(HarnessError::config("no training samples"));
    }
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| HarnessError::io(&cfg_path, e))?;

    let (model, fresh) = Model::new::<f32>(cfg.model_config(), cfg.seed)?;
    let mut state = match resume {
        Some(path) => load_checkpoint(path, fresh)?,
        None => {
            let optim = OptimState::new(&fresh, cfg.learning_rate);
            TrainState {
                params: fresh,
                optim,
                step: 0,
            }
        }
    };
    let log_path = dir.join(LOG_FILE);
    let mut log = match resume {
        Some(_) if log_path.exists() => {
            let mut rows = read_log(&log_path)?;
            rows.retain(|&(s, _)| s < state.step);
            rows
        }
        _ => Vec::new(),
    };

    with_threads(cfg.single_thread, || {
        run_epochs(cfg, dataset, indices, &model, &mut state, &mut log)
    })??;

    let checkpoint = save_checkpoint(dir, &state)?;
    write_log(&log_path, &log)?;
    Ok(TrainOutcome {
        model,
        state,
        losses: log,
        checkpoint,
    })
}

fn run_epochs(
    cfg: &RunConfig,
    dataset: &Dataset,
    indices: &[usize],
    model: &Model,
    state: &mut TrainState,
    log: &mut Vec<(u64, f64)>,
) -> Result<()> {
    let data = prepare(cfg, dataset, indices)?;
    let per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    // The schedule spans all epochs; `max_steps` only stops early, so an
    // interrupted run resumes onto the same trajectory.
    let planned = per_epoch * cfg.epochs as u64;
    let total = cfg.max_steps.unwrap_or(planned).min(planned);
    let log_path = cfg.out_dir.join(LOG_FILE);
    let mut last_good: Option<PathBuf> = None;
    let mut epoch_order: Option<(u64, Vec<usize>)> = None;
    while state.step < total {
        let epoch = state.step / per_epoch;
        let within = (state.step % per_epoch) as usize;
        if epoch_order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, epoch)));
            epoch_order = Some((epoch, order));
        }
        let order = &epoch_order.as_ref().expect("set above").1;
        let batch =
            &order[within * cfg.batch_size..((within + 1) * cfg.batch_size).min(order.len())];
        let results: Vec<Result<(f64, ParamGrads<f32>)>> = batch
            .par_iter()
            .map(|&i| {
                sample_gradient(
                    model,
                    &state.params,
                    &data[i].obs,
                    &data[i].pose,
                    &data[i].points,
                )
            })
            .collect();
        let mut grads = ParamGrads::zeros_like(&state.params);
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.accumulate(&g);
        }
        loss /= batch.len() as f64;
        if !loss.is_finite() || !grads.all_finite() {
            write_log(&log_path, log)?;
            let existing = cfg.out_dir.join(CHECKPOINT_FILE);
            let checkpoint = last_good.or_else(|| existing.exists().then_some(existing));
            return Err(HarnessError::Diverged {
                step: state.step,
                loss,
                checkpoint,
            });
        }
        grads.scale(1.0 / batch.len() as f32);
        if cfg.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale((cfg.clip_norm / norm) as f32);
            }
        }
        log.push((state.step, loss));
        state.optim.learning_rate =
            scheduled_lr(cfg.learning_rate, cfg.lr_final, state.step, planned);
        optim_step(&mut state.params, &grads, &mut state.optim)?;
        state.step = state.optim.step;
        if state.step % cfg.checkpoint_every == 0 {
            last_good = Some(save_checkpoint(&cfg.out_dir, state)?);
            write_log(&log_path, log)?;
        }
    }
    Ok(())
}
