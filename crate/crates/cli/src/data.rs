//! Train/test split and per-sample model inputs.

use hgnn::geometry::Vec3;
use hgnn::model::{ModelConfig, Observation};
use hgnn::sim::{Dataset, SceneSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

/// Sorted, disjoint sample indices covering the dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts at `round(n * fraction)`, keeping at
/// least one sample on each side.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(HarnessError::config(format!("cannot split {n} samples")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HarnessError::config(format!(
            "split {fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// The sample with at most `cap` contacts per sensor. Contacts are stored
/// nearest first, so truncation keeps the strongest ones.
pub fn cap_tactile(sample: &SceneSample, cap: Option<usize>) -> SceneSample {
    let mut s = sample.clone();
    if let Some(cap) = cap {
        for c in &mut s.touch_clouds {
            c.points.truncate(cap);
            if let Some(colors) = &mut c.colors {
                colors.truncate(cap);
            }
        }
    }
    s
}

pub fn observation(
    dataset: &Dataset,
    sample: &SceneSample,
    model: &ModelConfig,
    cap: Option<usize>,
) -> Result<Observation> {
    let s = cap_tactile(sample, cap);
    let diameter = dataset.object(sample).diameter;
    Ok(Observation::new(
        &s,
        &dataset.camera,
        diameter,
        &model.graph,
    )?)
}

/// Every `ceil(m / k)`-th model point: a fixed, evenly spread subset for
/// the training objective.
pub fn loss_points(points: &[Vec3], k: usize) -> Vec<Vec3> {
    let stride = points.len().div_ceil(k.max(1)).max(1);
    points.iter().step_by(stride).copied().collect()
}
