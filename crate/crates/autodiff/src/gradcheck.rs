//! Central finite-difference verification of tape gradients.

use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::{AdError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Finite-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// When set, only this many randomly chosen coordinates of each input
    /// are perturbed. Large parameter tensors make exhaustive checks slow.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the maximum was attained.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

/// Compares analytic gradients of a scalar function against central
/// differences over every input coordinate, returning the max of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, GradCheckOptions::default()).map(|r| r.max_rel_error)
}

pub fn grad_check_with<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if let Some((node, op)) = tape.first_non_finite() {
        return Err(AdError::NonFinite { op, node });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zero(&tape, v)).collect();
    drop(tape);

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if let Some((node, op)) = tape.first_non_finite() {
            return Err(AdError::NonFinite { op, node });
        }
        Ok(tape.value(out).item())
    };

    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
