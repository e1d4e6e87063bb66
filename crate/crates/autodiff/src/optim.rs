use crate::error::{shape_err, AdError, Result};
use crate::params::{ParamGrads, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ParamStore<T>, learning_rate: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment update of every parameter.
pub fn optim_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamGrads<T>,
    state: &mut OptimState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return shape_err(
            "optim_step",
            format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        );
    }
    for id in params.ids() {
        let g = grads
            .get(id)
            .ok_or_else(|| AdError::MissingGradient(params.name(id).to_string()))?;
        if g.shape() != params.get(id).shape() {
            return shape_err(
                "optim_step",
                format!("gradient for `{}` is {:?}", params.name(id), g.shape()),
            );
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::from_f64(1.0 / (1.0 - b1.powi(t)));
    let c2 = T::from_f64(1.0 / (1.0 - b2.powi(t)));
    let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
    let lr = T::from_f64(state.learning_rate);
    let eps = T::from_f64(state.epsilon);
    let one = T::one();

    for id in params.ids() {
        let g = grads.get(id).expect("checked above").data();
        let i = id.index();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let w = params.get_mut(id).data_mut();
        for k in 0..w.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let m_hat = m[k] * c1;
            let v_hat = v[k] * c2;
            w[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
