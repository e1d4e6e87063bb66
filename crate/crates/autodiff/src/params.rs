use rand::Rng;

use crate::error::{AdError, Result};
use crate::scalar::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Copies every parameter into another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces values by name. Every stored parameter must be present with
    /// a matching shape.
    pub fn load_named(&mut self, records: &[(String, Tensor<T>)]) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = records
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| AdError::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(AdError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Tape handles for each parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps existing tape variables, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collects parameter gradients; parameters that did not influence the
    /// loss receive zeros.
    pub fn gradients<T: Real>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> ParamGrads<T> {
        ParamGrads {
            grads: self
                .vars
                .iter()
                .map(|&v| Some(grads.get_or_zero(tape, v)))
                .collect(),
        }
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .tensors
                .iter()
                .map(|t| Some(Tensor::zeros(t.rows(), t.cols())))
                .collect(),
        }
    }

    pub fn from_options(grads: Vec<Option<Tensor<T>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine, theirs) {
                (Some(m), Some(t)) => {
                    for (a, &b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                (slot @ None, Some(t)) => *slot = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform fan-in scaling for layers followed by a rectifier.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    rows: usize,
    cols: usize,
) -> Tensor<T> {
    uniform(rng, (6.0 / fan_in.max(1) as f64).sqrt(), rows, cols)
}

/// Uniform fan-average scaling for linear output heads.
pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
    rows: usize,
    cols: usize,
) -> Tensor<T> {
    uniform(
        rng,
        (6.0 / (fan_in + fan_out).max(1) as f64).sqrt(),
        rows,
        cols,
    )
}

fn uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bound: f64,
    rows: usize,
    cols: usize,
) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(rows, cols, data).expect("sized buffer")
}
