//! Differentiation and optimization engine.
//!
//! Reverse-mode gradients with respect to the flat parameter vector,
//! forward-mode jets with respect to scalar query inputs, and an Adam stepper
//! for gradient baselines.

mod graph;
mod jet;

pub use graph::{Chan, Graph, NodeId};
pub use jet::{input_jet2, Jet2};

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("non-finite value produced by primitive `{op}`")]
    NonFinite { op: &'static str },
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("parameter segment (offset {offset}, len {len}) exceeds vector of {total}")]
    ParamOutOfRange { offset: usize, len: usize, total: usize },
    #[error("requested derivative channel missing in `{op}`")]
    MissingChannel { op: &'static str },
    #[error("backward requires a [1 x 1] output node")]
    NotScalar,
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid layout: {0}")]
    Layout(String),
}

/// One named contiguous slice of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Scale used for initialization and mutation steps.
    pub init_std: f64,
}

/// Ordered segment map covering the whole vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
    inverse_slot: Option<usize>,
}

impl Layout {
    /// Validates that segments are contiguous, non-overlapping and cover the
    /// vector exactly.
    pub fn new(segments: Vec<Segment>, inverse_slot: Option<usize>) -> Result<Self, DiffError> {
        let mut cursor = 0usize;
        for s in &segments {
            if s.offset != cursor {
                return Err(DiffError::Layout(format!(
                    "segment `{}` starts at {} but previous ends at {}",
                    s.name, s.offset, cursor
                )));
            }
            if s.len == 0 {
                return Err(DiffError::Layout(format!("segment `{}` is empty", s.name)));
            }
            cursor += s.len;
        }
        if let Some(slot) = inverse_slot {
            if slot >= cursor {
                return Err(DiffError::Layout(format!(
                    "inverse slot {slot} outside vector of {cursor}"
                )));
            }
        }
        Ok(Layout { segments, total: cursor, inverse_slot })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn inverse_slot(&self) -> Option<usize> {
        self.inverse_slot
    }
}

/// Flat vector of all trainable scalars plus its segment map.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self, DiffError> {
        if values.len() != layout.total() {
            return Err(DiffError::Length { expected: layout.total(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { op: "param_vector" });
        }
        Ok(ParamVector { values, layout })
    }

    /// Single anonymous segment covering `values`; convenient for tests and
    /// toy objectives.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Layout::new(
            vec![Segment { name: "flat".into(), offset: 0, len: values.len().max(1), init_std: 1.0 }],
            None,
        )
        .expect("single segment is always valid");
        let values = if values.is_empty() { vec![0.0] } else { values };
        ParamVector { values, layout: Arc::new(layout) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn inverse_value(&self) -> Option<f64> {
        self.layout.inverse_slot().map(|i| self.values[i])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// In-place Adam update; used by the training loops.
pub fn adam_step_inplace(
    state: &mut AdamState,
    params: &mut ParamVector,
    grad: &[f64],
) -> Result<(), DiffError> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(DiffError::Length { expected: params.len(), got: grad.len() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(DiffError::NonFinite { op: "adam_step" });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .values_mut()
        .iter_mut()
        .zip(grad.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// Functional Adam update returning the advanced `(state, params)` pair.
pub fn adam_step(
    mut state: AdamState,
    params: &ParamVector,
    grad: &[f64],
) -> Result<(AdamState, ParamVector), DiffError> {
    let mut p = params.clone();
    adam_step_inplace(&mut state, &mut p, grad)?;
    Ok((state, p))
}

/// Exact reverse-mode gradient of a scalar loss assembled on a [`Graph`].
///
/// The closure receives the bound tape and returns the `[1 x 1]` output node;
/// composition from anything other than the registered primitives is a
/// construction-time type error.
pub fn grad_params<F>(loss_evaluator: F, at: &ParamVector) -> Result<Vec<f64>, DiffError>
where
    F: FnOnce(&mut Graph) -> Result<NodeId, DiffError>,
{
    let mut g = Graph::new(at);
    let out = loss_evaluator(&mut g)?;
    g.backward(out)
}

/// Evaluates the scalar value of a graph-built loss without the gradient.
pub fn eval_scalar<F>(loss_evaluator: F, at: &ParamVector) -> Result<f64, DiffError>
where
    F: FnOnce(&mut Graph) -> Result<NodeId, DiffError>,
{
    let mut g = Graph::new(at);
    let out = loss_evaluator(&mut g)?;
    let v = g.value(out);
    if v.dim() != (1, 1) {
        return Err(DiffError::NotScalar);
    }
    Ok(v[(0, 0)])
}
