//! Minimal dense numeric layer with reverse-mode automatic differentiation.
//!
//! Tensors are immutable value holders linked into a dynamic computation
//! graph; [`backward`] walks the tape and deposits gradients into the
//! `requires_grad` leaves. A central finite-difference oracle
//! ([`finite_diff`]) is part of the public surface so every analytic
//! gradient can be checked against it.

mod checkpoint;
mod ops;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use ops::*;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("softmax row {row} has no allowed positions")]
    MaskAllForbidden { row: usize },
    #[error("backward requires a scalar loss, got {elements} elements")]
    NotScalar { elements: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

/// Element precision. Data is always stored as `f64`; in `F32` mode every
/// op output is rounded through `f32`, emulating single-precision training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DType {
    F64,
    F32,
}

impl Default for DType {
    fn default() -> Self {
        DType::F64
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Per-parent gradient contributions returned by an op's backward rule.
/// `None` marks a parent that does not receive a gradient from this op.
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &Inner) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    pub(crate) parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense row-major tensor participating in the autodiff tape.
///
/// Cloning is cheap (shared `Arc`); data is immutable after construction and
/// only the gradient slot mutates, so tensors can be shared across threads.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("dtype", &self.inner.dtype)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_finite(data: &[f64], op: &'static str) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "non-finite value produced by {op}"
    );
}

impl Tensor {
    fn new_leaf(shape: Vec<usize>, data: Vec<f64>, dtype: DType, requires_grad: bool) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must match shape"
        );
        let data = match dtype {
            DType::F64 => data,
            DType::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                dtype,
                data,
                requires_grad,
                grad: Mutex::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Constant leaf (does not receive gradients).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new_leaf(shape.to_vec(), data, DType::F64, false)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new_leaf(shape.to_vec(), data, DType::F64, true)
    }

    pub fn param_with_dtype(shape: &[usize], data: Vec<f64>, dtype: DType) -> Tensor {
        Tensor::new_leaf(shape.to_vec(), data, dtype, true)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new_leaf(vec![], vec![v], DType::F64, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; shape.iter().product()])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
        op: &'static str,
    ) -> Tensor {
        check_finite(&data, op);
        let dtype = if parents.iter().any(|p| p.inner.dtype == DType::F32) {
            DType::F32
        } else {
            DType::F64
        };
        let data = match dtype {
            DType::F64 => data,
            DType::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                dtype,
                data,
                requires_grad,
                grad: Mutex::new(None),
                parents,
                backward: Some(backward),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on non-scalar");
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.parents.is_empty()
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    /// Current accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }
}

/// Gradients keyed by leaf tensor id; produced by [`backward_collect`].
pub type GradMap = HashMap<u64, Vec<f64>>;

fn topo_order(loss: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = Vec::new();
    visited.insert(loss.id());
    stack.push((loss.clone(), 0));
    while let Some((node, child)) = stack.pop() {
        if child < node.inner.parents.len() {
            stack.push((node.clone(), child + 1));
            let p = &node.inner.parents[child];
            if p.inner.requires_grad && !visited.contains(&p.id()) {
                visited.insert(p.id());
                stack.push((p.clone(), 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

fn run_backward(loss: &Tensor) -> Result<(Vec<Tensor>, GradMap)> {
    if loss.len() != 1 {
        return Err(NumError::NotScalar {
            elements: loss.len(),
        });
    }
    let order = topo_order(loss);
    let mut grads: GradMap = HashMap::new();
    grads.insert(loss.id(), vec![1.0]);
    // Post-order puts ancestors first; walk it in reverse so each node's
    // gradient is complete before being pushed to its parents.
    for node in order.iter().rev() {
        let Some(gout) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let Some(back) = node.inner.backward.as_ref() else {
            continue;
        };
        let contributions = back(&gout, &node.inner);
        debug_assert_eq!(contributions.len(), node.inner.parents.len());
        for (parent, contrib) in node.inner.parents.iter().zip(contributions) {
            if !parent.inner.requires_grad {
                continue;
            }
            if let Some(c) = contrib {
                debug_assert_eq!(c.len(), parent.len());
                match grads.get_mut(&parent.id()) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&c) {
                            *a += b;
                        }
                    }
                    None => {
                        grads.insert(parent.id(), c);
                    }
                }
            }
        }
    }
    Ok((order, grads))
}

/// Reverse-mode pass: deposits `d loss / d leaf` into every reachable
/// `requires_grad` leaf. Gradients accumulate across repeated calls until
/// [`Tensor::zero_grad`] clears them.
pub fn backward(loss: &Tensor) -> Result<()> {
    let (order, grads) = run_backward(loss)?;
    for node in &order {
        if node.is_leaf() && node.requires_grad() {
            if let Some(g) = grads.get(&node.id()) {
                node.accumulate_grad(g);
            }
        }
    }
    Ok(())
}

/// Like [`backward`] but returns leaf gradients keyed by tensor id instead
/// of mutating the leaves. Used for deterministic multi-threaded reduction:
/// each worker collects its own map and the caller folds them in a fixed
/// order.
pub fn backward_collect(loss: &Tensor) -> Result<GradMap> {
    let (order, mut grads) = run_backward(loss)?;
    let leaf_ids: HashSet<u64> = order
        .iter()
        .filter(|n| n.is_leaf() && n.requires_grad())
        .map(|n| n.id())
        .collect();
    grads.retain(|id, _| leaf_ids.contains(id));
    Ok(grads)
}

/// Central finite differences: `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`
/// per coordinate. The returned tensor is a constant leaf.
pub fn finite_diff<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        let fp = f(&Tensor::new_leaf(
            x.shape().to_vec(),
            plus,
            x.dtype(),
            x.requires_grad(),
        ))?;
        let fm = f(&Tensor::new_leaf(
            x.shape().to_vec(),
            minus,
            x.dtype(),
            x.requires_grad(),
        ))?;
        if fp.len() != 1 || fm.len() != 1 {
            return Err(NumError::NotScalar { elements: fp.len() });
        }
        out[i] = (fp.item() - fm.item()) / (2.0 * eps);
    }
    Ok(Tensor::from_vec(x.shape(), out))
}

/// Named trainable tensor.
#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered parameter registry with unique names. Iteration order is the
/// registration order, which makes checkpoints and optimizer state
/// deterministic.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            tensor.requires_grad() && tensor.is_leaf(),
            "parameters must be requires_grad leaves"
        );
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name: {name}"
        );
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id.0);
        self.params.push(Parameter { name, tensor });
        id
    }

    pub fn get(&self, id: ParamId) -> Tensor {
        self.params[id.0].tensor.clone()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Replace a parameter's tensor (optimizer step). The name is stable.
    pub fn replace(&mut self, id: ParamId, tensor: Tensor) {
        assert_eq!(tensor.shape(), self.params[id.0].tensor.shape());
        self.params[id.0].tensor = tensor;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar elements across all parameters.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }
}
