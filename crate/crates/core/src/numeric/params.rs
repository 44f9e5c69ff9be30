use std::collections::HashMap;
use std::ops::Index;
use std::sync::Arc;

use rand::Rng;

use super::{Gradients, NumericError, Tape, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

struct Param {
    name: String,
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    trainable: bool,
}

/// Named model parameters with their accumulated gradients.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::clone(&p.value),
                    grad: p.grad.clone(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId, NumericError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericError::DuplicateParam(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: Arc::new(value),
            grad: None,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), NumericError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NumericError::Shape {
                op: "set_value",
                lhs: p.value.shape(),
                rhs: value.shape(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Records every parameter on `tape`; trainable ones track gradients.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf_shared(Arc::clone(&p.value), p.trainable))
                .collect(),
        }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf_shared(Arc::clone(&p.value), false))
                .collect(),
        }
    }

    /// Pulls the gradient of every trainable parameter out of `grads`.
    /// Parameters the loss never touched get zeros.
    pub fn collect_grads(&self, bound: &Bound<'_>, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                p.trainable.then(|| {
                    grads
                        .take(v)
                        .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()))
                })
            })
            .collect()
    }

    /// Adds `weight * g` into the stored gradient of each parameter.
    pub fn accumulate(&mut self, grads: &[Option<Tensor>], weight: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += weight * v;
                    }
                }
                slot @ None => {
                    let mut g = g.clone();
                    if weight != 1.0 {
                        g.scale_in_place(weight);
                    }
                    *slot = Some(g);
                }
            }
        }
    }
}

/// Parameters recorded on one tape, indexable by [`ParamId`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Uses explicit vars, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;

    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `rows × cols` matrix.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(rows, cols, data).expect("positive extents")
}
