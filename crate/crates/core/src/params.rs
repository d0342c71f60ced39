use crate::error::{Error, Result};
use crate::tensor::{Element, ParamId, Tape, Tensor};

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Owns every parameter of a network, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Element> {
    params: Vec<Parameter<T>>,
    /// Set by [`ParamStore::accumulate_grads`], cleared by [`ParamStore::zero_grads`].
    has_grads: bool,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            has_grads: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count across all parameters.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
        self.has_grads = false;
    }

    /// Whether a backward pass has deposited gradients since the last zeroing.
    pub fn has_grads(&self) -> bool {
        self.has_grads
    }

    /// Add the parameter gradients computed by `tape.backward` into the stored grads.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) -> Result<()> {
        for (id, g) in tape.param_grads() {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter id {}", id.0)))?;
            p.grad.add_assign(g)?;
        }
        self.has_grads = true;
        Ok(())
    }
}
