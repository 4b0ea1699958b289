use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named parameter with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            velocity,
        }
    }
}

/// Anything that owns trainable parameters.
pub trait HasParams {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_index(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Momentum SGD: `v ← μ·v + g`, `θ ← θ − η·v`.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        for p in &mut self.params {
            let v = p.velocity.data_mut();
            for (vi, gi) in v.iter_mut().zip(p.grad.data()) {
                *vi = momentum * *vi + gi;
            }
            for (w, vi) in p.value.data_mut().iter_mut().zip(p.velocity.data()) {
                *w -= lr * vi;
            }
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.is_finite())
    }
}

impl HasParams for ParamSet {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(vec![value])).unwrap();
        ps.by_index_mut(0).grad = Tensor::vector(vec![grad]);
        ps
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        for momentum in [0.0, 0.5, 0.9, 0.99] {
            let mut ps = single(1.25, 3.0);
            ps.sgd_step(0.0, momentum);
            assert_eq!(ps.by_index(0).value.data(), &[1.25]);
        }
    }

    #[test]
    fn plain_step() {
        let mut ps = single(1.0, 2.0);
        ps.sgd_step(0.1, 0.0);
        assert!((ps.by_index(0).value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_momentum_steps() {
        // v1 = 1, θ1 = -0.1; v2 = 0.9 + 1 = 1.9, θ2 = -0.1 - 0.19 = -0.29
        let mut ps = single(0.0, 1.0);
        ps.sgd_step(0.1, 0.9);
        ps.sgd_step(0.1, 0.9);
        assert!((ps.by_index(0).value.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn names_are_unique() {
        let mut ps = ParamSet::new();
        ps.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(ps.insert("a", Tensor::zeros(&[3])).is_err());
    }
}
