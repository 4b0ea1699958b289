use rand::Rng;

use super::param::{HasParams, Param, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected network with ReLU between layers and a linear output.
///
/// Layer `i` owns `{prefix}.{i}.weight` (`in × out`) and `{prefix}.{i}.bias`.
#[derive(Debug, Clone)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
    params: ParamSet,
}

/// Per-layer inputs recorded by [`Mlp::forward_traced`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Tensor>,
}

impl Mlp {
    /// Scaled-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(prefix: &str, sizes: &[usize], rng: &mut R) -> Self {
        Self::build(prefix, sizes, |fan_in, fan_out, n| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        })
    }

    pub fn zeros(prefix: &str, sizes: &[usize]) -> Self {
        Self::build(prefix, sizes, |_, _, n| vec![0.0; n])
    }

    fn build(prefix: &str, sizes: &[usize], mut weights: impl FnMut(usize, usize, usize) -> Vec<f64>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let mut params = ParamSet::new();
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight =
                Tensor::matrix(fan_in, fan_out, weights(fan_in, fan_out, fan_in * fan_out)).expect("sizes match");
            params
                .insert(format!("{prefix}.{i}.weight"), weight)
                .expect("unique layer names");
            params
                .insert(format!("{prefix}.{i}.bias"), Tensor::zeros(&[fan_out]))
                .expect("unique layer names");
        }
        Self {
            prefix: prefix.to_string(),
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_set_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params.by_index(2 * layer).value
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params.by_index_mut(2 * layer).value
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.params.by_index(2 * layer + 1).value
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params.by_index_mut(2 * layer + 1).value
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, None)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, MlpTrace)> {
        let mut inputs = Vec::with_capacity(self.num_layers());
        let out = self.run(x, Some(&mut inputs))?;
        Ok((out, MlpTrace { inputs }))
    }

    fn run(&self, x: &Tensor, mut trace: Option<&mut Vec<Tensor>>) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{}: input has {} columns, expected {}",
                self.prefix,
                x.cols(),
                self.input_dim()
            )));
        }
        let mut h = if x.shape().len() == 2 {
            x.clone()
        } else {
            Tensor::matrix(x.rows(), x.cols(), x.data().to_vec())?
        };
        for layer in 0..self.num_layers() {
            if let Some(t) = trace.as_deref_mut() {
                t.push(h.clone());
            }
            let mut z = h.matmul(self.weight(layer))?;
            z.add_row_vector(self.bias(layer).data())?;
            if layer + 1 < self.num_layers() {
                z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        h.ensure_finite(&format!("{} forward", self.prefix))?;
        Ok(h)
    }

    /// Accumulates parameter gradients for `dout` and returns `dL/dx`.
    pub fn backward(&mut self, trace: &MlpTrace, dout: &Tensor) -> Result<Tensor> {
        let mut grad = dout.clone();
        for layer in (0..self.num_layers()).rev() {
            let input = &trace.inputs[layer];
            let dw = input.t_matmul(&grad)?;
            let db = grad.sum_rows();
            self.params.by_index_mut(2 * layer).grad.axpy(1.0, &dw)?;
            let b = &mut self.params.by_index_mut(2 * layer + 1).grad;
            for (g, d) in b.data_mut().iter_mut().zip(&db) {
                *g += d;
            }
            let mut dx = grad.matmul_t(self.weight(layer))?;
            if layer > 0 {
                // ReLU: inputs to this layer are post-activation values.
                for (d, &a) in dx.data_mut().iter_mut().zip(input.data()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            grad = dx;
        }
        Ok(grad)
    }
}

impl HasParams for Mlp {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros("m", &[3, 4, 2]);
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert!(mlp.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_affine_layer() {
        let mut mlp = Mlp::zeros("m", &[2, 2]);
        *mlp.weight_mut(0) = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = mlp.forward(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_layer_against_hand_product() {
        // Row-vector convention: y = x·W + b, so W is stored transposed
        // relative to the column form [[1,2],[3,4]]·x.
        let mut mlp = Mlp::zeros("m", &[2, 2]);
        *mlp.weight_mut(0) = Tensor::matrix(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        *mlp.bias_mut(0) = Tensor::vector(vec![1.0, 0.0]);
        let y = mlp.forward(&Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        let column_form = [1.0 * 1.0 + 2.0 * 1.0 + 1.0, 3.0 * 1.0 + 4.0 * 1.0];
        assert_eq!(y.data(), &column_form);
        assert_eq!(y.data(), &[4.0, 7.0]);
    }

    #[test]
    fn rejects_wrong_width() {
        let mlp = Mlp::zeros("m", &[3, 2]);
        let err = mlp.forward(&Tensor::zeros(&[4, 2])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mlp = Mlp::new("m", &[6, 10], &mut seeded(1));
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(mlp.weight(0).data().iter().all(|w| w.abs() <= limit));
        assert!(mlp.bias(0).data().iter().all(|&b| b == 0.0));
    }
}
