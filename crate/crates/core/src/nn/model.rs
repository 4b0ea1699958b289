use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpTrace};
use super::param::{HasParams, Param};
use crate::error::{Error, Result};
use crate::tensor::{normalize_rows, normalize_rows_backward, Tensor};

/// Layer widths of the encoder / projection head / classifier split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: vec![64, 64],
            feature: 16,
            classes,
        }
    }

    fn encoder_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input];
        sizes.extend(&self.hidden);
        sizes.push(self.feature);
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Encoder features.
    Embed,
    /// Projection-head output, L2-normalized per row.
    Project,
    /// Classifier logits.
    Classify,
}

#[derive(Debug, Clone)]
pub struct Model {
    dims: ModelDims,
    pub encoder: Mlp,
    pub projector: Mlp,
    pub classifier: Mlp,
}

#[derive(Debug, Clone)]
pub struct ModelTrace {
    mode: ForwardMode,
    encoder: MlpTrace,
    head: Option<MlpTrace>,
    normalized: Option<(Tensor, Vec<f64>)>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let encoder = Mlp::new("encoder", &dims.encoder_sizes(), rng);
        let projector = Mlp::new("projector", &[dims.feature, dims.feature], rng);
        let classifier = Mlp::new("classifier", &[dims.feature, dims.classes], rng);
        Self {
            dims,
            encoder,
            projector,
            classifier,
        }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            encoder: Mlp::zeros("encoder", &dims.encoder_sizes()),
            projector: Mlp::zeros("projector", &[dims.feature, dims.feature]),
            classifier: Mlp::zeros("classifier", &[dims.feature, dims.classes]),
            dims,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    /// Replaces the classifier head with a freshly initialized one.
    pub fn reset_classifier<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.classifier = Mlp::new("classifier", &[self.dims.feature, self.dims.classes], rng);
    }

    pub fn forward(&self, batch: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        let features = self.encoder.forward(batch)?;
        match mode {
            ForwardMode::Embed => Ok(features),
            ForwardMode::Project => {
                let (z, _) = normalize_rows(&self.projector.forward(&features)?)
                    .map_err(|e| Error::Numeric(format!("projection normalization: {e}")))?;
                Ok(z)
            }
            ForwardMode::Classify => self.classifier.forward(&features),
        }
    }

    pub fn forward_traced(&self, batch: &Tensor, mode: ForwardMode) -> Result<(Tensor, ModelTrace)> {
        let (features, encoder) = self.encoder.forward_traced(batch)?;
        let (out, head, normalized) = match mode {
            ForwardMode::Embed => (features, None, None),
            ForwardMode::Project => {
                let (p, head) = self.projector.forward_traced(&features)?;
                let (z, norms) =
                    normalize_rows(&p).map_err(|e| Error::Numeric(format!("projection normalization: {e}")))?;
                (z.clone(), Some(head), Some((z, norms)))
            }
            ForwardMode::Classify => {
                let (logits, head) = self.classifier.forward_traced(&features)?;
                (logits, Some(head), None)
            }
        };
        Ok((
            out,
            ModelTrace {
                mode,
                encoder,
                head,
                normalized,
            },
        ))
    }

    /// Accumulates gradients for `grad = dL/d(output)` of a traced forward pass.
    pub fn backward(&mut self, trace: &ModelTrace, grad: &Tensor) -> Result<()> {
        let dfeatures = match trace.mode {
            ForwardMode::Embed => grad.clone(),
            ForwardMode::Project => {
                let (z, norms) = trace.normalized.as_ref().expect("project trace");
                let dp = normalize_rows_backward(z, norms, grad);
                self.projector
                    .backward(trace.head.as_ref().expect("project trace"), &dp)?
            }
            ForwardMode::Classify => self
                .classifier
                .backward(trace.head.as_ref().expect("classify trace"), grad)?,
        };
        self.encoder.backward(&trace.encoder, &dfeatures)?;
        Ok(())
    }

    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        self.encoder.params_set_mut().sgd_step(lr, momentum);
        self.projector.params_set_mut().sgd_step(lr, momentum);
        self.classifier.params_set_mut().sgd_step(lr, momentum);
    }

    /// Iterates all parameters in encoder, projector, classifier order.
    pub fn named_params(&self) -> impl Iterator<Item = &Param> {
        self.encoder
            .params()
            .iter()
            .chain(self.projector.params().iter())
            .chain(self.classifier.params().iter())
    }
}

impl HasParams for Model {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut all = self.encoder.params_mut();
        all.extend(self.projector.params_mut());
        all.extend(self.classifier.params_mut());
        all
    }
}
