//! Text checkpoints: a header, `tag` lines, then one `param` record per tensor.
//!
//! ```text
//! fewlabel-checkpoint 1
//! tag pretrain.temperature 0.5
//! param encoder.0.weight 32x64
//! 1.2345678901234567e-1 ...
//! ```
//!
//! Values use 17 significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::model::Model;
use super::param::Param;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "fewlabel-checkpoint 1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tags: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        Self {
            tags: Vec::new(),
            params: params.into_iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn from_model(model: &Model) -> Self {
        Self::from_params(model.named_params())
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.push((key.into(), value.into()));
        self
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.tags {
            let _ = writeln!(out, "tag {k} {v}");
        }
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "param {name} {}", dims.join("x"));
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Parse("missing checkpoint header".into()));
        }
        let mut ck = Checkpoint::default();
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("tag ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.tags.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("param ") {
                let (name, dims) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Parse(format!("bad param line: {line}")))?;
                let shape = if dims.is_empty() {
                    Vec::new()
                } else {
                    dims.split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Parse(format!("shape of {name}: {e}")))?
                };
                let values = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("values of {name} missing")))?;
                let data = values
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse(format!("values of {name}: {e}")))?;
                ck.params.push((name.to_string(), Tensor::new(shape, data)?));
            } else {
                return Err(Error::Parse(format!("unexpected line: {line}")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Copies every stored tensor into the model parameter of the same name.
    /// Parameters missing from the checkpoint are left untouched.
    pub fn apply_to(&self, model: &mut Model) -> Result<usize> {
        use super::param::HasParams;
        let mut params = model.params_mut();
        for (name, t) in &self.params {
            let p = params
                .iter_mut()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))?;
            if p.value.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(self.params.len())
    }
}
